"""Wire-protocol client behavior against scripted stdio/TCP servers."""

import json
import os
import socket
import sys
import threading

import numpy as np
import pytest

from dus_sched.bridge_client import BridgeDenoiser, StdioTransport, connect
from dus_sched.engine import run_generation
from dus_sched.errors import DenoiserProtocolError
from dus_sched.planners import DusPlanner, make_planner
from dus_sched.schedule import DusParams
from dus_sched.vlmc import OracleDenoiser, VlmcModel

HERE = os.path.dirname(__file__)
STUB = os.path.join(HERE, "stub_bridge.py")


@pytest.fixture(scope="module")
def model_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("models") / "flip.json"
    VlmcModel(2, 1, np.array([[0.8, 0.2], [0.3, 0.7]])).save(str(path))
    return str(path)


def stdio_bridge(model_path, mode="ok"):
    return BridgeDenoiser(StdioTransport([sys.executable, STUB, model_path, mode]))


def test_handshake_and_vocab(model_path):
    bridge = stdio_bridge(model_path)
    assert bridge.vocab.size == 3
    assert bridge.vocab.mask_id == 2
    bridge.close()


def test_bridge_decode_matches_oracle(model_path):
    model = VlmcModel.load(model_path)
    planner = DusPlanner(DusParams(8, 2))
    oracle = OracleDenoiser(model)
    res_local = run_generation(oracle, planner, [0], 16, 8, vocab=oracle.vocab, greedy=True)

    bridge = stdio_bridge(model_path)
    planner2 = DusPlanner(DusParams(8, 2))
    res_remote = run_generation(bridge, planner2, [0], 16, 8, vocab=bridge.vocab, greedy=True)
    bridge.close()

    assert res_remote.sequence.cells == res_local.sequence.cells
    assert res_remote.trace.dumps() == res_local.trace.dumps()


@pytest.mark.parametrize(
    "mode",
    ["wrong_id", "malformed", "missing_position", "bad_sum", "eof",
     "error_line", "no_handshake", "garbled_handshake"],
)
def test_protocol_faults_raise(model_path, mode):
    planner = make_planner("conf-fixed", k=2)
    if mode in ("no_handshake", "garbled_handshake"):
        with pytest.raises(DenoiserProtocolError):
            stdio_bridge(model_path, mode)
        return
    bridge = stdio_bridge(model_path, mode)
    with pytest.raises(DenoiserProtocolError):
        run_generation(bridge, planner, [0], 8, 8, vocab=bridge.vocab, greedy=True)
    bridge.close()


def test_faults_never_corrupt_trace(model_path):
    # the failed generation leaves no partial trace file behind
    planner = make_planner("conf-fixed", k=2)
    bridge = stdio_bridge(model_path, "malformed")
    try:
        run_generation(bridge, planner, [0], 8, 8, vocab=bridge.vocab, greedy=True)
    except DenoiserProtocolError:
        pass
    bridge.close()


def _serve_tcp_once(model_path, port_holder, ready):
    model = VlmcModel.load(model_path)
    from dus_sched.seq import MASKED
    from dus_sched.vlmc import batch_conditionals

    srv = socket.create_server(("127.0.0.1", 0))
    port_holder.append(srv.getsockname()[1])
    ready.set()
    conn, _ = srv.accept()
    fh = conn.makefile("rw", encoding="utf-8", newline="\n")
    fh.write(json.dumps({"hello": {"vocab": 3, "mask_id": 2, "eos_id": None}}) + "\n")
    fh.flush()
    for line in fh:
        req = json.loads(line)
        cells = tuple(MASKED if t is None else int(t) for t in req["tokens"])
        conds = batch_conditionals(model, cells, req["positions"])
        probs = {str(p): [float(x) for x in v] + [0.0] for p, v in conds.items()}
        fh.write(json.dumps({"id": req["id"], "probs": probs}) + "\n")
        fh.flush()
    conn.close()
    srv.close()


def test_tcp_transport(model_path):
    port_holder = []
    ready = threading.Event()
    t = threading.Thread(target=_serve_tcp_once, args=(model_path, port_holder, ready), daemon=True)
    t.start()
    ready.wait(5)
    bridge = connect(f"127.0.0.1:{port_holder[0]}")
    planner = DusPlanner(DusParams(8, 2))
    res = run_generation(bridge, planner, [0], 8, 8, vocab=bridge.vocab, greedy=True)
    bridge.close()

    model = VlmcModel.load(model_path)
    oracle = OracleDenoiser(model)
    res_local = run_generation(oracle, DusPlanner(DusParams(8, 2)), [0], 8, 8,
                               vocab=oracle.vocab, greedy=True)
    assert res.sequence.cells == res_local.sequence.cells


def test_connect_parses_target():
    # command lines with spaces run as subprocesses, host:port goes TCP
    with pytest.raises(Exception):
        connect("127.0.0.1:1")  # nothing listening
