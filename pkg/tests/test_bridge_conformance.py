"""Engine-through-bridge conformance against the in-process oracle.

Needs the TypeScript bridge built (`npm install && npm run build` inside
bridge/); the whole module skips cleanly when the build output is absent, so
the rest of the suite never depends on it.
"""

import os
import shutil
import subprocess

import numpy as np
import pytest

from dus_sched.bridge_client import BridgeDenoiser, StdioTransport, connect
from dus_sched.engine import run_generation
from dus_sched.errors import DenoiserProtocolError
from dus_sched.planners import make_planner
from dus_sched.schedule import DusParams
from dus_sched.vlmc import OracleDenoiser, VlmcModel, random_model

BRIDGE_CLI = os.path.join(os.path.dirname(__file__), "..", "bridge", "dist", "cli.js")

pytestmark = pytest.mark.skipif(
    not (os.path.exists(BRIDGE_CLI) and shutil.which("node")),
    reason="TypeScript bridge not built",
)

CONFIGS = [
    # (planner spec, B, G, kwargs)
    ("dus", 8, 16, {}),
    ("dus+spacing:g0=4", 8, 16, {}),
    ("conf-fixed", 8, 16, {"k": 2}),
    ("cb", 4, 12, {"tau": 0.6}),
    ("eb", 8, 8, {"gamma": 0.7}),
]


@pytest.fixture(scope="module")
def models(tmp_path_factory):
    root = tmp_path_factory.mktemp("bridge_models")
    flip = root / "flip.json"
    VlmcModel(2, 1, np.array([[0.8, 0.2], [0.3, 0.7]])).save(str(flip))
    tri = root / "tri.json"
    random_model(np.random.default_rng(42), 3, 2).save(str(tri))
    return {"flip": str(flip), "tri": str(tri)}


def run_pair(model_path, spec, b, g, **kwargs):
    model = VlmcModel.load(model_path)
    echo = {"a": 2.0, "spec": spec, "run_id": "conformance"}

    oracle = OracleDenoiser(model)
    planner = make_planner(spec, dus=DusParams(b, 2), **kwargs)
    local = run_generation(oracle, planner, [0], g, b, vocab=oracle.vocab,
                           greedy=True, params_echo=dict(echo))

    bridge = BridgeDenoiser(StdioTransport(["node", BRIDGE_CLI, model_path, "--stdio"]))
    planner2 = make_planner(spec, dus=DusParams(b, 2), **kwargs)
    remote = run_generation(bridge, planner2, [0], g, b, vocab=bridge.vocab,
                            greedy=True, params_echo=dict(echo))
    bridge.close()
    return local, remote


@pytest.mark.parametrize("spec,b,g,kwargs", CONFIGS)
def test_trace_byte_equality(models, spec, b, g, kwargs):
    local, remote = run_pair(models["flip"], spec, b, g, **kwargs)
    assert remote.sequence.cells == local.sequence.cells
    assert remote.trace.dumps() == local.trace.dumps()


def test_trace_byte_equality_order2_alphabet3(models):
    local, remote = run_pair(models["tri"], "dus", 9, 18)
    assert remote.trace.dumps() == local.trace.dumps()


def test_unmasked_position_request_gets_error_line(models):
    bridge = BridgeDenoiser(StdioTransport(["node", BRIDGE_CLI, models["flip"], "--stdio"]))
    bridge.transport.send_line(
        '{"id": 1, "tokens": [0, null], "block": [0, 2], "positions": [0]}'
    )
    import json

    reply = json.loads(bridge.transport.recv_line())
    assert reply["id"] == 1
    assert "error" in reply
    bridge.close()


def test_malformed_line_to_server_closes_session(models):
    bridge = BridgeDenoiser(StdioTransport(["node", BRIDGE_CLI, models["flip"], "--stdio"]))
    bridge.transport.send_line("not json at all")
    with pytest.raises(DenoiserProtocolError):
        # the engine treats the server's error line as a protocol failure
        bridge(_FakeSeq(), _FakeBlock())
    bridge.close()


class _FakeSeq:
    cells = (None, None)


class _FakeBlock:
    start = 0
    length = 2

    def positions(self):
        return range(2)


def test_cli_decode_through_bridge(models, tmp_path, capsys):
    from dus_sched.cli import main

    trace_a = str(tmp_path / "bridge.ndjson")
    trace_b = str(tmp_path / "oracle.ndjson")
    cmd = f"node {BRIDGE_CLI} {models['flip']} --stdio"
    rc = main(["decode", "--planner", "dus", "--B", "8", "--G", "16", "--greedy",
               "--bridge", cmd, "--trace-out", trace_a])
    assert rc == 0
    rc = main(["decode", "--planner", "dus", "--B", "8", "--G", "16", "--greedy",
               "--model", models["flip"], "--trace-out", trace_b])
    assert rc == 0
    capsys.readouterr()
    a = open(trace_a).read().replace('"model": "bridge"', "")
    b = open(trace_b).read().replace(f'"model": "{models["flip"]}"', "")
    assert a == b


def test_tcp_mode_conformance(models):
    proc = subprocess.Popen(
        ["node", BRIDGE_CLI, models["flip"], "--port", "0"],
        stderr=subprocess.PIPE, text=True,
    )
    try:
        line = proc.stderr.readline()
        port = int(line.strip().rsplit(":", 1)[1])
        bridge = connect(f"127.0.0.1:{port}")
        planner = make_planner("dus", dus=DusParams(8, 2))
        remote = run_generation(bridge, planner, [0], 8, 8, vocab=bridge.vocab,
                                greedy=True, params_echo={"a": 2.0, "run_id": "tcp"})
        bridge.close()

        model = VlmcModel.load(models["flip"])
        oracle = OracleDenoiser(model)
        local = run_generation(oracle, make_planner("dus", dus=DusParams(8, 2)),
                               [0], 8, 8, vocab=oracle.vocab, greedy=True,
                               params_echo={"a": 2.0, "run_id": "tcp"})
        assert remote.trace.dumps() == local.trace.dumps()
    finally:
        proc.terminate()
        proc.wait(timeout=10)
