"""Client side of the external-denoiser wire protocol.

Newline-delimited JSON over a subprocess' stdio or a TCP stream.  The server
speaks first with a handshake line; after that the engine sends one request
per denoiser call and expects exactly one response echoing the request id.
Anything out of contract raises ``DenoiserProtocolError``; there are no
retries, a broken connection fails the generation.

    server hello: {"hello": {"vocab": K, "mask_id": M, "eos_id": E|null}}
    request:      {"id": n, "tokens": [int|null, ...], "block": [start, len],
                   "positions": [int, ...]}
    response:     {"id": n, "probs": {"<pos>": [p, ...]}}
"""

from __future__ import annotations

import json
import socket
import subprocess
from typing import Dict, Sequence

import numpy as np

from .errors import DenoiserProtocolError
from .seq import MASKED, BlockView, MaskedSequence, Vocab


class StdioTransport:
    """Runs the server as a child process and talks over its stdio."""

    def __init__(self, cmd: Sequence[str]):
        self.proc = subprocess.Popen(
            list(cmd),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )

    def send_line(self, line: str) -> None:
        assert self.proc.stdin is not None
        try:
            self.proc.stdin.write(line + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, ValueError) as exc:
            raise DenoiserProtocolError(f"bridge process closed stdin: {exc}") from exc

    def recv_line(self) -> str:
        assert self.proc.stdout is not None
        line = self.proc.stdout.readline()
        if line == "":
            raise DenoiserProtocolError("bridge process closed the stream")
        return line.rstrip("\n")

    def close(self) -> None:
        if self.proc.stdin:
            try:
                self.proc.stdin.close()
            except BrokenPipeError:
                pass
        self.proc.wait(timeout=10)


class TcpTransport:
    """Connects to a running server over TCP."""

    def __init__(self, host: str, port: int, timeout: float = 30.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self._reader = self.sock.makefile("r", encoding="utf-8", newline="\n")

    def send_line(self, line: str) -> None:
        try:
            self.sock.sendall((line + "\n").encode())
        except OSError as exc:
            raise DenoiserProtocolError(f"bridge connection lost: {exc}") from exc

    def recv_line(self) -> str:
        line = self._reader.readline()
        if line == "":
            raise DenoiserProtocolError("bridge connection closed")
        return line.rstrip("\n")

    def close(self) -> None:
        try:
            self._reader.close()
            self.sock.close()
        except OSError:
            pass


class BridgeDenoiser:
    """Denoiser contract fulfilled by an external server, one per generation."""

    def __init__(self, transport):
        self.transport = transport
        self._next_id = 1
        hello = self._read_json()
        spec = hello.get("hello") if isinstance(hello, dict) else None
        if not isinstance(spec, dict):
            raise DenoiserProtocolError(f"expected handshake, got {hello!r}")
        try:
            self.vocab = Vocab(
                size=int(spec["vocab"]),
                mask_id=int(spec["mask_id"]),
                eos_id=None if spec.get("eos_id") is None else int(spec["eos_id"]),
            )
        except Exception as exc:
            raise DenoiserProtocolError(f"bad handshake fields: {exc}") from exc

    def _read_json(self) -> dict:
        line = self.transport.recv_line()
        try:
            return json.loads(line)
        except json.JSONDecodeError as exc:
            raise DenoiserProtocolError(f"malformed bridge line: {line!r}") from exc

    def __call__(self, seq: MaskedSequence, block: BlockView) -> Dict[int, np.ndarray]:
        positions = [p for p in block.positions() if seq.cells[p] is MASKED]
        req_id = self._next_id
        self._next_id += 1
        request = {
            "id": req_id,
            "tokens": [None if c is MASKED else int(c) for c in seq.cells],
            "block": [block.start, block.length],
            "positions": positions,
        }
        self.transport.send_line(json.dumps(request, sort_keys=True))
        reply = self._read_json()
        if not isinstance(reply, dict):
            raise DenoiserProtocolError(f"bad response shape: {reply!r}")
        if "error" in reply:
            raise DenoiserProtocolError(f"bridge error: {reply['error']!r}")
        if reply.get("id") != req_id:
            raise DenoiserProtocolError(
                f"response id {reply.get('id')!r} does not match request id {req_id}"
            )
        probs = reply.get("probs")
        if not isinstance(probs, dict):
            raise DenoiserProtocolError("response lacks a probs object")
        if set(probs.keys()) != {str(p) for p in positions}:
            raise DenoiserProtocolError(
                f"response covers positions {sorted(probs)} instead of {positions}"
            )
        out: Dict[int, np.ndarray] = {}
        for p in positions:
            vec = np.asarray(probs[str(p)], dtype=np.float64)
            if vec.shape != (self.vocab.size,):
                raise DenoiserProtocolError(f"vector for {p} has shape {vec.shape}")
            if np.any(vec < 0) or abs(float(vec.sum()) - 1.0) > 1e-6:
                raise DenoiserProtocolError(f"vector for {p} is not a distribution")
            out[p] = vec
        return out

    def close(self) -> None:
        self.transport.close()


def connect(target: str) -> BridgeDenoiser:
    """``host:port`` connects over TCP, anything else runs as a command line."""
    host, sep, port = target.rpartition(":")
    if sep and port.isdigit() and "/" not in host and " " not in host:
        return BridgeDenoiser(TcpTransport(host or "127.0.0.1", int(port)))
    return BridgeDenoiser(StdioTransport(target.split()))
