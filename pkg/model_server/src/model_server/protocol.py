"""Newline-delimited JSON serving loop over stdio or TCP.

    server -> {"type": "hello", "spec": {"input": [H, W, C], "n_classes": int,
               "output_semantics": "probabilities", "identity": str}}
    client -> {"type": "predict", "id": int, "n": int,
               "space": "unit_0_1" | "normalized_zero_mean",
               "data": base64 of little-endian float32, row-major (N, H, W, C)}
    server -> {"type": "scores", "id": int, "n": int, "data": base64 float32}
    server -> {"type": "error", "message": str}

One JSON document per line, UTF-8. Requests are answered strictly in arrival
order; a malformed request gets an error reply and the session continues.
Payloads sent as unit_0_1 are normalized with the bundle's mean/std before
the forward pass; normalized_zero_mean payloads pass through untouched.
Outputs are softmax probabilities either way.
"""

from __future__ import annotations

import base64
import binascii
import json
import socket
import sys

import numpy as np
import torch

from .registry import ServingBundle

FORWARD_CHUNK = 64
SPACES = ("unit_0_1", "normalized_zero_mean")


class RequestError(Exception):
    """Bad request; reported to the client, session continues."""


def hello_line(bundle: ServingBundle) -> str:
    spec = {
        "input": list(bundle.input),
        "n_classes": bundle.n_classes,
        "output_semantics": "probabilities",
        "identity": bundle.identity,
    }
    return json.dumps({"type": "hello", "spec": spec})


def _error_line(message: str) -> str:
    return json.dumps({"type": "error", "message": message})


def _decode_request(msg: dict, bundle: ServingBundle) -> tuple[int, np.ndarray, str]:
    request_id = msg.get("id")
    if not isinstance(request_id, int):
        raise RequestError(f"predict needs an integer id, got {request_id!r}")
    n = msg.get("n")
    if not isinstance(n, int) or n < 0:
        raise RequestError(f"predict needs an integer n >= 0, got {n!r}")
    space = msg.get("space")
    if space not in SPACES:
        raise RequestError(f"unsupported space {space!r}; expected one of {list(SPACES)}")
    data = msg.get("data")
    if not isinstance(data, str):
        raise RequestError("predict needs a base64 string in 'data'")
    try:
        raw = base64.b64decode(data.encode("ascii"), validate=True)
    except (binascii.Error, UnicodeEncodeError) as exc:
        raise RequestError(f"data is not valid base64: {exc}") from exc
    h, w, c = bundle.input
    flat = np.frombuffer(raw, dtype="<f4")
    if flat.size != n * h * w * c:
        raise RequestError(
            f"payload holds {flat.size} values, expected {n * h * w * c} "
            f"for {n} images of {h}x{w}x{c}"
        )
    return request_id, flat.reshape(n, h, w, c).copy(), space


def predict_scores(bundle: ServingBundle, images: np.ndarray, space: str) -> np.ndarray:
    """Forward pass in chunks; (n, n_classes) float32 probabilities."""
    if images.shape[0] == 0:
        return np.zeros((0, bundle.n_classes), dtype=np.float32)
    if space == "unit_0_1":
        images = (images - bundle.mean) / bundle.std
    x = torch.from_numpy(np.ascontiguousarray(images, dtype=np.float32)).permute(0, 3, 1, 2)
    outputs = []
    with torch.no_grad():
        for start in range(0, x.shape[0], FORWARD_CHUNK):
            logits = bundle.model(x[start:start + FORWARD_CHUNK].contiguous())
            outputs.append(torch.softmax(logits, dim=1))
    return torch.cat(outputs).numpy().astype("<f4")


def _reply_for(bundle: ServingBundle, line: bytes) -> str:
    try:
        msg = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        return _error_line(f"request is not valid JSON: {exc}")
    if not isinstance(msg, dict) or msg.get("type") != "predict":
        kind = msg.get("type") if isinstance(msg, dict) else msg
        return _error_line(f"unsupported message {kind!r}; this server only answers predict")
    try:
        request_id, images, space = _decode_request(msg, bundle)
    except RequestError as exc:
        return _error_line(str(exc))
    scores = predict_scores(bundle, images, space)
    data = base64.b64encode(scores.tobytes()).decode("ascii")
    return json.dumps({"type": "scores", "id": request_id, "n": images.shape[0], "data": data})


def run_session(bundle: ServingBundle, rfile, wfile) -> None:
    """Serve one client on a pair of binary line streams until EOF."""
    wfile.write((hello_line(bundle) + "\n").encode("utf-8"))
    wfile.flush()
    for line in rfile:
        if not line.strip():
            continue
        try:
            wfile.write((_reply_for(bundle, line) + "\n").encode("utf-8"))
            wfile.flush()
        except (BrokenPipeError, ConnectionResetError):
            return


def serve_stdio(bundle: ServingBundle) -> int:
    run_session(bundle, sys.stdin.buffer, sys.stdout.buffer)
    return 0


def serve_tcp(bundle: ServingBundle, port: int) -> int:
    """Accept connections on 127.0.0.1, one session at a time; port 0 picks a free one."""
    with socket.create_server(("127.0.0.1", port)) as server:
        actual = server.getsockname()[1]
        print(f"listening on 127.0.0.1:{actual}", file=sys.stderr, flush=True)
        while True:
            conn, _ = server.accept()
            with conn, conn.makefile("rb") as rfile, conn.makefile("wb") as wfile:
                try:
                    run_session(bundle, rfile, wfile)
                except (ConnectionResetError, OSError):
                    continue
    return 0
