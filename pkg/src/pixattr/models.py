"""Black-box predictor contract, synthetic oracle models, and the wire client.

A predictor is anything with a ``spec`` (PredictorSpec) and a
``predict_batch(images) -> (n, n_classes) array``. The synthetic additive
model exists so attribution math can be checked against analytically known
segment contributions; connect_external speaks the newline-delimited JSON
protocol to real model servers over TCP or a child process's stdio.

Wire protocol, client side:
  server -> {"type": "hello", "spec": {"input": [H, W, C], "n_classes": int,
             "output_semantics": "probabilities"|"logits", "identity": str}}
  client -> {"type": "predict", "id": int, "n": int, "space": str,
             "data": base64 of little-endian float32, row-major (N, H, W, C)}
  server -> {"type": "scores", "id": int, "data": base64 float32 (N, n_classes)}
  server -> {"type": "error", "message": str}   (any time, aborts the request)
One JSON document per line, UTF-8. Requests within a session are strictly
ordered; there is no pipelining.
"""

from __future__ import annotations

import json
import select
import shlex
import socket
import subprocess
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Union

import numpy as np

from .core import Image, SegmentMap, decode_tensor, encode_tensor

DEFAULT_BATCH_SIZE = 64
DEFAULT_TIMEOUT = 60.0


class OutputSemantics(str, Enum):
    PROBABILITIES = "probabilities"
    LOGITS = "logits"


@dataclass(frozen=True)
class PredictorSpec:
    """What a predictor accepts and returns."""

    input: tuple[int, int, int]  # (H, W, channels)
    n_classes: int
    output_semantics: OutputSemantics
    identity: str

    def __post_init__(self):
        object.__setattr__(self, "input", tuple(int(v) for v in self.input))
        object.__setattr__(self, "output_semantics", OutputSemantics(self.output_semantics))
        if len(self.input) != 3 or any(v < 1 for v in self.input):
            raise ValueError(f"input dims must be three positive values, got {self.input}")
        if self.n_classes < 1:
            raise ValueError(f"n_classes must be >= 1, got {self.n_classes}")


class ModelConnectionError(Exception):
    """Base for everything that can go wrong talking to an external model."""


class HandshakeError(ModelConnectionError):
    """The server's hello was missing, malformed, or incompatible."""


class ResponseTimeout(ModelConnectionError):
    """The server did not answer within the configured timeout."""


class MalformedResponse(ModelConnectionError):
    """The server answered with something the protocol does not allow."""


class TransportError(ModelConnectionError):
    """Connection-level failure; retrying on a fresh connection may succeed."""


class ServerError(ModelConnectionError):
    """The server answered with an explicit error message."""


def _check_batch_dims(images: Sequence[Image], spec: PredictorSpec) -> None:
    for i, img in enumerate(images):
        dims = (img.height, img.width, img.channels)
        if dims != spec.input:
            raise ValueError(
                f"image {i} has dims {dims}, predictor {spec.identity!r} expects {spec.input}"
            )


class AdditiveModel:
    """score(target) = sum_p coeff(p) * mean-over-channels(pixel p), other classes 0.

    Linear in every pixel, so the exact contribution of any pixel group is a
    plain dot product; attribution methods can be checked against truth.
    """

    def __init__(self, coeff_map: np.ndarray, target_class: int, n_classes: int,
                 channels: int = 1, identity: str = "additive"):
        coeff = np.asarray(coeff_map, dtype=np.float64)
        if coeff.ndim != 2:
            raise ValueError(f"coeff_map must be H x W, got shape {coeff.shape}")
        if not 0 <= target_class < n_classes:
            raise ValueError(f"target_class {target_class} outside [0, {n_classes})")
        self.coeff = coeff
        self.target_class = target_class
        self.spec = PredictorSpec(
            input=(coeff.shape[0], coeff.shape[1], channels),
            n_classes=n_classes,
            output_semantics=OutputSemantics.LOGITS,
            identity=identity,
        )

    def predict_batch(self, images: Sequence[Image]) -> np.ndarray:
        _check_batch_dims(images, self.spec)
        scores = np.zeros((len(images), self.spec.n_classes))
        for i, img in enumerate(images):
            scores[i, self.target_class] = float((self.coeff * img.data.mean(axis=2)).sum())
        return scores

    def segment_contributions(self, image: Image, segments: SegmentMap) -> np.ndarray:
        """Ground-truth additive contribution of each segment to the target score."""
        per_pixel = self.coeff * image.data.mean(axis=2)
        return np.bincount(
            segments.labels.ravel(), weights=per_pixel.ravel(), minlength=segments.n_segments
        )


def make_additive_model(coeff_map: np.ndarray, target_class: int, n_classes: int,
                        channels: int = 1, identity: str = "additive") -> AdditiveModel:
    return AdditiveModel(coeff_map, target_class, n_classes, channels, identity)


class _LineChannel:
    """One line-oriented duplex channel over a socket or a child's stdio."""

    def __init__(self, endpoint: Union[str, Sequence[str]], timeout: float):
        self.timeout = timeout
        self._proc: Optional[subprocess.Popen] = None
        self._sock: Optional[socket.socket] = None
        argv = self._as_argv(endpoint)
        if argv is None:
            host, _, port = endpoint.rpartition(":")
            try:
                self._sock = socket.create_connection((host, int(port)), timeout=timeout)
            except OSError as exc:
                raise TransportError(f"cannot connect to {endpoint}: {exc}") from exc
            self._sock.settimeout(timeout)
            self._reader = self._sock.makefile("rb")
        else:
            try:
                self._proc = subprocess.Popen(
                    argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE
                )
            except OSError as exc:
                raise TransportError(f"cannot spawn {argv!r}: {exc}") from exc
            self._reader = self._proc.stdout

    @staticmethod
    def _as_argv(endpoint: Union[str, Sequence[str]]) -> Optional[list[str]]:
        if not isinstance(endpoint, str):
            return [str(part) for part in endpoint]
        host, sep, port = endpoint.rpartition(":")
        if sep and host and " " not in endpoint and port.isdigit():
            return None
        return shlex.split(endpoint)

    def send_line(self, text: str) -> None:
        payload = (text + "\n").encode("utf-8")
        try:
            if self._sock is not None:
                self._sock.sendall(payload)
            else:
                self._proc.stdin.write(payload)
                self._proc.stdin.flush()
        except (OSError, ValueError, BrokenPipeError) as exc:
            raise TransportError(f"send failed: {exc}") from exc

    def recv_line(self) -> str:
        try:
            if self._proc is not None:
                ready, _, _ = select.select([self._reader], [], [], self.timeout)
                if not ready:
                    raise ResponseTimeout(f"no response within {self.timeout}s")
            line = self._reader.readline()
        except socket.timeout as exc:
            raise ResponseTimeout(f"no response within {self.timeout}s") from exc
        except OSError as exc:
            raise TransportError(f"receive failed: {exc}") from exc
        if not line:
            raise TransportError("connection closed by server")
        return line.decode("utf-8")

    def close(self) -> None:
        if self._sock is not None:
            self._reader.close()
            self._sock.close()
        if self._proc is not None:
            if self._proc.stdin:
                self._proc.stdin.close()
            self._proc.terminate()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()
            if self._proc.stdout:
                self._proc.stdout.close()


class ExternalPredictor:
    """Client session for one wire-protocol model server; not thread-safe.

    Batches larger than batch_size are split and re-joined transparently,
    preserving order.
    """

    def __init__(self, endpoint: Union[str, Sequence[str]],
                 batch_size: int = DEFAULT_BATCH_SIZE, timeout: float = DEFAULT_TIMEOUT):
        if batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {batch_size}")
        self.batch_size = batch_size
        self._channel = _LineChannel(endpoint, timeout)
        self._next_id = 0
        try:
            self.spec = self._handshake()
        except BaseException:
            self._channel.close()
            raise

    def _handshake(self) -> PredictorSpec:
        line = self._channel.recv_line()
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as exc:
            raise HandshakeError(f"hello is not valid JSON: {exc}") from exc
        if not isinstance(msg, dict) or msg.get("type") != "hello":
            raise HandshakeError(f"expected hello message, got {msg!r}")
        try:
            raw = msg["spec"]
            return PredictorSpec(
                input=tuple(raw["input"]),
                n_classes=raw["n_classes"],
                output_semantics=raw["output_semantics"],
                identity=raw["identity"],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise HandshakeError(f"hello carries an unusable spec: {exc}") from exc

    def _parse_scores(self, line: str, request_id: int, n: int) -> np.ndarray:
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedResponse(f"response is not valid JSON: {exc}") from exc
        if not isinstance(msg, dict):
            raise MalformedResponse(f"response is not an object: {msg!r}")
        if msg.get("type") == "error":
            raise ServerError(str(msg.get("message", "server reported an error")))
        if msg.get("type") != "scores" or msg.get("id") != request_id:
            raise MalformedResponse(
                f"expected scores for request {request_id}, got {msg.get('type')!r} "
                f"id {msg.get('id')!r}"
            )
        try:
            return decode_tensor(msg["data"], (n, self.spec.n_classes)).astype(np.float64)
        except (KeyError, ValueError) as exc:
            raise MalformedResponse(f"undecodable scores payload: {exc}") from exc

    def predict_batch(self, images: Sequence[Image]) -> np.ndarray:
        _check_batch_dims(images, self.spec)
        if not images:
            return np.zeros((0, self.spec.n_classes))
        spaces = {img.space for img in images}
        if len(spaces) > 1:
            raise ValueError(f"batch mixes color spaces: {sorted(s.value for s in spaces)}")
        chunks = []
        for start in range(0, len(images), self.batch_size):
            chunk = images[start:start + self.batch_size]
            request_id = self._next_id
            self._next_id += 1
            stacked = np.stack([img.data for img in chunk])
            self._channel.send_line(json.dumps({
                "type": "predict",
                "id": request_id,
                "n": len(chunk),
                "space": next(iter(spaces)).value,
                "data": encode_tensor(stacked),
            }))
            line = self._channel.recv_line()
            chunks.append(self._parse_scores(line, request_id, len(chunk)))
        return np.concatenate(chunks, axis=0)

    def close(self) -> None:
        self._channel.close()

    def __enter__(self) -> "ExternalPredictor":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


def connect_external(endpoint: Union[str, Sequence[str]],
                     batch_size: int = DEFAULT_BATCH_SIZE,
                     timeout: float = DEFAULT_TIMEOUT) -> ExternalPredictor:
    """Open a session with a model server.

    "host:port" strings connect over TCP; anything else (a command string or
    argv list) is spawned as a child process speaking the protocol on its
    standard streams.
    """
    return ExternalPredictor(endpoint, batch_size=batch_size, timeout=timeout)
