"""Hard-label query interface to the model under audit.

The deployed model is a black box: one audio clip in, one predicted
label out. Three transports cover the realistic deployment surfaces
(in-process toy models, a subprocess speaking newline-delimited JSON,
and an HTTP prediction endpoint), all constrained to hard labels at the
type level. Every query is counted, attributed to a probing phase, so
audits can state their exact budget.
"""

from __future__ import annotations

import base64
import json
import subprocess
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import requests

from .audio import AudioClip, wav_bytes

__all__ = [
    "Label",
    "OracleError",
    "TransportError",
    "ProtocolError",
    "InProcess",
    "SubprocessTransport",
    "HttpTransport",
    "OracleSpec",
    "QueryStats",
    "Oracle",
    "PHASES",
]

PHASES = ("base", "preserving", "breaking", "baseline")


@dataclass(frozen=True)
class Label:
    """Opaque predicted label; equality is exact text equality."""

    token: str

    def __post_init__(self) -> None:
        if not isinstance(self.token, str):
            raise TypeError(f"label token must be str, got {type(self.token).__name__}")


class OracleError(Exception):
    """Base class for oracle failures."""


class TransportError(OracleError):
    """The query never produced a usable response (process death,
    non-200 status, timeout). Never silently retried."""


class ProtocolError(OracleError):
    """The transport answered, but not in the agreed wire format."""


@dataclass(frozen=True)
class InProcess:
    """Toy-model transport: any pure callable from clip to label text."""

    model: Callable[[AudioClip], str]


@dataclass(frozen=True)
class SubprocessTransport:
    """Child process speaking newline-delimited JSON on stdin/stdout."""

    argv: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "argv", tuple(self.argv))
        if not self.argv:
            raise ValueError("argv must not be empty")


@dataclass(frozen=True)
class HttpTransport:
    """HTTP prediction endpoint: POST {base_url}/predict with WAV bytes."""

    base_url: str
    timeout_ms: int = 10_000

    def __post_init__(self) -> None:
        if self.timeout_ms <= 0:
            raise ValueError("timeout_ms must be positive")
        object.__setattr__(self, "base_url", self.base_url.rstrip("/"))


Transport = InProcess | SubprocessTransport | HttpTransport


@dataclass(frozen=True)
class OracleSpec:
    """How to reach the model, and whether inputs are peak-normalized
    first (the common server-side preprocessing for audio models)."""

    transport: Transport
    normalize_input: bool = True


class QueryStats:
    """Thread-safe per-phase query counter."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._counts = {phase: 0 for phase in PHASES}

    def record(self, phase: str, n: int = 1) -> None:
        if phase not in self._counts:
            raise ValueError(f"unknown phase {phase!r}; expected one of {PHASES}")
        with self._lock:
            self._counts[phase] += n

    @property
    def total_queries(self) -> int:
        with self._lock:
            return sum(self._counts.values())

    @property
    def per_phase(self) -> dict[str, int]:
        with self._lock:
            return dict(self._counts)

    def to_json(self) -> dict:
        counts = self.per_phase
        return {"total_queries": sum(counts.values()), "per_phase": counts}


def _peak_normalize(clip: AudioClip) -> AudioClip:
    peak = clip.peak()
    if peak == 0.0:
        return clip
    return clip.with_samples(clip.samples / peak)


class Oracle:
    """A query session: transport state plus exact query accounting.

    In-process oracles are reentrant; subprocess and HTTP transports
    serialize their wire traffic behind an internal lock.
    """

    def __init__(self, spec: OracleSpec) -> None:
        self.spec = spec
        self.stats = QueryStats()
        self._wire_lock = threading.Lock()
        self._proc: subprocess.Popen | None = None
        self._session: requests.Session | None = None
        self._next_id = 0

    @classmethod
    def in_process(cls, model: Callable[[AudioClip], str], normalize_input: bool = True) -> "Oracle":
        return cls(OracleSpec(InProcess(model), normalize_input))

    def close(self) -> None:
        if self._proc is not None:
            try:
                self._proc.stdin.close()
                self._proc.wait(timeout=5)
            except Exception:
                self._proc.kill()
            self._proc = None
        if self._session is not None:
            self._session.close()
            self._session = None

    def __enter__(self) -> "Oracle":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- public query surface -------------------------------------------------

    def predict(self, clip: AudioClip, phase: str = "base") -> Label:
        """Top-1 label for one clip; counts exactly one query."""
        prepared = _peak_normalize(clip) if self.spec.normalize_input else clip
        label = self._dispatch_one(prepared)
        self.stats.record(phase, 1)
        return label

    def predict_batch(self, clips: Sequence[AudioClip], phase: str = "base") -> list[Label]:
        """Order-preserving batch prediction; counts len(clips) queries.

        Equivalent to mapping predict; the subprocess transport pipelines
        the requests. Any failure fails the whole batch.
        """
        clips = list(clips)
        if not clips:
            return []
        prepared = [_peak_normalize(c) if self.spec.normalize_input else c for c in clips]
        transport = self.spec.transport
        if isinstance(transport, SubprocessTransport):
            labels = self._subprocess_roundtrip(prepared)
        else:
            labels = [self._dispatch_one(c) for c in prepared]
        self.stats.record(phase, len(clips))
        return labels

    # -- transport internals ---------------------------------------------------

    def _dispatch_one(self, clip: AudioClip) -> Label:
        transport = self.spec.transport
        if isinstance(transport, InProcess):
            token = transport.model(clip)
            if isinstance(token, Label):
                return token
            if not isinstance(token, str):
                raise ProtocolError(
                    f"in-process model returned {type(token).__name__}, expected label text"
                )
            return Label(token)
        if isinstance(transport, SubprocessTransport):
            return self._subprocess_roundtrip([clip])[0]
        if isinstance(transport, HttpTransport):
            return self._http_roundtrip(clip)
        raise TypeError(f"unknown transport {transport!r}")

    def _ensure_proc(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            transport = self.spec.transport
            try:
                self._proc = subprocess.Popen(
                    transport.argv,
                    stdin=subprocess.PIPE,
                    stdout=subprocess.PIPE,
                    text=True,
                    bufsize=1,
                )
            except OSError as exc:
                raise TransportError(f"cannot start oracle process {transport.argv}: {exc}") from exc
        return self._proc

    def _subprocess_roundtrip(self, clips: list[AudioClip]) -> list[Label]:
        with self._wire_lock:
            proc = self._ensure_proc()
            requests_by_id: dict[str, int] = {}
            try:
                for pos, clip in enumerate(clips):
                    req_id = f"q{self._next_id}"
                    self._next_id += 1
                    requests_by_id[req_id] = pos
                    payload = {
                        "id": req_id,
                        "wav_b64": base64.b64encode(wav_bytes(clip)).decode("ascii"),
                    }
                    proc.stdin.write(json.dumps(payload) + "\n")
                proc.stdin.flush()
            except (BrokenPipeError, OSError) as exc:
                raise TransportError(f"oracle process closed stdin: {exc}") from exc

            labels: list[Label | None] = [None] * len(clips)
            remaining = len(clips)
            while remaining:
                line = proc.stdout.readline()
                if not line:
                    code = proc.poll()
                    raise TransportError(f"oracle process exited (code {code}) mid-batch")
                reply = _parse_reply(line, expected_keys={"id", "label"})
                req_id = reply.get("id")
                if req_id not in requests_by_id:
                    raise ProtocolError(f"response for unknown request id {req_id!r}")
                pos = requests_by_id.pop(req_id)
                if labels[pos] is not None:
                    raise ProtocolError(f"duplicate response for request id {req_id!r}")
                labels[pos] = Label(reply["label"])
                remaining -= 1
            return labels  # type: ignore[return-value]

    def _http_roundtrip(self, clip: AudioClip) -> Label:
        transport = self.spec.transport
        with self._wire_lock:
            if self._session is None:
                self._session = requests.Session()
            try:
                resp = self._session.post(
                    transport.base_url + "/predict",
                    data=wav_bytes(clip),
                    headers={"Content-Type": "audio/wav"},
                    timeout=transport.timeout_ms / 1000.0,
                )
            except requests.RequestException as exc:
                raise TransportError(f"HTTP query failed: {exc}") from exc
        if resp.status_code != 200:
            raise TransportError(f"HTTP {resp.status_code} from {transport.base_url}/predict")
        try:
            body = resp.json()
        except ValueError as exc:
            raise ProtocolError(f"non-JSON response body: {exc}") from exc
        if not isinstance(body, dict) or set(body) != {"label"}:
            raise ProtocolError(f"expected exactly {{'label': ...}}, got {body!r}")
        if not isinstance(body["label"], str):
            raise ProtocolError(f"label must be a string, got {body['label']!r}")
        return Label(body["label"])

    def healthcheck(self) -> bool:
        """GET /healthz for HTTP transports; True for the others."""
        transport = self.spec.transport
        if not isinstance(transport, HttpTransport):
            return True
        if self._session is None:
            self._session = requests.Session()
        try:
            resp = self._session.get(
                transport.base_url + "/healthz", timeout=transport.timeout_ms / 1000.0
            )
        except requests.RequestException:
            return False
        return resp.status_code == 200


def _parse_reply(line: str, expected_keys: set[str]) -> dict:
    try:
        reply = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"non-JSON oracle reply {line!r}: {exc}") from exc
    if not isinstance(reply, dict) or set(reply) != expected_keys:
        raise ProtocolError(f"expected keys {sorted(expected_keys)}, got {line!r}")
    if not isinstance(reply.get("label"), str):
        raise ProtocolError(f"label must be a string in reply {line!r}")
    return reply
