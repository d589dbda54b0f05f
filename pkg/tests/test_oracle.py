import json
import sys
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np
import pytest

from stepaudit.audio import AudioClip, clip_from_wav_bytes
from stepaudit.oracle import (
    HttpTransport,
    InProcess,
    Label,
    Oracle,
    OracleSpec,
    ProtocolError,
    SubprocessTransport,
    TransportError,
)

from conftest import RATE, tone

HELPER = str(Path(__file__).parent / "helpers" / "subprocess_oracle.py")


def sign_model(clip: AudioClip) -> str:
    return "pos" if clip.samples[0] >= 0 else "neg"


class TestLabel:
    def test_exact_equality(self):
        assert Label("a") == Label("a")
        assert Label("a") != Label("A")
        assert Label("café") != Label("café")  # no unicode folding

    def test_rejects_non_text(self):
        with pytest.raises(TypeError):
            Label(3)


class TestInProcess:
    def test_constant_classifier(self, sine_clip):
        oracle = Oracle.in_process(lambda clip: "same")
        for scale in (1.0, 0.5, 2.0):
            clip = sine_clip.with_samples(sine_clip.samples * scale)
            assert oracle.predict(clip) == Label("same")

    def test_normalization_makes_scaling_a_noop(self, sine_clip):
        def peaky(clip):
            return "loud" if clip.peak() > 0.9 else "quiet"

        oracle = Oracle.in_process(peaky, normalize_input=True)
        assert oracle.predict(sine_clip) == oracle.predict(
            sine_clip.with_samples(2.0 * sine_clip.samples)
        )

    def test_without_normalization_scaling_matters(self, sine_clip):
        def peaky(clip):
            return "loud" if clip.peak() > 0.9 else "quiet"

        oracle = Oracle(OracleSpec(InProcess(peaky), normalize_input=False))
        assert oracle.predict(sine_clip) == Label("quiet")
        assert oracle.predict(sine_clip.with_samples(2.0 * sine_clip.samples)) == Label("loud")

    def test_counts_by_phase(self, sine_clip):
        oracle = Oracle.in_process(lambda c: "x")
        oracle.predict(sine_clip, phase="base")
        oracle.predict_batch([sine_clip] * 3, phase="preserving")
        oracle.predict_batch([sine_clip] * 2, phase="breaking")
        stats = oracle.stats.to_json()
        assert stats["total_queries"] == 6
        assert stats["per_phase"] == {"base": 1, "preserving": 3, "breaking": 2, "baseline": 0}

    def test_unknown_phase_rejected(self, sine_clip):
        oracle = Oracle.in_process(lambda c: "x")
        with pytest.raises(ValueError):
            oracle.predict(sine_clip, phase="bonus")

    def test_model_returning_non_text_is_protocol_error(self, sine_clip):
        oracle = Oracle.in_process(lambda c: 0.7)
        with pytest.raises(ProtocolError):
            oracle.predict(sine_clip)


class TestPredictBatch:
    def test_empty(self):
        oracle = Oracle.in_process(lambda c: "x")
        assert oracle.predict_batch([]) == []
        assert oracle.stats.total_queries == 0

    def test_singleton_equals_predict(self, sine_clip):
        oracle = Oracle.in_process(sign_model)
        assert oracle.predict_batch([sine_clip]) == [oracle.predict(sine_clip)]

    def test_batch_matches_sequential(self):
        rng = np.random.default_rng(1)
        clips = [AudioClip(rng.uniform(-1, 1, 64), RATE) for _ in range(10)]
        oracle = Oracle.in_process(sign_model)
        assert oracle.predict_batch(clips) == [oracle.predict(c) for c in clips]


@pytest.fixture
def subprocess_oracle():
    spec = OracleSpec(SubprocessTransport((sys.executable, HELPER)), normalize_input=False)
    with Oracle(spec) as oracle:
        yield oracle


class TestSubprocessTransport:
    def test_predict(self, subprocess_oracle):
        up = AudioClip(np.array([0.5, -0.5]), RATE)
        down = AudioClip(np.array([-0.5, 0.5]), RATE)
        assert subprocess_oracle.predict(up) == Label("pos")
        assert subprocess_oracle.predict(down) == Label("neg")
        assert subprocess_oracle.stats.total_queries == 2

    def test_batch_out_of_order_replies(self):
        spec = OracleSpec(
            SubprocessTransport((sys.executable, HELPER, "--shuffle")), normalize_input=False
        )
        rng = np.random.default_rng(2)
        clips = [AudioClip(rng.uniform(-1, 1, 16), RATE) for _ in range(10)]
        expected = [Label("pos") if c.samples[0] >= 0 else Label("neg") for c in clips]
        with Oracle(spec) as oracle:
            assert oracle.predict_batch(clips) == expected

    def test_dead_process_is_transport_error(self, sine_clip):
        spec = OracleSpec(
            SubprocessTransport((sys.executable, "-c", "import sys; sys.exit(3)")),
            normalize_input=False,
        )
        with Oracle(spec) as oracle:
            with pytest.raises(TransportError):
                oracle.predict(sine_clip)

    def test_malformed_reply_is_protocol_error(self, sine_clip):
        spec = OracleSpec(
            SubprocessTransport(
                (sys.executable, "-c",
                 "import sys\nfor line in sys.stdin: print('not json', flush=True)")
            ),
            normalize_input=False,
        )
        with Oracle(spec) as oracle:
            with pytest.raises(ProtocolError):
                oracle.predict(sine_clip)


class _Handler(BaseHTTPRequestHandler):
    body = {"label": "served"}
    status = 200
    raw_body = None
    seen: list = []

    def do_POST(self):
        if self.path != "/predict":
            self.send_response(404)
            self.end_headers()
            return
        length = int(self.headers["Content-Length"])
        payload = self.rfile.read(length)
        type(self).seen.append(
            {"content_type": self.headers["Content-Type"], "payload": payload}
        )
        body = self.raw_body if self.raw_body is not None else json.dumps(self.body).encode()
        self.send_response(self.status)
        self.send_header("Content-Type", "application/json")
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        self.send_response(200 if self.path == "/healthz" else 404)
        self.end_headers()

    def log_message(self, *args):
        pass


@pytest.fixture
def http_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _Handler.body = {"label": "served"}
    _Handler.status = 200
    _Handler.raw_body = None
    _Handler.seen = []
    yield f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()


class TestHttpTransport:
    def test_predict_and_framing(self, http_server, sine_clip):
        with Oracle(OracleSpec(HttpTransport(http_server), normalize_input=False)) as oracle:
            assert oracle.healthcheck()
            assert oracle.predict(sine_clip) == Label("served")
        seen = _Handler.seen[0]
        assert seen["content_type"] == "audio/wav"
        decoded = clip_from_wav_bytes(seen["payload"])
        assert np.allclose(decoded.samples, sine_clip.samples, atol=1e-6)

    def test_non_200_is_transport_error(self, http_server, sine_clip):
        _Handler.status = 500
        with Oracle(OracleSpec(HttpTransport(http_server), normalize_input=False)) as oracle:
            with pytest.raises(TransportError):
                oracle.predict(sine_clip)

    def test_extra_keys_rejected(self, http_server, sine_clip):
        _Handler.body = {"label": "a", "score": 0.9}
        with Oracle(OracleSpec(HttpTransport(http_server), normalize_input=False)) as oracle:
            with pytest.raises(ProtocolError):
                oracle.predict(sine_clip)

    def test_non_json_is_protocol_error(self, http_server, sine_clip):
        _Handler.raw_body = b"<html>oops</html>"
        with Oracle(OracleSpec(HttpTransport(http_server), normalize_input=False)) as oracle:
            with pytest.raises(ProtocolError):
                oracle.predict(sine_clip)

    def test_unreachable_endpoint(self, sine_clip):
        spec = OracleSpec(HttpTransport("http://127.0.0.1:1", timeout_ms=300))
        with Oracle(spec) as oracle:
            assert not oracle.healthcheck()
            with pytest.raises(TransportError):
                oracle.predict(sine_clip)
