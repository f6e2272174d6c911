from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from voiceforge.backends import (
    BackendEndpoint,
    BackendKind,
    BackendPermanentError,
    BackendRetryableError,
    GaussParams,
    HttpBackend,
    RESPONSE_SCHEMAS,
    StubBackend,
    StubConfig,
    call_backend,
    stub_quality_score,
    validate_response,
)
from voiceforge.corpus import Caption

from conftest import make_clip


VALID_RESPONSES = {
    BackendKind.DIARIZE: {"segments": [{"start_s": 0.0, "end_s": 1.0, "speaker_label": "S0"}]},
    BackendKind.DENOISE: {"payload_ref": "x.denoised"},
    BackendKind.QUALITY: {"dnsmos": 3.2},
    BackendKind.TRANSCRIBE: {"text": "hi", "language": "en"},
    BackendKind.LANGID: {"language": "zh"},
    BackendKind.CAPTION: {
        "gender": "female",
        "age_bracket": "child",
        "emotion_tone": "happy",
        "voice_texture": "clear",
        "free_text": "",
    },
    BackendKind.INSTRUCT: {"instruction_text": "warm voice"},
    BackendKind.EMBED: {"values": [0.1, 0.2]},
    BackendKind.REWRITE: {"variants": ["a", "b"]},
    BackendKind.JUDGE: {"verdict": True},
}


class TestSchemas:
    @pytest.mark.parametrize("kind", list(BackendKind))
    def test_valid_response_accepted(self, kind):
        assert validate_response(kind, dict(VALID_RESPONSES[kind])) == VALID_RESPONSES[kind]

    @pytest.mark.parametrize("kind", list(BackendKind))
    def test_any_missing_required_field_rejected(self, kind):
        for field in RESPONSE_SCHEMAS[kind]:
            payload = dict(VALID_RESPONSES[kind])
            del payload[field]
            with pytest.raises(BackendPermanentError, match="missing required field"):
                validate_response(kind, payload)

    def test_wrong_type_rejected(self):
        with pytest.raises(BackendPermanentError, match="wrong type"):
            validate_response(BackendKind.QUALITY, {"dnsmos": "high"})
        with pytest.raises(BackendPermanentError):
            validate_response(BackendKind.JUDGE, {"verdict": 1})

    def test_non_object_rejected(self):
        with pytest.raises(BackendPermanentError):
            validate_response(BackendKind.QUALITY, [1, 2])


class TestStubConfig:
    def test_language_mix_must_sum_to_one(self):
        with pytest.raises(ValueError, match="sum to 1"):
            StubConfig(language_mix={"zh": 0.5, "en": 0.3})

    def test_language_mix_keys_restricted(self):
        with pytest.raises(ValueError, match="zh/en/other"):
            StubConfig(language_mix={"zh": 0.5, "fr": 0.5})

    def test_rates_in_unit_interval(self):
        with pytest.raises(ValueError):
            StubConfig(single_speaker_rate=1.5)

    def test_stddev_positive(self):
        with pytest.raises(ValueError):
            GaussParams(mean=3.0, stddev=0.0)


class TestStubQualityScore:
    def test_deterministic(self, stub_cfg):
        clip = make_clip("c1")
        a = stub_quality_score(clip, denoised=False, cfg=stub_cfg)
        b = stub_quality_score(clip, denoised=False, cfg=stub_cfg)
        assert a == b

    def test_clamped_to_range(self):
        cfg = StubConfig(seed=3, dnsmos_pre_denoise=GaussParams(0.0, 2.0))
        scores = [stub_quality_score(make_clip(f"c{i}"), False, cfg).dnsmos for i in range(500)]
        assert all(1.0 <= s <= 5.0 for s in scores)
        assert min(scores) == 1.0  # a mean-0 wide Gaussian must hit the clamp

    def test_pre_denoise_pass_rate_near_five_percent(self, stub_cfg):
        # Default calibration targets P(score >= 3.0 | raw) = 5%.
        n = 10_000
        passed = sum(
            stub_quality_score(make_clip(f"clip{i:06d}"), False, stub_cfg).dnsmos >= 3.0
            for i in range(n)
        )
        assert 0.03 <= passed / n <= 0.07

    def test_post_denoise_pass_rate_near_half(self, stub_cfg):
        # Default calibration targets P(score >= 3.0 | denoised) = 47.5%.
        n = 10_000
        passed = sum(
            stub_quality_score(make_clip(f"clip{i:06d}"), True, stub_cfg).dnsmos >= 3.0
            for i in range(n)
        )
        assert 0.43 <= passed / n <= 0.52


class TestStubBackend:
    def test_all_kinds_produce_schema_valid_output(self, stub):
        requests_by_kind = {
            BackendKind.DIARIZE: {"clip_id": "c1", "payload_ref": "p", "duration_s": 8.0, "task": "segment"},
            BackendKind.DENOISE: {"clip_id": "c1", "payload_ref": "p"},
            BackendKind.QUALITY: {"clip_id": "c1", "denoised": True},
            BackendKind.TRANSCRIBE: {"clip_id": "c1", "payload_ref": "p"},
            BackendKind.LANGID: {"clip_id": "c1", "text": "hello"},
            BackendKind.CAPTION: {"clip_id": "c1", "payload_ref": "p"},
            BackendKind.INSTRUCT: {
                "gender": "female", "age_bracket": "elderly",
                "emotion_tone": "angry", "voice_texture": "raspy",
            },
            BackendKind.EMBED: {"text": "a warm voice"},
            BackendKind.REWRITE: {"instruction_text": "A warm voice.", "n_variants": 2},
            BackendKind.JUDGE: {"item_id": "i1", "task": "APS", "language": "en"},
        }
        for kind, req in requests_by_kind.items():
            resp = stub.call(kind, req)
            validate_response(kind, resp)

    def test_responses_are_pure_functions_of_seed_and_request(self):
        a = StubBackend(StubConfig(seed=42))
        b = StubBackend(StubConfig(seed=42))
        for clip_id in ("x", "y", "z"):
            req = {"clip_id": clip_id, "payload_ref": "p", "duration_s": 5.0, "task": "segment"}
            assert a.call(BackendKind.DIARIZE, req) == b.call(BackendKind.DIARIZE, req)

    def test_different_seeds_differ(self):
        a = StubBackend(StubConfig(seed=1))
        b = StubBackend(StubConfig(seed=2))
        ra = a.call(BackendKind.QUALITY, {"clip_id": "c1", "denoised": False})
        rb = b.call(BackendKind.QUALITY, {"clip_id": "c1", "denoised": False})
        assert ra != rb

    def test_embed_reproducible_bitwise(self, stub):
        r1 = stub.call(BackendKind.EMBED, {"text": "bright young voice"})
        r2 = stub.call(BackendKind.EMBED, {"text": "bright young voice"})
        assert r1 == r2
        assert len(r1["values"]) == stub.cfg.embed_dim
        assert all(v == w for v, w in zip(r1["values"], r2["values"]))

    def test_forced_empty_transcript(self, stub):
        resp = stub.call(BackendKind.TRANSCRIBE, {"clip_id": "c9", "payload_ref": "p#empty"})
        assert resp["text"] == ""

    def test_dead_marker_raises_permanent(self, stub):
        with pytest.raises(BackendPermanentError, match="injected"):
            stub.call(BackendKind.CAPTION, {"clip_id": "c9", "payload_ref": "p#dead=caption"})
        # The marker only fires for its own kind.
        stub.call(BackendKind.QUALITY, {"clip_id": "c9", "payload_ref": "p#dead=caption", "denoised": False})

    def test_instruction_contains_caption_terms(self, stub):
        resp = stub.call(
            BackendKind.INSTRUCT,
            {"gender": "female", "age_bracket": "elderly", "emotion_tone": "angry", "voice_texture": "raspy"},
        )
        text = resp["instruction_text"]
        for term in ("elderly", "angry", "raspy"):
            assert term in text

    def test_identical_captions_give_identical_instructions(self, stub):
        req = {"gender": "male", "age_bracket": "child", "emotion_tone": "happy", "voice_texture": "soft"}
        assert stub.call(BackendKind.INSTRUCT, dict(req)) == stub.call(BackendKind.INSTRUCT, dict(req))

    def test_bad_caption_marker_fails_vocabulary(self, stub):
        resp = stub.call(BackendKind.CAPTION, {"clip_id": "c1", "payload_ref": "p#badcaption"})
        with pytest.raises(ValueError, match="vocabulary"):
            Caption.from_dict({"clip_id": "c1", **resp})

    def test_single_speaker_rate_extremes(self):
        always = StubBackend(StubConfig(seed=7, single_speaker_rate=1.0))
        never = StubBackend(StubConfig(seed=7, single_speaker_rate=0.0))
        req = {"clip_id": "c1", "payload_ref": "p", "duration_s": 6.0, "task": "speaker_check"}
        assert len({s["speaker_label"] for s in always.call(BackendKind.DIARIZE, req)["segments"]}) == 1
        assert len({s["speaker_label"] for s in never.call(BackendKind.DIARIZE, req)["segments"]}) == 2

    def test_diarize_segments_fit_inside_clip(self, stub):
        for clip_id in (f"c{i}" for i in range(50)):
            req = {"clip_id": clip_id, "payload_ref": "p", "duration_s": 9.0, "task": "segment"}
            segs = stub.call(BackendKind.DIARIZE, req)["segments"]
            assert 1 <= len(segs) <= stub.cfg.segments_max
            prev_end = 0.0
            for s in segs:
                assert 0.0 <= s["start_s"] < s["end_s"] <= 9.0
                assert s["start_s"] >= prev_end
                prev_end = s["end_s"]

    def test_rewrite_variants_distinct(self, stub):
        resp = stub.call(BackendKind.REWRITE, {"instruction_text": "A deep calm voice.", "n_variants": 2})
        a, b = resp["variants"]
        assert a != b
        assert a != "A deep calm voice."

    def test_norewrite_marker_degenerates(self, stub):
        resp = stub.call(
            BackendKind.REWRITE,
            {"instruction_text": "A deep calm voice. #norewrite", "n_variants": 2},
        )
        assert resp["variants"][0] == resp["variants"][1]


# --- HTTP transport ----------------------------------------------------------


class _Handler(BaseHTTPRequestHandler):
    """Scriptable test endpoint: behavior keyed by path."""

    calls: dict[str, int] = {}

    def do_POST(self):
        _Handler.calls[self.path] = _Handler.calls.get(self.path, 0) + 1
        n = _Handler.calls[self.path]
        length = int(self.headers.get("Content-Length", 0))
        self.rfile.read(length)
        if self.path == "/quality-flaky" and n <= 2:
            self.send_response(500)
            self.end_headers()
            return
        if self.path == "/quality-down":
            self.send_response(503)
            self.end_headers()
            return
        if self.path == "/caption-bad-schema":
            body = json.dumps({"gender": "female"}).encode()
        elif self.path == "/not-json":
            self.send_response(200)
            self.send_header("Content-Type", "text/plain")
            self.end_headers()
            self.wfile.write(b"oops")
            return
        elif self.path == "/reject":
            self.send_response(400)
            self.end_headers()
            return
        else:
            body = json.dumps({"dnsmos": 3.5}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


@pytest.fixture(scope="module")
def http_server():
    _Handler.calls = {}
    server = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()


class TestHttpClient:
    def _ep(self, base: str, path: str, kind=BackendKind.QUALITY, retries=3) -> BackendEndpoint:
        return BackendEndpoint(kind=kind, url=f"{base}{path}", timeout_ms=2000, max_retries=retries)

    def test_success(self, http_server):
        resp = call_backend(self._ep(http_server, "/quality-ok"), {"clip_id": "c1"})
        assert resp == {"dnsmos": 3.5}

    def test_retries_through_transient_failures(self, http_server):
        resp = call_backend(self._ep(http_server, "/quality-flaky"), {"clip_id": "c1"})
        assert resp == {"dnsmos": 3.5}
        assert _Handler.calls["/quality-flaky"] == 3

    def test_exhausted_retries_raise_retryable(self, http_server):
        with pytest.raises(BackendRetryableError, match="transport failure"):
            call_backend(self._ep(http_server, "/quality-down", retries=1), {"clip_id": "c1"})
        assert _Handler.calls["/quality-down"] == 2

    def test_schema_violation_is_permanent(self, http_server):
        with pytest.raises(BackendPermanentError, match="missing required field"):
            call_backend(self._ep(http_server, "/caption-bad-schema", kind=BackendKind.CAPTION), {})

    def test_non_json_body_is_permanent(self, http_server):
        with pytest.raises(BackendPermanentError, match="non-JSON"):
            call_backend(self._ep(http_server, "/not-json"), {})

    def test_client_error_is_permanent(self, http_server):
        with pytest.raises(BackendPermanentError, match="HTTP 400"):
            call_backend(self._ep(http_server, "/reject"), {})

    def test_unreachable_host_raises_retryable(self):
        ep = BackendEndpoint(BackendKind.QUALITY, "http://127.0.0.1:9/none", timeout_ms=200, max_retries=0)
        with pytest.raises(BackendRetryableError):
            call_backend(ep, {})

    def test_http_backend_routes_by_kind(self, http_server):
        backend = HttpBackend({BackendKind.QUALITY: self._ep(http_server, "/quality-ok")})
        assert backend.call(BackendKind.QUALITY, {"clip_id": "c1"}) == {"dnsmos": 3.5}
        with pytest.raises(BackendPermanentError, match="no endpoint"):
            backend.call(BackendKind.CAPTION, {})


class TestEndpointEnvOverrides:
    def test_env_var_overrides_url(self):
        from voiceforge.backends import apply_endpoint_env_overrides

        base = {BackendKind.QUALITY: BackendEndpoint(BackendKind.QUALITY, "http://old/quality", 100, 1)}
        out = apply_endpoint_env_overrides(
            base, environ={"VOICEFORGE_ENDPOINT_QUALITY": "http://new/quality"}
        )
        assert out[BackendKind.QUALITY].url == "http://new/quality"
        assert out[BackendKind.QUALITY].timeout_ms == 100  # other settings preserved
        assert base[BackendKind.QUALITY].url == "http://old/quality"  # input untouched

    def test_env_var_adds_missing_endpoint(self):
        from voiceforge.backends import apply_endpoint_env_overrides

        out = apply_endpoint_env_overrides({}, environ={"VOICEFORGE_ENDPOINT_EMBED": "http://e/embed"})
        assert out[BackendKind.EMBED].url == "http://e/embed"

    def test_no_env_no_change(self):
        from voiceforge.backends import apply_endpoint_env_overrides

        base = {BackendKind.JUDGE: BackendEndpoint(BackendKind.JUDGE, "http://j", 100, 0)}
        assert apply_endpoint_env_overrides(base, environ={}) == base


class TestBoundedConcurrency:
    def test_inflight_bounded_per_endpoint(self, http_server):
        limit = 3
        backend = HttpBackend(
            {BackendKind.QUALITY: BackendEndpoint(BackendKind.QUALITY, f"{http_server}/quality-ok", 2000, 0)},
            max_inflight=limit,
        )
        active = 0
        peak = 0
        lock = threading.Lock()
        orig = backend._session.post

        def tracking_post(*args, **kwargs):
            nonlocal active, peak
            with lock:
                active += 1
                peak = max(peak, active)
            try:
                import time

                time.sleep(0.02)
                return orig(*args, **kwargs)
            finally:
                with lock:
                    active -= 1

        backend._session.post = tracking_post
        threads = [
            threading.Thread(target=backend.call, args=(BackendKind.QUALITY, {"clip_id": str(i)}))
            for i in range(12)
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert peak <= limit
