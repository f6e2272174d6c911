from __future__ import annotations

import pytest

from voiceforge.backends import StubBackend, StubConfig
from voiceforge.corpus import AudioClip, Language, Transcript


@pytest.fixture
def stub_cfg() -> StubConfig:
    return StubConfig(seed=7)


@pytest.fixture
def stub(stub_cfg) -> StubBackend:
    return StubBackend(stub_cfg)


@pytest.fixture
def clip() -> AudioClip:
    return AudioClip(
        clip_id="c1",
        source_id="film000",
        payload_ref="store://film000/c1.wav",
        duration_s=10.0,
        sample_rate_hz=48_000,
    )


def make_clip(clip_id: str = "c1", duration_s: float = 10.0, **kwargs) -> AudioClip:
    defaults = dict(
        clip_id=clip_id,
        source_id="film000",
        payload_ref=f"store://film000/{clip_id}.wav",
        duration_s=duration_s,
        sample_rate_hz=48_000,
    )
    defaults.update(kwargs)
    return AudioClip(**defaults)


def make_transcript(text: str, clip_id: str = "c1", language: Language = Language.EN) -> Transcript:
    return Transcript(clip_id, text, language)
