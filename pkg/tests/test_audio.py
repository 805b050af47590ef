import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from streamtse.audio import (
    FRAME_SAMPLES,
    STANDARD_CHUNK_MS,
    FrontendState,
    MelConfig,
    Waveform,
    chunk_waveform,
    log_mel,
    log_mel_offline,
    mel_filterbank,
    power_db,
    synth_scene,
    unchunk,
    validate_chunk_spec,
)
from streamtse.errors import GranularityError, ShapeError


@pytest.mark.parametrize("ms,samples,frames", [(560, 8960, 14), (2000, 32000, 50), (80, 1280, 2)])
def test_chunk_spec_derived_counts(ms, samples, frames):
    spec = validate_chunk_spec(ms)
    assert (spec.samples_per_chunk, spec.codec_frames_per_chunk) == (samples, frames)


@pytest.mark.parametrize("ms", [100, 20, 0, -40, 41])
def test_chunk_spec_rejects_off_grid(ms):
    with pytest.raises(GranularityError):
        validate_chunk_spec(ms)


@given(st.integers(1, 200))
def test_chunk_spec_invariants(k):
    spec = validate_chunk_spec(40 * k)
    assert spec.samples_per_chunk == spec.chunk_ms * 16
    assert spec.codec_frames_per_chunk * 40 == spec.chunk_ms


def test_waveform_rejects_bad_input():
    with pytest.raises(ValueError):
        Waveform(np.array([0.0, np.nan]))
    with pytest.raises(ValueError):
        Waveform(np.zeros(4), sample_rate_hz=8000)
    with pytest.raises(ShapeError):
        Waveform(np.zeros((2, 2)))


def test_chunking_examples():
    spec = validate_chunk_spec(560)
    chunks = chunk_waveform(Waveform(np.ones(17920)), spec)
    assert len(chunks) == 2 and not any(c.padded for c in chunks)
    chunks = chunk_waveform(Waveform(np.ones(9000)), spec)
    assert len(chunks) == 2 and chunks[1].padded
    assert chunks[1].n_valid == 40
    assert np.count_nonzero(chunks[1].samples == 0) == 8920
    assert len(chunk_waveform(Waveform(np.ones(8960)), validate_chunk_spec(80))) == 7
    assert [c.step for c in chunks] == [1, 2]


def test_chunking_empty_raises():
    with pytest.raises(ShapeError):
        chunk_waveform(Waveform(np.zeros(0)), validate_chunk_spec(80))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 20000), st.sampled_from(STANDARD_CHUNK_MS), st.integers(0, 2**31 - 1))
def test_unchunk_round_trip(n, ms, seed):
    x = np.random.default_rng(seed).uniform(-1, 1, n)
    chunks = chunk_waveform(Waveform(x), validate_chunk_spec(ms))
    assert all(c.samples.shape == (ms * 16,) for c in chunks)
    assert np.array_equal(unchunk(chunks), x)


def test_filterbank_shape_and_peaks():
    fb = mel_filterbank(40, 1280)
    assert fb.shape == (40, 641)
    assert fb.min() >= 0 and fb.max() <= 1 + 1e-12
    # every triangle is non-empty and its peak bin sits left of the next one
    peaks = fb.argmax(axis=1)
    assert np.all(fb.max(axis=1) > 0.5)
    assert np.all(np.diff(peaks) >= 0)


def test_tone_lands_in_matching_band():
    cfg = MelConfig()
    fb = mel_filterbank(cfg.n_mels, cfg.window)
    freqs = np.fft.rfftfreq(cfg.window, 1 / 16000)
    t = np.arange(FRAME_SAMPLES * 4) / 16000
    for f in (300.0, 1000.0, 3000.0):
        mel = log_mel_offline(np.sin(2 * np.pi * f * t), cfg).frames
        bin_ = int(np.argmin(np.abs(freqs - f)))
        assert mel[-1].argmax() == fb[:, bin_].argmax()


def test_log_mel_frame_count_and_silence():
    spec = validate_chunk_spec(560)
    chunk = chunk_waveform(Waveform(np.zeros(8960)), spec)[0]
    mel, state = log_mel(chunk, FrontendState.initial())
    assert mel.frames.shape == (14, 40)
    assert np.all(mel.frames == np.log(1e-10))
    assert state.frames_emitted == 14


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(STANDARD_CHUNK_MS[:4]), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_streaming_mel_equals_offline(ms, n_chunks, seed):
    x = np.random.default_rng(seed).normal(0, 0.2, ms * 16 * n_chunks)
    state, parts = FrontendState.initial(), []
    for c in chunk_waveform(Waveform(x), validate_chunk_spec(ms)):
        mel, state = log_mel(c, state)
        parts.append(mel.frames)
    assert np.array_equal(np.concatenate(parts), log_mel_offline(x).frames)


def test_log_mel_is_causal(rng):
    spec = validate_chunk_spec(160)
    x = rng.normal(0, 0.1, 3 * 2560)
    y = x.copy()
    y[2560:] = rng.normal(0, 0.5, 2 * 2560)
    a = log_mel(chunk_waveform(Waveform(x), spec)[0], FrontendState.initial())[0]
    b = log_mel(chunk_waveform(Waveform(y), spec)[0], FrontendState.initial())[0]
    assert np.array_equal(a.frames, b.frames)


@pytest.mark.parametrize("snr", [0.0, 2.5, 5.0])
def test_synth_scene_contract(snr):
    s = synth_scene(7, 1120, snr, ref_ms=800)
    assert len(s.mixture) == len(s.target) == len(s.interferer) == 17920
    assert len(s.reference) == 12800
    assert np.array_equal(s.mixture.samples, s.target.samples + s.interferer.samples)
    assert power_db(s.target.samples) - power_db(s.interferer.samples) == pytest.approx(snr, abs=1e-9)
    assert s.target_speaker != s.interferer_speaker
    assert np.abs(s.mixture.samples).max() <= 0.9 + 1e-12
    assert not np.allclose(s.reference.samples[:1000], s.target.samples[:1000])


def test_synth_scene_deterministic():
    a, b = synth_scene(3, 400, 1.0), synth_scene(3, 400, 1.0)
    assert np.array_equal(a.mixture.samples, b.mixture.samples)
    assert np.array_equal(a.reference.samples, b.reference.samples)
    assert not np.array_equal(a.mixture.samples, synth_scene(4, 400, 1.0).mixture.samples)
