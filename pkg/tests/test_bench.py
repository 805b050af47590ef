import json

import pytest

from streamtse.audio import synth_scene
from streamtse.bench import (
    ISRReport,
    RTFReport,
    ablate_cost,
    bench_rtf,
    eval_isr,
    run_extraction,
    selftest,
    synthetic_test_set,
)
from streamtse.config import ModelConfig
from streamtse.engine import SessionConfig
from streamtse.errors import WavFormatError
from streamtse.model import Models
from streamtse.wavio import read_wav, write_wav


def test_isr_arithmetic():
    assert ISRReport.of([True, True, True, False]).isr_percent == 75.0
    assert ISRReport.of([False] * 3).isr_percent == 0.0
    r = ISRReport.of([True] * 7 + [False] * 2)
    assert r.isr_percent == 100 * r.n_valid / r.n_samples
    with pytest.raises(ValueError):
        ISRReport.of([])


def test_rtf_arithmetic():
    r = RTFReport.of(1.386, 5.6, 560, "desk")
    assert r.rtf == r.t_proc_s / r.t_speech_s
    assert r.rtf == pytest.approx(0.2475, abs=1e-12)
    with pytest.raises(ValueError):
        RTFReport.of(1.0, 0.0, 560)


def test_eval_isr_fault_plans(models):
    tests = synthetic_test_set(4, 320, seed=3, ref_ms=600)
    cfg = SessionConfig(160)
    assert eval_isr(models, cfg, tests).isr_percent == 100.0
    assert eval_isr(models, cfg, tests, {2}).isr_percent == 75.0
    assert eval_isr(models, cfg, tests, {0: 2, 1: 1, 2: 2, 3: 1}).isr_percent == 0.0
    two = eval_isr(models, [cfg, SessionConfig(80)], tests, {5})
    assert (two.n_samples, two.n_valid) == (8, 7)


def test_parallel_isr_matches_sequential(models):
    tests = synthetic_test_set(4, 320, seed=5, ref_ms=600)
    cfg = SessionConfig(160)
    assert eval_isr(models, cfg, tests, {1, 3}, workers=4) == eval_isr(models, cfg, tests, {1, 3})


def test_ablate_cost_examples(models):
    rows = ablate_cost(models, [560], ["interleaved", "sequential", "ref-only"], steps=3)
    assert all(r["match"] for r in rows)
    seq = {r["t"]: r for r in rows if r["strategy"] == "sequential"}
    assert seq[3]["recomputed"] == 56 == seq[3]["predicted_recomputed"]
    assert all(r["recomputed"] == 0 for r in rows if r["strategy"] == "interleaved")
    assert all(r["arlm_mix_positions"] == 0 for r in rows if r["strategy"] == "ref_only")
    json.dumps(rows)


def test_bench_rtf_report(models):
    r = bench_rtf(models, SessionConfig(560), duration_s=1.12, repeats=2, hardware_label="cpu", ref_ms=1000)
    assert r.t_speech_s == 1.12 and r.chunk_ms == 560 and r.hardware_label == "cpu"
    assert r.rtf == r.t_proc_s / r.t_speech_s and r.t_proc_s > 0


def test_more_layers_do_not_run_faster():
    small = Models.create(ModelConfig(enc_layers=2, selm_layers=2, arlm_layers=2))
    big = Models.create(ModelConfig(enc_layers=4, selm_layers=4, arlm_layers=4))
    cfg = SessionConfig(560)
    a = bench_rtf(small, cfg, 2.24, repeats=3, ref_ms=1000)
    b = bench_rtf(big, cfg, 2.24, repeats=3, ref_ms=1000)
    assert b.t_proc_s >= a.t_proc_s


def test_run_extraction_files(models, tmp_path):
    s = synth_scene(2, 700, 1.0, ref_ms=800)
    write_wav(tmp_path / "mix.wav", s.mixture)
    write_wav(tmp_path / "ref.wav", s.reference)
    rep = run_extraction(models, SessionConfig(160), tmp_path / "mix.wav", tmp_path / "ref.wav",
                         tmp_path / "out.wav", tmp_path / "out.json")
    out = read_wav(tmp_path / "out.wav")
    assert len(out) == len(s.mixture)
    assert json.loads((tmp_path / "out.json").read_text()) == rep
    assert len(rep["steps"]) == 5


def test_run_extraction_rejects_bad_wav(models, tmp_path):
    (tmp_path / "x.wav").write_bytes(b"RIFF")
    with pytest.raises(WavFormatError):
        run_extraction(models, SessionConfig(), tmp_path / "x.wav", tmp_path / "x.wav", tmp_path / "o.wav")


def test_selftest_passes():
    rows = selftest()
    assert len(rows) >= 7
    assert all(ok for _, ok, _ in rows), rows
