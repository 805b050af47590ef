"""Measurement harness: ISR, RTF, cache-cost ablation, extraction and selftest."""

from __future__ import annotations

import json
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .audio import STANDARD_CHUNK_MS, Waveform, chunk_waveform, synth_scene, validate_chunk_spec
from .engine import SessionConfig, close_session, open_session, process_chunk, run_session
from .layout import Kind, Strategy, step_cost
from .model import Models
from .wavio import read_wav, write_wav


@dataclass(frozen=True)
class ISRReport:
    n_samples: int
    n_valid: int
    isr_percent: float

    @classmethod
    def of(cls, flags: list[bool]) -> "ISRReport":
        n = len(flags)
        if n == 0:
            raise ValueError("ISR needs at least one run")
        k = sum(bool(f) for f in flags)
        return cls(n, k, 100.0 * k / n)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RTFReport:
    t_proc_s: float
    t_speech_s: float
    rtf: float
    chunk_ms: int
    hardware_label: str = ""

    @classmethod
    def of(cls, t_proc_s: float, t_speech_s: float, chunk_ms: int, hardware_label: str = "") -> "RTFReport":
        if t_speech_s <= 0:
            raise ValueError("speech duration must be positive")
        return cls(float(t_proc_s), float(t_speech_s), float(t_proc_s) / float(t_speech_s),
                   chunk_ms, hardware_label)

    def to_dict(self) -> dict:
        return asdict(self)


def _run_valid(models: Models, config: SessionConfig, mixture: Waveform, reference: Waveform) -> bool:
    _, _, report, _ = run_session(models, config, mixture, reference)
    return all(s.valid for s in report.steps)


def eval_isr(models: Models, configs: SessionConfig | list[SessionConfig],
             test_set: list[tuple[Waveform, Waveform]],
             fault_plan: dict[int, int] | set[int] | None = None, workers: int = 1) -> ISRReport:
    """Inference success rate over every (config, test item) run.

    Runs are numbered config-major. ``fault_plan`` names the runs forced to
    emit the null token: a set of run indices (fault at step 1) or a mapping
    index -> step. ``workers > 1`` evaluates independent sessions in threads.
    """
    if isinstance(configs, SessionConfig):
        configs = [configs]
    plan = fault_plan or {}
    if not isinstance(plan, dict):
        plan = {i: 1 for i in plan}
    runs = [(cfg, mix, ref) for cfg in configs for mix, ref in test_set]
    jobs = [(replace(cfg, fault_step=plan.get(i)), mix, ref) for i, (cfg, mix, ref) in enumerate(runs)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            flags = list(pool.map(lambda j: _run_valid(models, *j), jobs))
    else:
        flags = [_run_valid(models, *j) for j in jobs]
    return ISRReport.of(flags)


def synthetic_test_set(n: int, duration_ms: int, seed: int = 0, ref_ms: int = 1000):
    scenes = [synth_scene(seed + i, duration_ms, float(np.random.default_rng(seed + i).uniform(0, 5)),
                          ref_ms=ref_ms) for i in range(n)]
    return [(s.mixture, s.reference) for s in scenes]


def time_session(models: Models, config: SessionConfig, mixture: Waveform, reference: Waveform,
                 delay_per_chunk_s: float = 0.0) -> float:
    """Wall-clock seconds for feature extraction, inference and reconstruction of one stream."""
    start = time.perf_counter()
    session = open_session(config, models, reference)
    for ch in chunk_waveform(mixture, session.spec):
        process_chunk(session, ch)
        if delay_per_chunk_s:
            time.sleep(delay_per_chunk_s)
    close_session(session)
    return time.perf_counter() - start


def bench_rtf(models: Models, config: SessionConfig, duration_s: float = 5.6, repeats: int = 3,
              delay_fraction: float = 0.0, hardware_label: str = "", seed: int = 0,
              ref_ms: int = 5000) -> RTFReport:
    """Median real-time factor over ``repeats`` runs on a synthetic mixture.

    ``delay_fraction`` injects a sleep of that fraction of the chunk duration
    after every chunk (used to calibrate the timer).
    """
    if duration_s <= 0:
        raise ValueError("duration_s must be positive")
    spec = validate_chunk_spec(config.chunk_ms)
    scene = synth_scene(seed, int(round(duration_s * 1000)), 0.0, ref_ms=ref_ms)
    delay = delay_fraction * spec.duration_s
    times = [time_session(models, config, scene.mixture, scene.reference, delay)
             for _ in range(max(1, repeats))]
    return RTFReport.of(statistics.median(times), scene.mixture.duration_s, config.chunk_ms, hardware_label)


def ablate_cost(models: Models, chunk_ms_list=STANDARD_CHUNK_MS, strategies=tuple(Strategy), steps: int = 4,
                seed: int = 0, ref_ms: int = 1000) -> list[dict]:
    """Measured vs closed-form per-step cache cost for each (chunk size, strategy)."""
    rows = []
    for chunk_ms in chunk_ms_list:
        spec = validate_chunk_spec(chunk_ms)
        m = spec.codec_frames_per_chunk
        scene = synth_scene(seed, steps * chunk_ms, 0.0, ref_ms=ref_ms)
        for strategy in strategies:
            strategy = Strategy.parse(strategy)
            _, _, report, state = run_session(models, SessionConfig(chunk_ms, strategy), scene.mixture,
                                              scene.reference)
            mix_positions = int(len(state.arlm_layout.positions(Kind.MIX)))
            for s in report.steps:
                sel_app, _ = step_cost(s.t, m, "selm")
                arl_app, arl_rec = step_cost(s.t, m, "arlm", strategy)
                match = (s.selm_appended, s.arlm_appended, s.arlm_recomputed) == (sel_app, arl_app, arl_rec)
                rows.append({
                    "chunk_ms": chunk_ms, "strategy": strategy.value, "m": m, "t": s.t,
                    "selm_appended": s.selm_appended, "arlm_appended": s.arlm_appended,
                    "recomputed": s.arlm_recomputed, "invalidated": s.invalidated,
                    "predicted_selm_appended": sel_app, "predicted_arlm_appended": arl_app,
                    "predicted_recomputed": arl_rec, "match": match,
                    "arlm_mix_positions": mix_positions,
                })
    return rows


def run_extraction(models: Models, config: SessionConfig, mixture_path, reference_path, out_path,
                   report_path=None) -> dict:
    mixture = read_wav(mixture_path)
    reference = read_wav(reference_path)
    _, wav, report, _ = run_session(models, config, mixture, reference)
    write_wav(out_path, wav)
    data = report.to_dict()
    if report_path is not None:
        Path(report_path).write_text(json.dumps(data, indent=2))
    return data


# ---------------------------------------------------------------------------
# selftest


def _check(name, fn):
    try:
        detail = fn()
        return name, True, detail or ""
    except AssertionError as exc:
        return name, False, str(exc)


def selftest(seed: int = 0) -> list[tuple[str, bool, str]]:
    """Small versions of the invariant suite; returns (name, passed, detail) rows."""
    from .audio import FrontendState, log_mel, log_mel_offline
    from .config import ModelConfig
    from .layout import Stage, append_selm_step, build_prefix, is_valid_layout
    from .nn import finite_difference_grad, grad, max_relative_error
    from .trainer import LossBreakdown, batch_loss, make_training_batch
    from .engine import offline_oracle

    rng = np.random.default_rng(seed)
    models = Models.create(ModelConfig(), seed=seed)
    results = []

    def frontend():
        x = rng.normal(0, 0.1, 640 * 6)
        chunks = chunk_waveform(Waveform(x), validate_chunk_spec(80))
        st, parts = FrontendState.initial(), []
        for c in chunks:
            f, st = log_mel(c, st)
            parts.append(f.frames)
        assert np.array_equal(np.concatenate(parts), log_mel_offline(x).frames), "streaming mel != offline"

    def causality():
        for chunk_ms in (80, 560):
            scene = synth_scene(int(rng.integers(1 << 30)), 3 * chunk_ms, 2.0, ref_ms=600)
            base, *_ = run_session(models, SessionConfig(chunk_ms), scene.mixture, scene.reference)
            x = scene.mixture.samples.copy()
            cut = 2 * chunk_ms * 16
            x[cut:] = rng.uniform(-0.5, 0.5, x.shape[0] - cut)
            alt, *_ = run_session(models, SessionConfig(chunk_ms), Waveform(x), scene.reference)
            for a, b in zip(base[:2], alt[:2]):
                assert a.tokens == b.tokens and np.array_equal(a.audio.samples, b.audio.samples), \
                    f"prefix output changed at {chunk_ms} ms"

    def equivalence():
        scene = synth_scene(seed, 3 * 160, 1.0, ref_ms=600)
        cfg = SessionConfig(160)
        outs, *_ = run_session(models, cfg, scene.mixture, scene.reference)
        toks = {k + 1: list(o.tokens.first_q) for k, o in enumerate(outs)}
        off = offline_oracle(models, cfg, scene.mixture, scene.reference, toks)
        assert off.selm_predictions == toks, "oracle tokens differ"
        err = max(np.abs(off.arlm_latents[k] - outs[k - 1].hidden.vectors).max() for k in toks)
        assert err <= 1e-5, f"hidden max|d|={err:.2e}"
        return f"max|d|={err:.1e}"

    def costs():
        rows = ablate_cost(models, (80, 160), steps=3)
        bad = [r for r in rows if not r["match"]]
        assert not bad, f"cost mismatch: {bad[0]}"
        assert all(r["recomputed"] == 0 for r in rows if r["strategy"] == "interleaved")

    def grammar():
        e = rng.normal(size=(4, models.cfg.d_model))
        lay = build_prefix(e, Stage.SELM, 2)
        append_selm_step(lay, rng.normal(size=(2, models.cfg.d_model)), [1, 2], step=1)
        assert is_valid_layout(lay)
        lay.elements[5], lay.elements[7] = lay.elements[7], lay.elements[5]
        assert not is_valid_layout(lay), "swapped layout accepted"

    def gradient():
        mcfg = ModelConfig.micro()
        m = Models.create(mcfg, seed)
        batch = make_training_batch(seed, validate_chunk_spec(80), 1, 160, ref_ms=200)
        f = lambda p: batch_loss(p, m, batch)[0]
        g = grad(f, m.params)
        picks = {k: np.unique(np.r_[np.argsort(-np.abs(g[k]).ravel())[:2], 0]) for k in m.params}
        n = finite_difference_grad(f, m.params, 1e-4, picks)
        err = max_relative_error(g, n)
        assert err <= 1e-3, f"rel err {err:.2e}"
        return f"rel err {err:.1e}"

    def arithmetic():
        lb = LossBreakdown.of(2.0, 0.5, 1.0, 1.0)
        assert lb.total == 2.5
        assert ISRReport.of([True, True, True, False]).isr_percent == 75.0
        r = RTFReport.of(1.386, 5.6, 560)
        assert r.rtf == 1.386 / 5.6 and abs(r.rtf - 0.2475) < 1e-12

    for name, fn in [("frontend streaming == offline", frontend), ("causality", causality),
                     ("cache equivalence", equivalence), ("cache cost laws", costs),
                     ("layout grammar", grammar), ("gradient check", gradient),
                     ("loss / ISR / RTF arithmetic", arithmetic)]:
        results.append(_check(name, fn))
    return results
