"""``streamtse`` command line: extract, bench-rtf, eval-isr, ablate-cost, train-toy, selftest."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .audio import STANDARD_CHUNK_MS, validate_chunk_spec
from .bench import ablate_cost, bench_rtf, eval_isr, run_extraction, selftest, synthetic_test_set
from .config import ModelConfig
from .engine import SessionConfig
from .errors import StreamTSEError
from .layout import Strategy
from .model import Models
from .trainer import make_training_batch, train


def _shared(p: argparse.ArgumentParser) -> None:
    p.add_argument("--chunk-ms", type=int, default=560)
    p.add_argument("--strategy", choices=["interleaved", "sequential", "ref-only"], default="interleaved")
    p.add_argument("--history", choices=["none", "one", "full"], default="one")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model-dim", type=int, default=None, help="d_model for a freshly initialised model")
    p.add_argument("--layers", type=int, default=None, help="layers per stack (encoder, SELM, ARLM)")
    p.add_argument("--checkpoint", type=Path, default=None, help="load parameters from this .npz")
    p.add_argument("--out", type=Path, default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="streamtse", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="stream a mixture WAV and write the extracted WAV")
    _shared(p)
    p.add_argument("--mixture", type=Path, required=True)
    p.add_argument("--reference", type=Path, required=True)
    p.add_argument("--report", type=Path, default=None, help="session report JSON (default: <out>.json)")

    p = sub.add_parser("bench-rtf", help="real-time factor on a synthetic mixture")
    _shared(p)
    p.add_argument("--duration", type=float, default=5.6, help="seconds of speech")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--delay-fraction", type=float, default=0.0,
                   help="sleep this fraction of the chunk duration after every chunk")
    p.add_argument("--hardware-label", default="")

    p = sub.add_parser("eval-isr", help="inference success rate with optional fault injection")
    _shared(p)
    p.add_argument("--n", type=int, default=4, help="number of synthetic test scenes")
    p.add_argument("--duration-ms", type=int, default=None)
    p.add_argument("--faults", default="", help="comma-separated run indices forced to emit null")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("ablate-cost", help="measured vs closed-form cache cost per step")
    _shared(p)
    p.add_argument("--chunk-ms-list", default=",".join(map(str, STANDARD_CHUNK_MS)))
    p.add_argument("--strategies", default="interleaved,sequential,ref-only")
    p.add_argument("--steps", type=int, default=4)

    p = sub.add_parser("train-toy", help="teacher-forced training on synthetic scenes")
    _shared(p)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--scenes", type=int, default=1)
    p.add_argument("--duration-ms", type=int, default=None)
    p.add_argument("--lambda1", type=float, default=1.0)
    p.add_argument("--lambda2", type=float, default=1.0)
    p.add_argument("--log", type=Path, default=None, help="JSON-lines training log (default: stdout)")

    p = sub.add_parser("selftest", help="run the invariant checks; nonzero exit on failure")
    _shared(p)
    return ap


def _models(args) -> Models:
    if args.checkpoint is not None:
        return Models.load(args.checkpoint)
    over = {}
    if args.model_dim is not None:
        over["d_model"] = args.model_dim
    if args.layers is not None:
        over.update(enc_layers=args.layers, selm_layers=args.layers, arlm_layers=args.layers)
    return Models.create(ModelConfig(**over), seed=args.seed)


def _session(args) -> SessionConfig:
    validate_chunk_spec(args.chunk_ms)
    return SessionConfig(args.chunk_ms, Strategy.parse(args.strategy), args.history)


def _emit(data, out: Path | None) -> None:
    text = json.dumps(data, indent=2)
    if out is None:
        print(text)
    else:
        out.write_text(text + "\n")


def _cmd_extract(args) -> int:
    if args.out is None:
        raise SystemExit("extract needs --out")
    report = args.report or args.out.with_suffix(".json")
    run_extraction(_models(args), _session(args), args.mixture, args.reference, args.out, report)
    return 0


def _cmd_bench_rtf(args) -> int:
    r = bench_rtf(_models(args), _session(args), args.duration, args.repeats, args.delay_fraction,
                  args.hardware_label, args.seed)
    _emit(r.to_dict(), args.out)
    return 0


def _cmd_eval_isr(args) -> int:
    cfg = _session(args)
    faults = {int(x) for x in args.faults.split(",") if x.strip()}
    tests = synthetic_test_set(args.n, args.duration_ms or 2 * cfg.chunk_ms, args.seed)
    r = eval_isr(_models(args), cfg, tests, faults, args.workers)
    _emit(r.to_dict(), args.out)
    return 0


def _cmd_ablate_cost(args) -> int:
    chunks = [int(x) for x in args.chunk_ms_list.split(",") if x.strip()]
    strategies = [Strategy.parse(s.strip()) for s in args.strategies.split(",") if s.strip()]
    for c in chunks:
        validate_chunk_spec(c)
    _emit(ablate_cost(_models(args), chunks, strategies, args.steps, args.seed), args.out)
    return 0


def _cmd_train_toy(args) -> int:
    models = _models(args)
    spec = validate_chunk_spec(args.chunk_ms)
    batch = make_training_batch(args.seed, spec, args.scenes, args.duration_ms)
    if args.log is None:
        history = train(models, batch, args.steps, args.lr, args.lambda1, args.lambda2, sys.stdout)
    else:
        with open(args.log, "w") as fh:
            history = train(models, batch, args.steps, args.lr, args.lambda1, args.lambda2, fh)
    if args.out is not None:
        models.save(args.out)
    if history:
        print(json.dumps({"initial_total": history[0].total, "final_total": history[-1].total}),
              file=sys.stderr)
    return 0


def _cmd_selftest(args) -> int:
    rows = selftest(args.seed)
    for name, ok, detail in rows:
        print(f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else ""))
    return 0 if all(ok for _, ok, _ in rows) else 1


COMMANDS = {
    "extract": _cmd_extract, "bench-rtf": _cmd_bench_rtf, "eval-isr": _cmd_eval_isr,
    "ablate-cost": _cmd_ablate_cost, "train-toy": _cmd_train_toy, "selftest": _cmd_selftest,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (StreamTSEError, OSError) as exc:
        print(f"streamtse {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
