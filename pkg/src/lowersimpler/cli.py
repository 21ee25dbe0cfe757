"""Command line entry point: ``bench``, ``gradcheck``, ``params`` and ``gen``.

Single-threaded BLAS is requested through the environment before numpy is
first imported, so epoch timings of the two variants are comparable.
"""

from __future__ import annotations

import os

for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse  # noqa: E402
import json  # noqa: E402
import logging  # noqa: E402
import sys  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from . import autodiff as ad  # noqa: E402
from .bench import RunConfig, emit_report, param_audit, spec_for_task, train_run  # noqa: E402
from .bench.train import DEFAULT_ALPHA  # noqa: E402
from .cells import CellConfig, init_weights  # noqa: E402
from .cells import gru_step, mgu_step, sgu_step  # noqa: E402
from .data import SyntheticTaskSpec, batchify, collate_fn, generate, write_dataset  # noqa: E402
from .errors import ConfigError  # noqa: E402
from .models import build_model  # noqa: E402

log = logging.getLogger("lowersimpler")

DEFAULT_TASK = {"HRED": "copy", "RNET": "toy_qa"}
DEFAULT_SIZES = {"HRED": "32,64,32", "RNET": "32,32,32,32"}
DEFAULT_LENGTH = {"copy": "3,6", "toy_dialogue": "3,6", "toy_qa": "10,30"}


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in str(text).split(",") if t.strip())


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", default="HRED", type=str.upper, choices=["HRED", "RNET"])
    p.add_argument("--variant", default="both", choices=["baseline", "simplified", "both"])
    p.add_argument("--vocab-size", type=int, default=50)
    p.add_argument("--embed-size", type=int, default=32)
    p.add_argument("--sizes", default=None,
                   help="layer widths: sentence,dialogue,decoder (HRED) or char,encoding,matching,self_matching (RNET)")
    p.add_argument("--char-embed-size", type=int, default=32)
    p.add_argument("--attention-size", type=int, default=0)
    p.add_argument("--alpha", type=float, default=None, help="FOFE forgetting factor")


def _add_task_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--task", default=None, choices=["copy", "toy_dialogue", "toy_qa"])
    p.add_argument("--length", default=None, help="inclusive sentence/passage length range, e.g. 3,6")
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--sentences", type=int, default=3)
    p.add_argument("--data-seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lowersimpler", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bench", help="train baseline and/or simplified variants and emit a report")
    _add_model_flags(b)
    _add_task_flags(b)
    b.add_argument("--learning-rate", "--lr", type=float, default=None)
    b.add_argument("--batch-size", type=int, default=32)
    b.add_argument("--epochs", type=int, default=10)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--precision", default="single", choices=["single", "double"])
    b.add_argument("--max-span-len", type=int, default=10)
    b.add_argument("--holdout", type=float, default=0.1)
    b.add_argument("--output", "--csv", dest="output", default=None, help="CSV report path")
    b.add_argument("--markdown", default=None, help="markdown report path")
    b.add_argument("--json", default=None, help="full reports (histories, timings) as JSON")
    b.add_argument("--config", default=None, help="JSON file whose keys override the flags")
    b.add_argument("--check", action="store_true",
                   help="fail unless simplified has fewer params and lower median secs/epoch")

    g = sub.add_parser("gradcheck", help="finite-difference sweep over cells and tiny models")
    g.add_argument("--trials", type=int, default=5)
    g.add_argument("--tol", type=float, default=1e-4)
    g.add_argument("--seed", type=int, default=0)

    pa = sub.add_parser("params", help="per-layer trainable parameter audit")
    _add_model_flags(pa)
    pa.add_argument("--json", default=None)

    gen = sub.add_parser("gen", help="write a synthetic dataset as JSON Lines")
    _add_task_flags(gen)
    gen.add_argument("--vocab-size", type=int, default=50)
    gen.add_argument("--out", required=True)
    return parser


def apply_config_file(args: argparse.Namespace) -> argparse.Namespace:
    """Keys of the JSON config (flag names, dashes or underscores) override flags."""
    if not getattr(args, "config", None):
        return args
    with open(args.config, encoding="utf-8") as fh:
        overrides = json.load(fh)
    if not isinstance(overrides, dict):
        raise ConfigError("config file must hold a JSON object")
    for key, value in overrides.items():
        dest = key.replace("-", "_")
        if dest == "lr":
            dest = "learning_rate"
        if not hasattr(args, dest):
            raise ConfigError(f"unknown config key {key!r}")
        if dest in ("sizes", "length") and isinstance(value, list):
            value = ",".join(str(v) for v in value)
        setattr(args, dest, value)
    args.model = str(args.model).upper()
    return args


def _task(args, family: str) -> SyntheticTaskSpec:
    task = args.task or DEFAULT_TASK[family]
    return SyntheticTaskSpec(task, args.vocab_size, _ints(args.length or DEFAULT_LENGTH[task]),
                             args.samples, args.data_seed, args.sentences)


def _variants(args) -> list[str]:
    return ["baseline", "simplified"] if args.variant == "both" else [args.variant]


def _spec(args, variant, task):
    sizes = _ints(args.sizes or DEFAULT_SIZES[args.model])
    return spec_for_task(args.model, variant, task, args.embed_size, sizes, alpha=args.alpha,
                         char_embed_size=args.char_embed_size, attention_size=args.attention_size)


def cmd_bench(args) -> int:
    task = _task(args, args.model)
    data = generate(task)
    reports, failed = [], False
    for variant in _variants(args):
        config = RunConfig(_spec(args, variant, task), task, learning_rate=args.learning_rate,
                           batch_size=args.batch_size, epochs=args.epochs, alpha=args.alpha,
                           seed=args.seed, precision=args.precision, max_span_len=args.max_span_len,
                           holdout=args.holdout, output=args.output)
        report = train_run(config, data)
        reports.append(report)
        print(f"{report.family} {report.variant}: params={report.trainable_params} "
              f"median_secs={report.median_secs:.4f} final={json.dumps(report.final, sort_keys=True)}")
        if report.diverged:
            print(f"FAIL {report.family} {report.variant} diverged after {report.epochs_run} epoch(s)")
            failed = True
    if args.output:
        emit_report(reports, args.output, "csv")
    if args.markdown:
        emit_report(reports, args.markdown, "markdown")
    if args.json:
        Path(args.json).parent.mkdir(parents=True, exist_ok=True)
        Path(args.json).write_text(json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True))
    if not (args.output or args.markdown):
        from .bench.report import render_markdown
        sys.stdout.write(render_markdown(reports))
    if args.check:
        failed |= not _efficiency_check(reports)
    return 1 if failed else 0


def _efficiency_check(reports) -> bool:
    by = {r.variant: r for r in reports}
    if set(by) != {"baseline", "simplified"}:
        print("FAIL --check needs both variants")
        return False
    b, s = by["baseline"], by["simplified"]
    ok = True
    for name, bv, sv in (("params", b.trainable_params, s.trainable_params),
                         ("median_secs", b.median_secs, s.median_secs)):
        passed = sv < bv
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} {name}: simplified {sv:.6g} < baseline {bv:.6g} "
              f"(ratio {sv / bv:.4f})")
    return ok


def _cell_checks(rng, trials, tol):
    steps = {"GRU": gru_step, "MGU": mgu_step, "SGU": sgu_step}
    for kind, step in steps.items():
        for trial in range(trials):
            x_size, h_size, b = (int(v) for v in rng.integers(1, 6, size=3))
            cfg = CellConfig(kind, x_size, h_size)
            weights = init_weights(cfg, rng, np.float64)
            h = ad.Tensor(rng.uniform(-1, 1, (b, h_size)), requires_grad=True)
            x = ad.Tensor(rng.normal(size=(b, x_size)), requires_grad=True)
            probe = rng.normal(size=(b, h_size))
            inputs = [h, x, *weights.values()]
            rep = ad.grad_check(lambda: ad.sum(step(weights, h, x) * probe), inputs, tol=tol, seed=trial)
            yield f"{kind} h={h_size} x={x_size} b={b}", rep


def _tiny_batch(family, task, n=3):
    data = generate(task)
    return next(iter(batchify(data.samples[:n], n, None, collate_fn(data))))


def _model_checks(tol, seed):
    tiny = {
        "HRED": (SyntheticTaskSpec("copy", 20, (2, 3), 3, seed), 4, (4, 4, 4)),
        "RNET": (SyntheticTaskSpec("toy_qa", 20, (3, 5), 3, seed), 4, (2, 4, 4, 4)),
    }
    for family, (task, e, sizes) in tiny.items():
        batch = _tiny_batch(family, task)
        for variant in ("baseline", "simplified"):
            spec = spec_for_task(family, variant, task, e, sizes, char_embed_size=3)
            model = build_model(spec, seed=seed, dtype=np.float64)
            rep = ad.grad_check(lambda: model(batch).loss, model.parameters(), tol=tol,
                                max_elements=20, seed=seed, ref_dtype=np.longdouble)
            yield f"{family} {variant} loss", rep


def cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    failed = 0
    for label, rep in (*_cell_checks(rng, args.trials, args.tol), *_model_checks(args.tol, args.seed)):
        print(f"{'PASS' if rep.passed else 'FAIL'} {label}: max rel err {rep.max_rel_err:.3e}")
        failed += not rep.passed
    return 1 if failed else 0


def cmd_params(args) -> int:
    task = SyntheticTaskSpec(DEFAULT_TASK[args.model], args.vocab_size)
    out = {}
    for variant in _variants(args):
        audit = param_audit(build_model(_spec(args, variant, task)))
        out[variant] = audit
        print(f"{args.model} {variant}: total {audit['total']}")
        for layer, count in audit["layers"].items():
            print(f"  {layer:<20} {count}")
    if len(out) == 2:
        print(f"ratio simplified/baseline: {out['simplified']['total'] / out['baseline']['total']:.4f}")
    if args.json:
        Path(args.json).write_text(json.dumps(out, indent=2))
    return 0


def cmd_gen(args) -> int:
    task = args.task or "copy"
    spec = SyntheticTaskSpec(task, args.vocab_size, _ints(args.length or DEFAULT_LENGTH[task]),
                             args.samples, args.data_seed, args.sentences)
    dataset = generate(spec)
    write_dataset(dataset, args.out)
    print(f"wrote {len(dataset)} {dataset.kind} records to {args.out}")
    return 0


COMMANDS = {"bench": cmd_bench, "gradcheck": cmd_gradcheck, "params": cmd_params, "gen": cmd_gen}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = apply_config_file(args)
        if args.command in ("bench", "params") and args.alpha is None:
            args.alpha = DEFAULT_ALPHA[args.model]
        return COMMANDS[args.command](args)
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
