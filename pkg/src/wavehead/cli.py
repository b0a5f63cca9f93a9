"""Command-line entry point.

Exit codes: 0 success, 1 validation error, 2 numerical failure, 3 IO error.
"""

import argparse
import json
import sys

from . import BACKEND, __version__
from .data import SyntheticConfig, generate_synthetic, write_features, write_features_csv
from .errors import GradientCheckError, ValidationError, WaveheadError
from .harness import (
    emit_report,
    load_config,
    load_features,
    predict,
    run_ablation,
    run_ood,
    run_sweep,
)
from .heads import HeadDims, HeadVariant, load_params, save_params
from .metrics import calibration_report
from .training import TrainSchedule, gradcheck, train

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})") from exc


def _write_json(doc, path):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _seed(text):
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def cmd_gen_features(args):
    doc = _read_json(args.config)
    seed = int(doc.pop("seed", 0))
    label = str(doc.pop("label", ""))
    cfg = SyntheticConfig.from_dict(doc)
    ds = generate_synthetic(cfg, seed, label=label)
    if args.out.lower().endswith(".csv"):
        write_features_csv(ds, args.out)
    else:
        write_features(ds, args.out)
    print(f"wrote {len(ds)} x {ds.dim} features to {args.out} (sha256 {ds.checksum()[:12]})")


def cmd_train(args):
    variant = HeadVariant.parse(args.variant)
    schedule = TrainSchedule.from_dict(_read_json(args.schedule)) if args.schedule else TrainSchedule()
    ds = load_features(args.features)
    dims = HeadDims(n=ds.dim, d=args.d, C=ds.n_classes, h=args.h)
    result = train(variant, ds, schedule, args.seed, dims=dims)
    save_params(result.params, args.out)
    print(f"{variant.value}: {result.params.n_params()} params, final loss {result.loss_history[-1]:.6f}")


def cmd_evaluate(args):
    params = load_params(args.params)
    ds = load_features(args.features)
    if args.soft_labels and ds.soft_labels is None:
        raise ValidationError(f"{args.features} carries no soft labels")
    pred = predict(params, ds.features, params.seed)
    rep = calibration_report(pred, ds.labels, ds.soft_labels if args.soft_labels else None, args.bins)
    doc = {
        "variant": params.variant.value,
        "n_params": params.n_params(),
        "features_checksum": ds.checksum(),
        "metrics": rep.metrics(),
        "bins": rep.bins.to_dict(),
    }
    _write_json(doc, args.out)
    print(" ".join(f"{k}={v:.6f}" for k, v in rep.metrics().items()))


def cmd_ablate(args):
    cfg = load_config(args.config)
    if args.workers is not None:
        cfg.workers = args.workers
    report = run_ablation(cfg)
    emit_report(report, args.out)
    failed = [f"{r.variant}/{r.seed}" for r in report.records if r.status != "ok"]
    for v, agg in report.aggregates.items():
        if "ece" in agg:
            print(f"{v:14s} acc {agg['accuracy']['mean']:.4f}  ece {agg['ece']['mean']:.4f}")
    if failed:
        print(f"failed cells: {', '.join(failed)}", file=sys.stderr)


def cmd_ood(args):
    params = load_params(args.params)
    id_ds = load_features(args.id)
    sources = {p: load_features(p) for p in args.ood}
    doc = run_ood(params, id_ds, sources, tuple(args.score))
    if any(r["auroc"] is None for r in doc["results"]):
        raise ValidationError(f"{params.variant.value} has no logits; energy score unavailable")
    _write_json(doc, args.out)
    for r in doc["results"]:
        print(f"{r['source']} {r['score']}: auroc {r['auroc']:.4f} fpr95 {r['fpr95']:.4f}")


def cmd_sweep(args):
    cfg = load_config(args.config)
    if args.workers is not None:
        cfg.workers = args.workers
    report = run_sweep(cfg)
    emit_report(report, args.out)
    for c in report.sweep:
        print(f"Tw={c['warmup_epochs']:<3d} d={c['d']:<4d} ece {c['ece_mean']}")


def cmd_gradcheck(args):
    variants = list(HeadVariant) if args.variant.lower() == "all" else [HeadVariant.parse(args.variant)]
    bad = []
    for v in variants:
        rep = gradcheck(v, seed=args.seed)
        worst = max(rep.max_rel_error, key=rep.max_rel_error.get)
        print(f"{v.value:14s} worst tensor {worst:5s} rel err {rep.max_rel_error[worst]:.3e}  "
              f"{'ok' if rep.passed else 'FAIL'}")
        if not rep.passed:
            bad.append(v.value)
    if bad:
        raise GradientCheckError(f"gradient check failed for {', '.join(bad)}")


class _Parser(argparse.ArgumentParser):
    # usage errors are validation errors, not argparse's default status 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="wavehead", description="Calibration heads on fixed features.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__} ({BACKEND} kernels)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-features", help="draw a synthetic feature file")
    s.add_argument("--config", required=True, help="JSON synthetic generator config")
    s.add_argument("--out", required=True, help="output path (.csv for CSV, else FCAL)")
    s.set_defaults(func=cmd_gen_features)

    s = sub.add_parser("train", help="train one head")
    s.add_argument("--variant", required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--seed", type=_seed, default=42)
    s.add_argument("--schedule", help="JSON training schedule")
    s.add_argument("--d", type=int, default=64, help="Hilbert dimension")
    s.add_argument("--h", type=int, default=128, help="MLP hidden width")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="calibration metrics of a trained head")
    s.add_argument("--params", required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--soft-labels", action="store_true", help="also report KL to the file's soft labels")
    s.add_argument("--bins", type=int, default=15)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("ablate", help="variants x seeds on shared features")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("ood", help="OOD detection scores of a trained head")
    s.add_argument("--params", required=True)
    s.add_argument("--id", required=True)
    s.add_argument("--ood", required=True, nargs="+")
    s.add_argument("--score", choices=("msp", "energy"), action="append", help="repeatable; default both")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ood)

    s = sub.add_parser("sweep", help="NoBorn ECE over Hilbert dimension x warmup")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("gradcheck", help="analytic vs finite-difference gradients")
    s.add_argument("--variant", required=True, help="variant tag or 'all'")
    s.add_argument("--seed", type=_seed, default=42)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "score", "unset") is None:
        args.score = ["msp", "energy"]
    try:
        args.func(args)
    except WaveheadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, TypeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FloatingPointError, ArithmeticError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
