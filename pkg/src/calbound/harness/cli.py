"""Command-line front end.

Exit codes: 0 on success, 2 for validation problems (bad flags, malformed
dumps, impossible configs), 3 when an experiment grid cell fails.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from ..bounds import BoundInputs, BoundKind, evaluate_bound
from ..core import Rng, ValidationError
from ..ece import ece_full_k, ece_top_label, optimal_bins_1d, optimal_bins_per_dim
from ..recal import PbrConfig, temperature_scaling_fit, train_pbr
from ..synthetic import BinarySpec, gen_binary, gen_multiclass, spec_from_json, with_n
from .experiments import (
    ALPHA_GRID,
    METHODS,
    ExperimentCellError,
    attach_dump_path,
    compare_methods,
    convergence_experiment,
    kl_gap_experiment,
)
from .io import load_dump, write_dump

_KIND_NAMES = {
    "total_bias_test": BoundKind.TotalBiasTest,
    "pac_bias_train": BoundKind.PacBiasTrain,
    "ce_k": BoundKind.CeKBias,
    "gen_recal": BoundKind.GenRecal,
    "bias_recal": BoundKind.BiasRecal,
    "joint_acc_tce": BoundKind.JointAccTce,
}


def _emit(payload: dict, out: str | None, fmt: str) -> None:
    """Write a flat result object as JSON or two-column CSV."""
    if fmt == "json":
        text = json.dumps(payload, indent=2)
        if out:
            Path(out).write_text(text + "\n")
        else:
            print(text)
        return
    rows = [(k, json.dumps(v) if isinstance(v, (dict, list)) else v)
            for k, v in payload.items()]
    if out:
        with open(out, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["key", "value"])
            writer.writerows(rows)
    else:
        writer = csv.writer(sys.stdout)
        writer.writerow(["key", "value"])
        writer.writerows(rows)


def _emit_report(report, out: str | None, fmt: str) -> None:
    if fmt == "csv":
        if not out:
            raise ValidationError("csv report output needs --out")
        report.write_cells_csv(out)
        return
    if out:
        report.write_json(out)
    else:
        print(report.to_json())


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0, help="master seed override")
    parser.add_argument("--out", help="output path (stdout when omitted)")
    parser.add_argument("--format", choices=("json", "csv"), default="json")


def _load_spec(path: str, seed: int | None, n: int | None):
    spec = spec_from_json(Path(path).read_text())
    if seed is not None:
        spec = with_n(spec, spec.n, Rng(seed))
    if n is not None:
        spec = with_n(spec, n)
    return spec


def _alpha_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ValidationError(f"bad alpha grid {text!r}")


def _cmd_ece(args) -> int:
    dump = load_dump(args.dump, args.dump_format, args.mode)
    if args.full_k:
        bins = args.bins or optimal_bins_per_dim(dump.n, dump.num_classes)
        value = ece_full_k(dump.data, bins)
        estimator = "full_k"
    else:
        bins = args.bins or optimal_bins_1d(dump.n)
        value = ece_top_label(dump.data, bins)
        estimator = "top_label"
    _emit(
        {"ece": value, "estimator": estimator, "bins": bins,
         "n": dump.n, "num_classes": dump.num_classes, "source": dump.source},
        args.out, args.format,
    )
    return 0


def _cmd_synthesize(args) -> int:
    spec = _load_spec(args.spec, args.seed if args.reseed else None, args.n)
    data = gen_binary(spec) if isinstance(spec, BinarySpec) else gen_multiclass(spec)
    if not args.out:
        raise ValidationError("synthesize needs --out for the dump file")
    fmt = args.format if args.format != "json" else "csv"
    if args.format == "json":
        fmt = "jsonl" if args.out.endswith((".jsonl", ".ndjson")) else "csv"
    write_dump(data, args.out, fmt=fmt, mode=args.mode)
    print(f"wrote {data.n} rows x {data.num_classes} classes to {args.out}")
    return 0


def _cmd_bounds(args) -> int:
    lam = "auto" if args.lam == "auto" else float(args.lam)
    inputs = BoundInputs(
        n=args.n,
        num_bins=args.bins,
        epsilon=args.epsilon,
        lipschitz=args.lipschitz,
        lam=lam,
        kl=args.kl,
        num_classes=args.classes,
        assume_density=args.assume_density,
    )
    kind = _KIND_NAMES[args.kind]
    cert = evaluate_bound(kind, inputs, empirical_term=args.empirical)
    _emit(cert.to_dict(), args.out, args.format)
    return 0


def _cmd_recalibrate(args) -> int:
    dump = load_dump(args.dump)
    data = dump.data
    payload: dict = {"source": dump.source, "n": dump.n, "num_classes": dump.num_classes,
                     "method": args.method}
    if args.method == "temperature":
        fitted = temperature_scaling_fit(data)
        payload["map"] = fitted.to_dict()
    else:
        objective = "brier" if args.method == "pbr" else "brier_plus_loss"
        cfg = PbrConfig(
            family=args.family,
            alpha=args.alpha,
            seed=args.seed,
            objective=objective,
        )
        result = train_pbr(data, cfg)
        payload["map"] = result.map.to_dict()
        payload["posterior"] = result.posterior.to_dict()
        payload["kl"] = result.kl
        payload["final_objective"] = result.final_objective
        payload["steps"] = result.steps
        payload["config"] = cfg.to_dict()
    _emit(payload, args.out, args.format)
    return 0


def _cmd_experiment(args) -> int:
    if args.which == "convergence":
        spec = _load_spec(args.spec, args.seed if args.reseed else None, None)
        report = convergence_experiment(
            spec,
            [int(x) for x in args.n_grid.split(",")],
            args.seeds,
            bin_rule="optimal" if args.bins is None else args.bins,
            workers=args.workers,
        )
    else:
        if bool(args.spec) == bool(args.dump):
            raise ValidationError("pass exactly one of --spec or --dump")
        if args.spec:
            source = _load_spec(args.spec, args.seed if args.reseed else None, None)
        else:
            dump = load_dump(args.dump)
            source = attach_dump_path(dump.data, dump.source)
        if args.which == "klgap":
            report = kl_gap_experiment(
                source,
                alpha_grid=_alpha_list(args.alpha_grid),
                replicates=args.replicates,
                n_re=args.n_re,
                cfg=PbrConfig(family=args.family),
                seed=args.seed,
            )
        else:
            report = compare_methods(
                source,
                methods=[m.strip() for m in args.methods.split(",") if m.strip()],
                folds=args.folds,
                n_re=args.n_re,
                n_te=args.n_te,
                cfg=PbrConfig(family=args.family),
                seed=args.seed,
            )
    _emit_report(report, args.out, args.format)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="calbound",
        description="Calibration-error estimation, certificates, and recalibration",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ece", help="estimate calibration error of a dump")
    p.add_argument("--dump", required=True)
    p.add_argument("--dump-format", choices=("auto", "csv", "jsonl"), default="auto")
    p.add_argument("--mode", choices=("auto", "probs", "logits"), default="auto")
    p.add_argument("--bins", type=int)
    p.add_argument("--full-k", action="store_true", help="bin the full probability vector")
    _add_common(p)
    p.set_defaults(fn=_cmd_ece)

    p = sub.add_parser("synthesize", help="generate a dump from a spec JSON")
    p.add_argument("--spec", required=True)
    p.add_argument("--n", type=int, help="override the spec sample count")
    p.add_argument("--reseed", action="store_true", help="replace the spec seed with --seed")
    p.add_argument("--mode", choices=("probs", "logits"), default="probs")
    _add_common(p)
    p.set_defaults(fn=_cmd_synthesize)

    p = sub.add_parser("bounds", help="evaluate a certificate")
    p.add_argument("--kind", choices=sorted(_KIND_NAMES), required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--bins", type=int, required=True)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--lipschitz", type=float, default=0.0)
    p.add_argument("--lam", default="auto")
    p.add_argument("--kl", type=float, default=0.0)
    p.add_argument("--classes", type=int)
    p.add_argument("--assume-density", action="store_true")
    p.add_argument("--empirical", type=float, default=0.0,
                   help="empirical loss-plus-Brier term for the joint bound")
    _add_common(p)
    p.set_defaults(fn=_cmd_bounds)

    p = sub.add_parser("recalibrate", help="fit a recalibration map to a dump")
    p.add_argument("--dump", required=True)
    p.add_argument("--method", choices=("temperature", "pbr", "pbr_total"),
                   default="temperature")
    p.add_argument("--family", choices=("temperature", "vector_scale", "affine"),
                   default="temperature")
    p.add_argument("--alpha", type=float, default=0.25)
    _add_common(p)
    p.set_defaults(fn=_cmd_recalibrate)

    p = sub.add_parser("experiment", help="run a replayable experiment")
    which = p.add_subparsers(dest="which", required=True)

    c = which.add_parser("convergence", help="estimator bias against sample size")
    c.add_argument("--spec", required=True)
    c.add_argument("--n-grid", required=True, help="comma-separated sample sizes")
    c.add_argument("--seeds", type=int, default=20)
    c.add_argument("--bins", type=int, help="fixed bin count (default: optimal rule)")
    c.add_argument("--workers", type=int, default=1)
    c.add_argument("--reseed", action="store_true")
    _add_common(c)
    c.set_defaults(fn=_cmd_experiment)

    k = which.add_parser("klgap", help="posterior KL against the train/test ECE gap")
    k.add_argument("--spec")
    k.add_argument("--dump")
    k.add_argument("--alpha-grid", default=",".join(str(a) for a in ALPHA_GRID))
    k.add_argument("--replicates", type=int, default=10)
    k.add_argument("--n-re", type=int, default=1000)
    k.add_argument("--family", choices=("temperature", "vector_scale", "affine"),
                   default="temperature")
    k.add_argument("--reseed", action="store_true")
    _add_common(k)
    k.set_defaults(fn=_cmd_experiment)

    m = which.add_parser("compare", help="score recalibration methods on held-out data")
    m.add_argument("--spec")
    m.add_argument("--dump")
    m.add_argument("--methods", default="uncalibrated,temperature,pbr",
                   help=f"comma-separated subset of {','.join(METHODS)}")
    m.add_argument("--folds", type=int, default=5)
    m.add_argument("--n-re", type=int)
    m.add_argument("--n-te", type=int)
    m.add_argument("--family", choices=("temperature", "vector_scale", "affine"),
                   default="temperature")
    m.add_argument("--reseed", action="store_true")
    _add_common(m)
    m.set_defaults(fn=_cmd_experiment)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except ValidationError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except ExperimentCellError as err:
        print(f"experiment cell failed: {err}", file=sys.stderr)
        return 3
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())
