"""Desk-scale experiments: estimator convergence, KL-vs-gap, method comparison.

Every experiment derives one independent random stream per grid cell from the
master seed, so results do not depend on execution order and serial and
threaded runs produce identical reports. Reports embed their full config and
can be re-run bit-exactly through :func:`replay`.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from typing import Optional, Sequence, Union

import numpy as np

from ..core import PredictionSet, Rng, ValidationError
from ..ece import ece_full_k, ece_gap, ece_top_label, optimal_bins_1d, optimal_bins_per_dim
from ..recal import (
    PbrConfig,
    RecalMap,
    brier_score,
    recalibrate_set,
    softmax_cross_entropy,
    temperature_scaling_fit,
    train_pbr,
)
from ..synthetic import (
    BinarySpec,
    MulticlassSpec,
    gen_binary,
    gen_multiclass,
    spec_from_dict,
    true_ce_k,
    true_tce,
    with_n,
)
from .io import PredictionDump, load_dump
from .report import ExperimentReport, make_report
from .stats import fit_loglog_slope, kendall_tau, pearson

# The KL-weight grid swept by the recalibration experiments.
ALPHA_GRID = (0.0, 0.01, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0)

METHODS = ("uncalibrated", "temperature", "pbr", "pbr_total")

# n_grid must span at least this max/min ratio (1.5 decades) for a slope fit.
_MIN_SPAN = 10.0**1.5

Source = Union[BinarySpec, MulticlassSpec, PredictionSet, PredictionDump]


def _as_source(source: Source) -> Union[BinarySpec, MulticlassSpec, PredictionSet]:
    """Unwrap a loaded dump, keeping its file of origin on the set."""
    if isinstance(source, PredictionDump):
        return attach_dump_path(source.data, source.source)
    return source


class ExperimentCellError(RuntimeError):
    """A grid cell failed; carries the cell descriptor for diagnosis."""

    def __init__(self, cell: dict, cause: Exception):
        super().__init__(f"cell {cell} failed: {cause}")
        self.cell = cell
        self.cause = cause


def _run_cells(fn, args, workers: int):
    def guarded(arg):
        try:
            return fn(arg)
        except ExperimentCellError:
            raise
        except Exception as err:
            raise ExperimentCellError({"args": repr(arg)}, err) from err

    if workers <= 1:
        return [guarded(a) for a in args]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(guarded, args))


def _generate(spec: Source, n: int, rng: Rng) -> PredictionSet:
    spec = with_n(spec, n, rng)
    return gen_binary(spec) if isinstance(spec, BinarySpec) else gen_multiclass(spec)


def convergence_experiment(
    spec: Union[BinarySpec, MulticlassSpec],
    n_grid: Sequence[int],
    seeds: int,
    bin_rule: Union[str, int] = "optimal",
    workers: int = 1,
    oracle_samples: int = 1_000_000,
) -> ExperimentReport:
    """Median |estimate - truth| against n, with a log-log slope fit.

    Binary specs use the quadrature oracle and the top-label estimator;
    multiclass specs use the Monte Carlo oracle and the full L1 estimator
    with bin_rule counting bins per dimension.
    """
    n_grid = [int(n) for n in n_grid]
    if len(n_grid) < 4:
        raise ValidationError("n_grid needs at least 4 points")
    if any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise ValidationError("n_grid must be strictly ascending")
    if n_grid[-1] < _MIN_SPAN * n_grid[0]:
        raise ValidationError("n_grid must span at least 1.5 decades")
    if seeds < 20:
        raise ValidationError("need at least 20 seeds per n")
    if isinstance(bin_rule, str) and bin_rule != "optimal":
        raise ValidationError(f"bin rule must be 'optimal' or an integer, got {bin_rule!r}")

    binary = isinstance(spec, BinarySpec)
    if binary:
        oracle, oracle_stderr = true_tce(spec), 0.0
    else:
        oracle, oracle_stderr = true_ce_k(spec, oracle_samples)

    def bins_for(n: int) -> int:
        if bin_rule == "optimal":
            return optimal_bins_1d(n) if binary else optimal_bins_per_dim(n, spec.num_classes)
        return int(bin_rule)

    def run_cell(cell):
        i_n, seed = cell
        n = n_grid[i_n]
        rng = spec.rng.stream(i_n).stream(seed)
        data = _generate(spec, n, rng)
        bins = bins_for(n)
        est = ece_top_label(data, bins) if binary else ece_full_k(data, bins)
        return {
            "n": n,
            "seed": seed,
            "bins": bins,
            "estimate": est,
            "deviation": abs(est - oracle),
        }

    grid = [(i, s) for i in range(len(n_grid)) for s in range(seeds)]
    cells = sorted(_run_cells(run_cell, grid, workers), key=lambda c: (c["n"], c["seed"]))

    medians = []
    for n in n_grid:
        devs = [c["deviation"] for c in cells if c["n"] == n]
        medians.append(float(np.median(devs)))
    fit = fit_loglog_slope(n_grid, medians)
    summary = {
        "oracle": oracle,
        "oracle_stderr": oracle_stderr,
        "median_deviation": dict(zip(map(str, n_grid), medians)),
        "slope": fit.slope,
        "slope_stderr": fit.stderr,
        "intercept": fit.intercept,
    }
    config = {
        "spec": spec.to_dict(),
        "n_grid": n_grid,
        "seeds": seeds,
        "bin_rule": bin_rule,
        "oracle_samples": oracle_samples,
    }
    return make_report("convergence", config, cells, summary)


def _split_source(
    source: Source, n_re: int, n_te: int, fold: int, seed: int
) -> tuple[PredictionSet, PredictionSet]:
    """Fold data: fresh draws for specs, a seeded shuffle-split for fixed sets."""
    if isinstance(source, (BinarySpec, MulticlassSpec)):
        base = source.rng.stream(fold)
        return (
            _generate(source, n_re, base.stream(0)),
            _generate(source, n_te, base.stream(1)),
        )
    if source.n < n_re + n_te:
        raise ValidationError(
            f"dump has {source.n} rows, fewer than n_re + n_te = {n_re + n_te}"
        )
    order = Rng(seed).stream(fold).generator().permutation(source.n)
    return source.subset(order[:n_re]), source.subset(order[n_re : n_re + n_te])


def _fit_pbr_with_alpha_selection(
    data_re: PredictionSet,
    cfg: PbrConfig,
    alpha_grid: Sequence[float],
    seed: int,
) -> tuple[RecalMap, float, float]:
    """Sweep the KL weight, keep the alpha whose map best calibrates the fit set."""
    bins_re = optimal_bins_1d(data_re.n)
    best = None
    for ia, alpha in enumerate(alpha_grid):
        cell_cfg = replace(cfg, alpha=float(alpha), seed=seed + 7919 * ia)
        result = train_pbr(data_re, cell_cfg)
        score = ece_top_label(recalibrate_set(result.map, data_re), bins_re)
        if best is None or score < best[0]:
            best = (score, alpha, result)
    return best[2].map, float(best[1]), float(best[0])


def kl_gap_experiment(
    source: Source,
    alpha_grid: Sequence[float] = ALPHA_GRID,
    replicates: int = 10,
    n_re: int = 1000,
    cfg: Optional[PbrConfig] = None,
    seed: int = 0,
) -> ExperimentReport:
    """Sweep the KL weight and correlate posterior KL with the train/test ECE gap.

    The held-out set matches the recalibration set size, and the gap is the
    absolute ECE difference of the recalibrated model between the two sets at
    floor(n_re^(1/3)) bins.
    """
    source = _as_source(source)
    if len(alpha_grid) < 2:
        raise ValidationError("alpha grid needs at least 2 values")
    if replicates < 1:
        raise ValidationError("need at least 1 replicate")
    cfg = cfg or PbrConfig()
    bins = optimal_bins_1d(n_re)

    cells = []
    per_replicate = []
    for r in range(replicates):
        data_re, data_te = _split_source(source, n_re, n_re, r, seed)
        kls, gaps = [], []
        for ia, alpha in enumerate(alpha_grid):
            cell = {"replicate": r, "alpha": float(alpha)}
            try:
                cell_cfg = replace(cfg, alpha=float(alpha), seed=seed + 100003 * r + 7919 * ia)
                result = train_pbr(data_re, cell_cfg)
                re_cal = recalibrate_set(result.map, data_re)
                te_cal = recalibrate_set(result.map, data_te)
                cell["kl"] = result.kl
                cell["gap"] = ece_gap(te_cal, re_cal, bins)
            except Exception as err:
                raise ExperimentCellError(cell, err) from err
            kls.append(cell["kl"])
            gaps.append(cell["gap"])
            cells.append(cell)
        per_replicate.append(
            {"replicate": r, "pearson": pearson(kls, gaps), "kendall": kendall_tau(kls, gaps)}
        )

    pearsons = [p["pearson"] for p in per_replicate]
    positive = sum(1 for v in pearsons if not math.isnan(v) and v > 0)
    pooled_p = pearson([c["kl"] for c in cells], [c["gap"] for c in cells])
    summary = {
        "bins": bins,
        "per_replicate": per_replicate,
        "positive_pearson": positive,
        "replicates": replicates,
        "pooled_pearson": pooled_p,
    }
    config = {
        "source": _source_config(source),
        "alpha_grid": [float(a) for a in alpha_grid],
        "replicates": replicates,
        "n_re": n_re,
        "cfg": cfg.to_dict(),
        "seed": seed,
    }
    return make_report("klgap", config, cells, summary)


def _metrics(data: PredictionSet, bins: int) -> dict:
    return {
        "ece": ece_top_label(data, bins),
        "accuracy": float(data.top_hits().mean()),
        "brier": brier_score(data),
        "cross_entropy": softmax_cross_entropy(data),
    }


def compare_methods(
    source: Source,
    methods: Sequence[str] = ("uncalibrated", "temperature", "pbr"),
    folds: int = 5,
    n_re: Optional[int] = None,
    n_te: Optional[int] = None,
    cfg: Optional[PbrConfig] = None,
    alpha_grid: Sequence[float] = ALPHA_GRID,
    seed: int = 0,
) -> ExperimentReport:
    """Fit each method per fold and score it on the held-out split.

    The default split keeps 1000 rows for recalibration and 9000 for testing
    when the source is that large, scaling down proportionally otherwise.
    """
    source = _as_source(source)
    if folds < 2:
        raise ValidationError("need at least 2 folds")
    for m in methods:
        if m not in METHODS:
            raise ValidationError(f"unknown method {m!r}; choose from {METHODS}")
    if not methods:
        raise ValidationError("need at least one method")
    cfg = cfg or PbrConfig()

    if isinstance(source, (BinarySpec, MulticlassSpec)):
        n_re = n_re or 1000
        n_te = n_te or 9000
    else:
        n_re = n_re or min(1000, max(2, source.n // 5))
        n_te = n_te or source.n - n_re
    if n_re < 2 or n_te < 2:
        raise ValidationError(f"split n_re={n_re}, n_te={n_te} is too small")
    bins_te = optimal_bins_1d(n_te)

    cells = []
    for fold in range(folds):
        data_re, data_te = _split_source(source, n_re, n_te, fold, seed)
        for method in methods:
            cell = {"fold": fold, "method": method}
            try:
                extras = {}
                if method == "uncalibrated":
                    fitted = RecalMap.identity("temperature", data_re.num_classes)
                elif method == "temperature":
                    fitted = temperature_scaling_fit(data_re)
                    extras["t"] = fitted.t
                else:
                    objective = "brier" if method == "pbr" else "brier_plus_loss"
                    fold_cfg = replace(cfg, objective=objective)
                    fitted, alpha, _ = _fit_pbr_with_alpha_selection(
                        data_re, fold_cfg, alpha_grid, seed + 100003 * fold
                    )
                    extras["alpha"] = alpha
                    if fitted.family == "temperature":
                        extras["t"] = fitted.t
                cell.update(_metrics(recalibrate_set(fitted, data_te), bins_te))
                cell.update(extras)
            except Exception as err:
                raise ExperimentCellError(cell, err) from err
            cells.append(cell)

    by_method = {}
    for method in methods:
        rows = [c for c in cells if c["method"] == method]
        agg = {}
        for key in ("ece", "accuracy", "brier", "cross_entropy"):
            vals = [r[key] for r in rows]
            agg[key] = {"mean": float(np.mean(vals)), "std": float(np.std(vals))}
        by_method[method] = agg
    best = {
        "ece": min(methods, key=lambda m: by_method[m]["ece"]["mean"]),
        "accuracy": max(methods, key=lambda m: by_method[m]["accuracy"]["mean"]),
        "brier": min(methods, key=lambda m: by_method[m]["brier"]["mean"]),
        "cross_entropy": min(methods, key=lambda m: by_method[m]["cross_entropy"]["mean"]),
    }
    summary = {"n_re": n_re, "n_te": n_te, "bins_te": bins_te,
               "by_method": by_method, "best": best}
    config = {
        "source": _source_config(source),
        "methods": list(methods),
        "folds": folds,
        "n_re": n_re,
        "n_te": n_te,
        "cfg": cfg.to_dict(),
        "alpha_grid": [float(a) for a in alpha_grid],
        "seed": seed,
    }
    return make_report("compare", config, cells, summary)


def _source_config(source: Source) -> dict:
    if isinstance(source, (BinarySpec, MulticlassSpec)):
        return {"spec": source.to_dict()}
    path = getattr(source, "_dump_path", None)
    return {"dump": path} if path else {"inline": {"n": source.n, "num_classes": source.num_classes}}


def attach_dump_path(data: PredictionSet, path: str) -> PredictionSet:
    """Tag a prediction set with its file of origin so reports stay replayable."""
    object.__setattr__(data, "_dump_path", str(path))
    return data


def _source_from_config(cfg: dict) -> Source:
    if "spec" in cfg:
        return spec_from_dict(cfg["spec"])
    if cfg.get("dump"):
        dump = load_dump(cfg["dump"])
        return attach_dump_path(dump.data, dump.source)
    raise ValidationError("report source was an in-memory set; cannot replay")


def replay(report: Union[ExperimentReport, dict]) -> ExperimentReport:
    """Re-run an experiment from its embedded config."""
    if isinstance(report, dict):
        report = ExperimentReport.from_dict(report)
    cfg = report.config
    if report.kind == "convergence":
        return convergence_experiment(
            spec_from_dict(cfg["spec"]),
            cfg["n_grid"],
            cfg["seeds"],
            bin_rule=cfg["bin_rule"],
            oracle_samples=cfg["oracle_samples"],
        )
    if report.kind == "klgap":
        return kl_gap_experiment(
            _source_from_config(cfg["source"]),
            alpha_grid=cfg["alpha_grid"],
            replicates=cfg["replicates"],
            n_re=cfg["n_re"],
            cfg=PbrConfig.from_dict(cfg["cfg"]),
            seed=cfg["seed"],
        )
    if report.kind == "compare":
        return compare_methods(
            _source_from_config(cfg["source"]),
            methods=cfg["methods"],
            folds=cfg["folds"],
            n_re=cfg["n_re"],
            n_te=cfg["n_te"],
            cfg=PbrConfig.from_dict(cfg["cfg"]),
            alpha_grid=cfg["alpha_grid"],
            seed=cfg["seed"],
        )
    raise ValidationError(f"unknown report kind {report.kind!r}")
