"""Synthetic prediction generators whose true calibration error is known.

The binary generator draws a top-class confidence c on [1/2, 1] and makes the
label hit with probability g(c), so the true conditional accuracy given the
prediction is exactly the miscalibration map g and the true calibration error
is a 1-D integral solved by quadrature. The multiclass generator draws
probability vectors from a Dirichlet and labels from a distorted version m(f),
so E[e_Y | f] = m(f) and the true L1 error is a Monte Carlo average of
||m(f) - f||_1 with a reported standard error.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy import stats

from .core import PredictionSet, Rng, ValidationError

# Oracle quadrature stops when doubling the panel count moves the estimate
# by less than this.
QUADRATURE_TOL = 1e-8
_MAX_PANELS = 2**21

# Child-stream indexes reserved by the generators, so user-derived streams
# do not collide with internal draws.
_STREAM_ORACLE = 0xACE


class QuadratureError(RuntimeError):
    """Composite Simpson refinement failed to converge."""


@dataclass(frozen=True)
class ConfidenceLaw:
    """Distribution of the binary top-class confidence on [lo, hi] ⊆ [1/2, 1]."""

    kind: str
    lo: float
    hi: float
    a: float = 0.0
    b: float = 0.0

    def __post_init__(self):
        if self.kind not in ("uniform", "beta"):
            raise ValidationError(f"unknown confidence law {self.kind!r}")
        if not 0.5 <= self.lo < self.hi <= 1.0:
            raise ValidationError(
                f"support [{self.lo}, {self.hi}] must sit inside [0.5, 1]"
            )
        if self.kind == "beta" and (self.a <= 0 or self.b <= 0):
            raise ValidationError("beta shape parameters must be positive")

    @classmethod
    def uniform(cls, lo: float, hi: float) -> "ConfidenceLaw":
        return cls("uniform", lo, hi)

    @classmethod
    def beta(cls, a: float, b: float, lo: float = 0.5, hi: float = 1.0) -> "ConfidenceLaw":
        return cls("beta", lo, hi, a, b)

    def sample(self, gen: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "uniform":
            return gen.uniform(self.lo, self.hi, n)
        return self.lo + (self.hi - self.lo) * gen.beta(self.a, self.b, n)

    def pdf(self, c: np.ndarray) -> np.ndarray:
        c = np.asarray(c, dtype=float)
        width = self.hi - self.lo
        if self.kind == "uniform":
            inside = (c >= self.lo) & (c <= self.hi)
            return np.where(inside, 1.0 / width, 0.0)
        return stats.beta.pdf((c - self.lo) / width, self.a, self.b) / width


@dataclass(frozen=True)
class MiscalibrationMap1D:
    """Map g(c) giving the true hit probability at confidence c.

    lipschitz_constant is the declared bound used by the certificates; tests
    check it against the realized slope on a dense grid.
    """

    kind: str
    params: tuple = ()

    def __post_init__(self):
        if self.kind not in ("identity", "shift", "sine", "power"):
            raise ValidationError(f"unknown map kind {self.kind!r}")
        if self.kind == "power" and self.params[0] < 1.0:
            # Exponents below 1 have unbounded slope at 0, so no finite
            # constant could be declared for the whole unit interval.
            raise ValidationError("power map requires exponent >= 1")

    @classmethod
    def identity(cls) -> "MiscalibrationMap1D":
        return cls("identity")

    @classmethod
    def shift(cls, offset: float) -> "MiscalibrationMap1D":
        return cls("shift", (float(offset),))

    @classmethod
    def sine(cls, amplitude: float, frequency: float) -> "MiscalibrationMap1D":
        return cls("sine", (float(amplitude), float(frequency)))

    @classmethod
    def power(cls, exponent: float) -> "MiscalibrationMap1D":
        return cls("power", (float(exponent),))

    @property
    def lipschitz_constant(self) -> float:
        if self.kind == "identity" or self.kind == "shift":
            return 1.0
        if self.kind == "sine":
            amp, freq = self.params
            return 1.0 + abs(amp) * abs(freq) * math.pi
        return self.params[0]

    def __call__(self, c: np.ndarray) -> np.ndarray:
        c = np.asarray(c, dtype=float)
        if self.kind == "identity":
            out = c
        elif self.kind == "shift":
            out = c + self.params[0]
        elif self.kind == "sine":
            amp, freq = self.params
            out = c + amp * np.sin(freq * math.pi * c)
        else:
            out = c ** self.params[0]
        return np.clip(out, 0.0, 1.0)


@dataclass(frozen=True)
class BinarySpec:
    """Replayable recipe for a binary synthetic prediction set."""

    law: ConfidenceLaw
    map: MiscalibrationMap1D
    n: int
    rng: Rng

    def __post_init__(self):
        if self.n < 1:
            raise ValidationError(f"sample count must be >= 1, got {self.n}")

    def to_dict(self) -> dict:
        return {
            "kind": "binary",
            "law": {
                "kind": self.law.kind,
                "lo": self.law.lo,
                "hi": self.law.hi,
                "a": self.law.a,
                "b": self.law.b,
            },
            "map": {"kind": self.map.kind, "params": list(self.map.params)},
            "n": self.n,
            "seed": [self.rng.master_seed, self.rng.stream_id],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BinarySpec":
        law = ConfidenceLaw(
            d["law"]["kind"], d["law"]["lo"], d["law"]["hi"], d["law"]["a"], d["law"]["b"]
        )
        m = MiscalibrationMap1D(d["map"]["kind"], tuple(d["map"]["params"]))
        return cls(law, m, int(d["n"]), Rng(*d["seed"]))


def gen_binary(spec: BinarySpec) -> PredictionSet:
    """Draw a binary prediction set; class 0 is the top class on [1/2, 1].

    Confidences are drawn first and label uniforms second, so the stream
    layout is part of the contract and reruns are bit-identical.
    """
    gen = spec.rng.generator()
    conf = spec.law.sample(gen, spec.n)
    hit_prob = spec.map(conf)
    u = gen.uniform(0.0, 1.0, spec.n)
    labels = np.where(u < hit_prob, 0, 1)
    probs = np.column_stack([conf, 1.0 - conf])
    return PredictionSet.from_probs(probs, labels)


def _simpson(values: np.ndarray, h: float) -> float:
    return h / 3.0 * (values[0] + values[-1] + 4 * values[1::2].sum() + 2 * values[2:-2:2].sum())


def true_tce(spec: BinarySpec, tol: float = QUADRATURE_TOL) -> float:
    """True top-label calibration error E|g(c) - c| by composite Simpson.

    Panels are doubled until successive estimates agree within tol; the
    integrand has kinks at clip boundaries, so refinement rather than a fixed
    panel count is required.
    """
    lo, hi = spec.law.lo, spec.law.hi

    def integrand(c):
        return np.abs(spec.map(c) - c) * spec.law.pdf(c)

    panels = 64
    grid = np.linspace(lo, hi, panels + 1)
    previous = _simpson(integrand(grid), (hi - lo) / panels)
    while panels <= _MAX_PANELS:
        panels *= 2
        grid = np.linspace(lo, hi, panels + 1)
        current = _simpson(integrand(grid), (hi - lo) / panels)
        if abs(current - previous) < tol:
            return float(current)
        previous = current
    raise QuadratureError(
        f"Simpson refinement still moving {abs(current - previous):.3g} after "
        f"{panels} panels"
    )


@dataclass(frozen=True)
class MiscalibrationMapK:
    """Distortion m on the simplex; labels are drawn from m(f) given prediction f."""

    kind: str
    params: tuple = ()

    def __post_init__(self):
        if self.kind not in ("identity", "temperature", "mixture"):
            raise ValidationError(f"unknown map kind {self.kind!r}")
        if self.kind == "temperature" and self.params[0] <= 0:
            raise ValidationError("temperature must be positive")
        if self.kind == "mixture" and not 0.0 <= self.params[0] <= 1.0:
            raise ValidationError("mixture weight must lie in [0, 1]")

    @classmethod
    def identity(cls) -> "MiscalibrationMapK":
        return cls("identity")

    @classmethod
    def temperature(cls, t: float) -> "MiscalibrationMapK":
        return cls("temperature", (float(t),))

    @classmethod
    def mixture(cls, weight: float) -> "MiscalibrationMapK":
        return cls("mixture", (float(weight),))

    def __call__(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if self.kind == "identity":
            return f
        if self.kind == "temperature":
            # Exponent 1/T of the probabilities, renormalized: the prediction
            # f is sharper than the truth when T > 1.
            powered = np.maximum(f, 1e-300) ** (1.0 / self.params[0])
            return powered / powered.sum(axis=-1, keepdims=True)
        w = self.params[0]
        k = f.shape[-1]
        return (1.0 - w) * f + w / k


@dataclass(frozen=True)
class MulticlassSpec:
    """Replayable recipe for a K-class synthetic prediction set."""

    num_classes: int
    concentration: tuple
    map: MiscalibrationMapK
    n: int
    rng: Rng

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValidationError(f"need at least 2 classes, got {self.num_classes}")
        if len(self.concentration) != self.num_classes:
            raise ValidationError("concentration length must equal the class count")
        if any(a <= 0 for a in self.concentration):
            raise ValidationError("concentration entries must be positive")
        if self.n < 1:
            raise ValidationError(f"sample count must be >= 1, got {self.n}")

    def to_dict(self) -> dict:
        return {
            "kind": "multiclass",
            "num_classes": self.num_classes,
            "concentration": list(self.concentration),
            "map": {"kind": self.map.kind, "params": list(self.map.params)},
            "n": self.n,
            "seed": [self.rng.master_seed, self.rng.stream_id],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MulticlassSpec":
        m = MiscalibrationMapK(d["map"]["kind"], tuple(d["map"]["params"]))
        return cls(
            int(d["num_classes"]),
            tuple(d["concentration"]),
            m,
            int(d["n"]),
            Rng(*d["seed"]),
        )


def spec_from_dict(d: dict):
    if d.get("kind") == "binary":
        return BinarySpec.from_dict(d)
    if d.get("kind") == "multiclass":
        return MulticlassSpec.from_dict(d)
    raise ValidationError(f"unknown spec kind {d.get('kind')!r}")


def spec_from_json(text: str):
    return spec_from_dict(json.loads(text))


def gen_multiclass(spec: MulticlassSpec) -> PredictionSet:
    """Draw predictions f ~ Dirichlet and labels from m(f)."""
    gen = spec.rng.generator()
    probs = gen.dirichlet(spec.concentration, spec.n)
    truth = spec.map(probs)
    u = gen.uniform(0.0, 1.0, spec.n)
    cdf = np.cumsum(truth, axis=1)
    labels = (u[:, None] > cdf).sum(axis=1)
    labels = np.minimum(labels, spec.num_classes - 1)
    return PredictionSet.from_probs(probs, labels)


def true_ce_k(
    spec: MulticlassSpec, oracle_samples: int = 1_000_000
) -> tuple[float, float]:
    """Monte Carlo estimate of E ||m(f) - f||_1 with its standard error.

    Uses a dedicated child stream of the spec seed, so the oracle never
    perturbs the draws of gen_multiclass.
    """
    if oracle_samples < 2:
        raise ValidationError("oracle needs at least 2 samples")
    gen = spec.rng.stream(_STREAM_ORACLE).generator()
    total = 0.0
    total_sq = 0.0
    remaining = oracle_samples
    while remaining > 0:
        chunk = min(remaining, 200_000)
        f = gen.dirichlet(spec.concentration, chunk)
        vals = np.abs(spec.map(f) - f).sum(axis=1)
        total += float(vals.sum())
        total_sq += float((vals**2).sum())
        remaining -= chunk
    mean = total / oracle_samples
    var = max(total_sq / oracle_samples - mean**2, 0.0)
    stderr = math.sqrt(var / oracle_samples)
    return mean, stderr


def with_n(spec, n: int, rng: Optional[Rng] = None):
    """Copy a spec with a new sample count and optionally a new stream."""
    out = replace(spec, n=n)
    if rng is not None:
        out = replace(out, rng=rng)
    return out
