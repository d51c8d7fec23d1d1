"""Parametric recalibration maps and their variational training loop.

A map acts on a probability row by taking logs (floored at 1e-12), applying a
family-specific linear transform, and renormalizing through a softmax. Three
families are supported: a scalar temperature, a per-class scale-and-offset,
and a full affine transform of the log-probabilities.

Training follows a PAC-Bayes recipe: fit a diagonal Gaussian posterior over
the map parameters by first-order descent on

    mean_j Brier(map(v_j) applied to data) + alpha * KL(posterior || prior) / n

with v_j = mu + sigma * xi_j reparameterized draws, optionally adding the
cross-entropy loss to the Brier term. The returned point map evaluates the
posterior at the mean of j_final fresh samples.

The temperature family is carried internally as log(t) so that Gaussian
posteriors cannot leave the valid domain; constructors and reports still speak
in t.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bounds import kl_gaussian_diag
from .core import PredictionSet, Rng, ValidationError

PROB_FLOOR = 1e-12

FAMILIES = ("temperature", "vector_scale", "affine")

# Stopping rule: quit when the best objective has not improved by more than
# _TOL for _PATIENCE consecutive steps.
_TOL = 1e-8
_PATIENCE = 50


def param_dim(family: str, num_classes: int) -> int:
    if family == "temperature":
        return 1
    if family == "vector_scale":
        return 2 * num_classes
    if family == "affine":
        return num_classes * num_classes + num_classes
    raise ValidationError(f"unknown family {family!r}")


def identity_params(family: str, num_classes: int) -> np.ndarray:
    """Parameter vector of the identity map in each family."""
    if family == "temperature":
        return np.zeros(1)
    if family == "vector_scale":
        return np.concatenate([np.ones(num_classes), np.zeros(num_classes)])
    if family == "affine":
        return np.concatenate([np.eye(num_classes).ravel(), np.zeros(num_classes)])
    raise ValidationError(f"unknown family {family!r}")


@dataclass(frozen=True)
class RecalMap:
    """A fitted recalibration map.

    params is the unconstrained vector the posterior lives on: [ln t] for
    temperature, [w, b] for vector_scale, [W.ravel(), b] for affine.
    """

    family: str
    num_classes: int
    params: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown family {self.family!r}")
        if self.num_classes < 2:
            raise ValidationError(f"need at least 2 classes, got {self.num_classes}")
        params = np.asarray(self.params, dtype=float)
        want = param_dim(self.family, self.num_classes)
        if params.shape != (want,):
            raise ValidationError(
                f"{self.family} over {self.num_classes} classes needs {want} "
                f"parameters, got shape {params.shape}"
            )
        params = params.copy()
        params.setflags(write=False)
        object.__setattr__(self, "params", params)

    @classmethod
    def temperature(cls, t: float, num_classes: int = 2) -> "RecalMap":
        if t <= 0:
            raise ValidationError(f"temperature must be positive, got {t}")
        return cls("temperature", num_classes, np.array([math.log(t)]))

    @classmethod
    def vector_scale(cls, weights, offsets) -> "RecalMap":
        w = np.asarray(weights, dtype=float)
        b = np.asarray(offsets, dtype=float)
        if w.ndim != 1 or w.shape != b.shape:
            raise ValidationError("weights and offsets must be equal-length vectors")
        return cls("vector_scale", w.size, np.concatenate([w, b]))

    @classmethod
    def affine(cls, matrix, offsets) -> "RecalMap":
        mat = np.asarray(matrix, dtype=float)
        b = np.asarray(offsets, dtype=float)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1] or mat.shape[0] != b.size:
            raise ValidationError("matrix must be square and match the offset length")
        return cls("affine", b.size, np.concatenate([mat.ravel(), b]))

    @classmethod
    def identity(cls, family: str, num_classes: int) -> "RecalMap":
        return cls(family, num_classes, identity_params(family, num_classes))

    @property
    def t(self) -> float:
        if self.family != "temperature":
            raise ValidationError(f"{self.family} map has no temperature")
        return math.exp(self.params[0])

    def to_dict(self) -> dict:
        d = {
            "family": self.family,
            "num_classes": self.num_classes,
            "params": self.params.tolist(),
        }
        if self.family == "temperature":
            d["t"] = self.t
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RecalMap":
        return cls(d["family"], int(d["num_classes"]), np.asarray(d["params"]))


def _log_probs(probs: np.ndarray) -> np.ndarray:
    return np.log(np.maximum(probs, PROB_FLOOR))


def _softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _scores(family: str, num_classes: int, vs: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Transformed log-probabilities for a batch of parameter vectors.

    vs is (J, d), z is (n, K); returns (J, n, K).
    """
    k = num_classes
    if family == "temperature":
        return z[None, :, :] * np.exp(-vs[:, 0])[:, None, None]
    if family == "vector_scale":
        w, b = vs[:, :k], vs[:, k:]
        return z[None, :, :] * w[:, None, :] + b[:, None, :]
    mats = vs[:, : k * k].reshape(-1, k, k)
    b = vs[:, k * k :]
    return np.einsum("jkl,nl->jnk", mats, z) + b[:, None, :]


def apply_recal(recal_map: RecalMap, probs: np.ndarray) -> np.ndarray:
    """Apply a map to one probability row or a batch of rows."""
    probs = np.asarray(probs, dtype=float)
    single = probs.ndim == 1
    rows = probs[None, :] if single else probs
    if rows.shape[1] != recal_map.num_classes:
        raise ValidationError(
            f"map expects {recal_map.num_classes} classes, got {rows.shape[1]}"
        )
    z = _log_probs(rows)
    out = _softmax(_scores(recal_map.family, recal_map.num_classes,
                           recal_map.params[None, :], z)[0])
    return out[0] if single else out


def recalibrate_set(recal_map: RecalMap, data: PredictionSet) -> PredictionSet:
    return PredictionSet.from_probs(apply_recal(recal_map, data.probs), data.labels)


def brier_score(data: PredictionSet) -> float:
    """Mean squared L2 distance between probability rows and one-hot labels."""
    return float(np.mean(((data.probs - data.one_hot_labels()) ** 2).sum(axis=1)))


def softmax_cross_entropy(data: PredictionSet) -> float:
    """Mean negative log-probability of the label, floored at 1e-12."""
    picked = data.probs[np.arange(data.n), data.labels]
    return float(-np.mean(np.log(np.maximum(picked, PROB_FLOOR))))


@dataclass(frozen=True)
class GaussianPosterior:
    """Diagonal Gaussian over map parameters, stored as (mu, log_sigma)."""

    mu: np.ndarray = field(repr=False)
    log_sigma: np.ndarray = field(repr=False)

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        ls = np.asarray(self.log_sigma, dtype=float)
        if mu.ndim != 1 or mu.shape != ls.shape:
            raise ValidationError("mu and log_sigma must be equal-length vectors")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "log_sigma", ls)

    @classmethod
    def standard(cls, dim: int) -> "GaussianPosterior":
        return cls(np.zeros(dim), np.zeros(dim))

    @classmethod
    def at(cls, mu: np.ndarray, sigma: float = 1.0) -> "GaussianPosterior":
        mu = np.asarray(mu, dtype=float)
        return cls(mu, np.full(mu.shape, math.log(sigma)))

    @property
    def dim(self) -> int:
        return self.mu.size

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.log_sigma)

    def sample(self, rng: Rng, count: int) -> np.ndarray:
        xi = rng.generator().standard_normal((count, self.dim))
        return self.mu[None, :] + self.sigma[None, :] * xi

    def kl_to(self, prior: "GaussianPosterior") -> float:
        return kl_gaussian_diag(self.mu, self.sigma**2, prior.mu, prior.sigma**2)

    def to_dict(self) -> dict:
        return {"mu": self.mu.tolist(), "log_sigma": self.log_sigma.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianPosterior":
        return cls(np.asarray(d["mu"]), np.asarray(d["log_sigma"]))


@dataclass(frozen=True)
class PbrConfig:
    """Knobs for the variational fit; defaults suit desk-scale experiments."""

    family: str = "temperature"
    alpha: float = 0.25
    mc_samples: int = 4
    j_final: int = 100
    step_size: float = 0.2
    step_decay: float = 0.995
    max_iters: int = 300
    seed: int = 0
    objective: str = "brier"
    prior: Optional[GaussianPosterior] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown family {self.family!r}")
        if self.alpha < 0:
            raise ValidationError(f"alpha must be >= 0, got {self.alpha}")
        if self.mc_samples < 1 or self.j_final < 1:
            raise ValidationError("sample counts must be >= 1")
        if self.step_size <= 0:
            raise ValidationError(f"step size must be positive, got {self.step_size}")
        if not 0 < self.step_decay <= 1:
            raise ValidationError(f"step decay must lie in (0, 1], got {self.step_decay}")
        if self.max_iters < 1:
            raise ValidationError("max_iters must be >= 1")
        if self.objective not in ("brier", "brier_plus_loss"):
            raise ValidationError(f"unknown objective {self.objective!r}")

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "alpha": self.alpha,
            "mc_samples": self.mc_samples,
            "j_final": self.j_final,
            "step_size": self.step_size,
            "step_decay": self.step_decay,
            "max_iters": self.max_iters,
            "seed": self.seed,
            "objective": self.objective,
            "prior": self.prior.to_dict() if self.prior else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PbrConfig":
        d = dict(d)
        prior = d.pop("prior", None)
        return cls(prior=GaussianPosterior.from_dict(prior) if prior else None, **d)


def _default_prior(cfg: PbrConfig, num_classes: int) -> GaussianPosterior:
    if cfg.prior is not None:
        want = param_dim(cfg.family, num_classes)
        if cfg.prior.dim != want:
            raise ValidationError(
                f"prior dimension {cfg.prior.dim} does not match {cfg.family} "
                f"over {num_classes} classes ({want})"
            )
        return cfg.prior
    return GaussianPosterior.at(identity_params(cfg.family, num_classes))


def _objective_pieces(
    cfg: PbrConfig, data: PredictionSet, vs: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-draw Brier and cross-entropy, plus the recalibrated probabilities."""
    z = _log_probs(data.probs)
    p = _softmax(_scores(cfg.family, data.num_classes, vs, z))
    e = data.one_hot_labels()
    briers = ((p - e[None, :, :]) ** 2).sum(axis=2).mean(axis=1)
    picked = p[:, np.arange(data.n), data.labels]
    xents = -np.log(np.maximum(picked, PROB_FLOOR)).mean(axis=1)
    return briers, xents, p


def _objective_value(
    posterior: GaussianPosterior,
    prior: GaussianPosterior,
    data: PredictionSet,
    cfg: PbrConfig,
    xi: np.ndarray,
) -> float:
    vs = posterior.mu[None, :] + posterior.sigma[None, :] * xi
    briers, xents, _ = _objective_pieces(cfg, data, vs)
    value = briers.mean()
    if cfg.objective == "brier_plus_loss":
        value += xents.mean()
    return float(value + cfg.alpha * posterior.kl_to(prior) / data.n)


def _grad_scores_to_params(
    family: str, num_classes: int, g_scores: np.ndarray, z: np.ndarray, scores: np.ndarray
) -> np.ndarray:
    """Chain dObjective/dscores back to the parameter vectors, shape (J, d)."""
    k = num_classes
    if family == "temperature":
        # scores = z * exp(-w), so dscores/dw = -scores.
        return -(g_scores * scores).sum(axis=(1, 2))[:, None]
    if family == "vector_scale":
        gw = (g_scores * z[None, :, :]).sum(axis=1)
        gb = g_scores.sum(axis=1)
        return np.concatenate([gw, gb], axis=1)
    gmat = np.einsum("jnk,nl->jkl", g_scores, z)
    gb = g_scores.sum(axis=1)
    return np.concatenate([gmat.reshape(g_scores.shape[0], -1), gb], axis=1)


def _objective_and_gradient(
    posterior: GaussianPosterior,
    prior: GaussianPosterior,
    data: PredictionSet,
    cfg: PbrConfig,
    xi: np.ndarray,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Objective with its exact gradient over (mu, log_sigma) for fixed draws."""
    sigma = posterior.sigma
    vs = posterior.mu[None, :] + sigma[None, :] * xi
    z = _log_probs(data.probs)
    scores = _scores(cfg.family, data.num_classes, vs, z)
    p = _softmax(scores)
    e = data.one_hot_labels()

    briers = ((p - e[None, :, :]) ** 2).sum(axis=2).mean(axis=1)
    picked = p[:, np.arange(data.n), data.labels]
    xents = -np.log(np.maximum(picked, PROB_FLOOR)).mean(axis=1)

    resid = p - e[None, :, :]
    inner = (p * resid).sum(axis=2, keepdims=True)
    g_scores = 2.0 * p * (resid - inner)
    if cfg.objective == "brier_plus_loss":
        g_scores = g_scores + resid
    g_scores = g_scores / data.n

    g_vs = _grad_scores_to_params(cfg.family, data.num_classes, g_scores, z, scores)
    g_mu = g_vs.mean(axis=0)
    g_log_sigma = (g_vs * xi).mean(axis=0) * sigma

    value = briers.mean()
    if cfg.objective == "brier_plus_loss":
        value += xents.mean()
    kl = posterior.kl_to(prior)
    value = float(value + cfg.alpha * kl / data.n)

    var_p = prior.sigma**2
    g_mu = g_mu + cfg.alpha / data.n * (posterior.mu - prior.mu) / var_p
    g_log_sigma = g_log_sigma + cfg.alpha / data.n * (sigma**2 / var_p - 1.0)
    return value, g_mu, g_log_sigma


def _draws(rng: Rng, count: int, dim: int) -> np.ndarray:
    return rng.generator().standard_normal((count, dim))


def pbr_objective(
    posterior: GaussianPosterior,
    prior: GaussianPosterior,
    data: PredictionSet,
    cfg: PbrConfig,
    rng: Rng,
) -> float:
    """Monte Carlo objective; the same rng value always yields the same draws."""
    xi = _draws(rng, cfg.mc_samples, posterior.dim)
    return _objective_value(posterior, prior, data, cfg, xi)


def pbr_gradient(
    posterior: GaussianPosterior,
    prior: GaussianPosterior,
    data: PredictionSet,
    cfg: PbrConfig,
    rng: Rng,
) -> np.ndarray:
    """Exact gradient of :func:`pbr_objective` as concat(d/dmu, d/dlog_sigma)."""
    xi = _draws(rng, cfg.mc_samples, posterior.dim)
    _, g_mu, g_log_sigma = _objective_and_gradient(posterior, prior, data, cfg, xi)
    return np.concatenate([g_mu, g_log_sigma])


@dataclass(frozen=True)
class PbrResult:
    posterior: GaussianPosterior
    map: RecalMap
    prior: GaussianPosterior
    final_objective: float
    steps: int

    @property
    def kl(self) -> float:
        return self.posterior.kl_to(self.prior)


def train_pbr(data: PredictionSet, cfg: PbrConfig) -> PbrResult:
    """Fit the posterior by plain gradient descent with geometric step decay.

    Deterministic given (data, cfg): per-step noise comes from child streams
    of cfg.seed, and the returned map evaluates the family at the mean of
    j_final fresh posterior samples.
    """
    prior = _default_prior(cfg, data.num_classes)
    mu = prior.mu.copy()
    log_sigma = prior.log_sigma.copy()
    noise_root = Rng(cfg.seed).stream(0)
    final_rng = Rng(cfg.seed).stream(1)

    best = math.inf
    best_step = 0
    value = math.inf
    steps = 0
    for i in range(cfg.max_iters):
        posterior = GaussianPosterior(mu, log_sigma)
        xi = _draws(noise_root.stream(i), cfg.mc_samples, posterior.dim)
        value, g_mu, g_log_sigma = _objective_and_gradient(posterior, prior, data, cfg, xi)
        if not math.isfinite(value):
            raise RuntimeError(
                f"objective became non-finite at step {i} (family={cfg.family}, "
                f"alpha={cfg.alpha}, step_size={cfg.step_size})"
            )
        steps = i + 1
        if value < best - _TOL:
            best = value
            best_step = i
        elif i - best_step >= _PATIENCE:
            break
        lr = cfg.step_size * cfg.step_decay**i
        mu = mu - lr * g_mu
        log_sigma = log_sigma - lr * g_log_sigma

    posterior = GaussianPosterior(mu, log_sigma)
    final_v = posterior.sample(final_rng, cfg.j_final).mean(axis=0)
    fitted = RecalMap(cfg.family, data.num_classes, final_v)
    return PbrResult(posterior, fitted, prior, float(value), steps)


_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def temperature_scaling_fit(
    data: PredictionSet, tol: float = 1e-6, log_t_range: tuple = (-5.0, 5.0)
) -> RecalMap:
    """Classic single-temperature fit minimizing the cross-entropy.

    Golden-section search over log(t); data whose labels are all one class
    has no interior optimum, so it falls back to t = 1 with a warning.
    """
    if np.unique(data.labels).size < 2:
        warnings.warn("all labels identical; temperature fit falls back to t=1")
        return RecalMap.temperature(1.0, data.num_classes)

    def nll(log_t):
        m = RecalMap("temperature", data.num_classes, np.array([log_t]))
        return softmax_cross_entropy(recalibrate_set(m, data))

    lo, hi = log_t_range
    x1 = hi - _GOLDEN * (hi - lo)
    x2 = lo + _GOLDEN * (hi - lo)
    f1, f2 = nll(x1), nll(x2)
    while hi - lo > tol:
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - _GOLDEN * (hi - lo)
            f1 = nll(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + _GOLDEN * (hi - lo)
            f2 = nll(x2)
    return RecalMap("temperature", data.num_classes, np.array([(lo + hi) / 2.0]))
