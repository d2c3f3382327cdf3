"""Executable oracle for the Gaussian-mixture sample-complexity story.

ID data is N(mu, sigma^2 I), surrogate outliers are N(-mu, sigma^2 I),
and the classifier is the scaled mean difference theta*. The analytic
false-positive rate of sign(theta^T x) admits a closed form via the
normal CDF, and the lower bound on mu^T theta* / (sigma ||theta*||) is
checked by Monte Carlo over outlier sets built to satisfy the
boundary-margin constraint by per-point rejection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, NumericError


@dataclass(frozen=True)
class GmmSpec:
    """Mixture parameters: component mean mu (the other component is -mu), shared sigma."""

    mu: np.ndarray
    sigma: float

    def __post_init__(self):
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=np.float64).reshape(-1))
        if self.sigma <= 0:
            raise ConfigError("sigma must be positive")
        if float(np.linalg.norm(self.mu)) == 0.0:
            raise ConfigError("mu must be non-zero")

    @property
    def dim(self) -> int:
        return self.mu.size


@dataclass(frozen=True)
class TheoryParams:
    """Bound parameters: sample counts, constraint level alpha, diversity gain tau."""

    n1: int
    n2: int
    alpha: float
    tau: float
    trials: int = 100
    max_rejection_draws: int = 2_000_000

    def __post_init__(self):
        if self.n1 < 1 or self.n2 < 1:
            raise ConfigError("sample counts must be >= 1")
        if self.tau < 0:
            raise ConfigError("tau must be >= 0")
        if self.alpha - self.tau < 0:
            raise ConfigError("alpha - tau must be >= 0 for a feasible constraint")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")


def sample_gmm(spec: GmmSpec, n1: int, n2: int, rng: np.random.Generator):
    """Independent draws: (n1, d) from N(mu, sigma^2 I) and (n2, d) from N(-mu, sigma^2 I)."""
    if n1 < 1 or n2 < 1:
        raise ConfigError("sample counts must be >= 1")
    x_id = spec.mu + spec.sigma * rng.standard_normal((n1, spec.dim))
    x_out = -spec.mu + spec.sigma * rng.standard_normal((n2, spec.dim))
    return x_id, x_out


def theta_star(x_id, x_out) -> np.ndarray:
    """(sum of ID rows - sum of outlier rows) / (n1 + n2)."""
    x_id = np.asarray(x_id, dtype=np.float64)
    x_out = np.asarray(x_out, dtype=np.float64)
    if x_id.shape[0] == 0 or x_out.shape[0] == 0:
        raise DataError("both sample sets must be non-empty")
    return (x_id.sum(axis=0) - x_out.sum(axis=0)) / (x_id.shape[0] + x_out.shape[0])


def _normal_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def analytic_fpr(theta, mu, sigma: float) -> float:
    """Exact P(theta^T x > 0) for x ~ N(-mu, sigma^2 I): Phi(-mu^T theta / (sigma ||theta||))."""
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    mu = np.asarray(mu, dtype=np.float64).reshape(-1)
    norm = float(np.linalg.norm(theta))
    if norm == 0.0:
        raise ConfigError("theta must be non-zero")
    if sigma <= 0:
        raise ConfigError("sigma must be positive")
    ratio = float(mu @ theta) / (sigma * norm)
    return _normal_cdf(-ratio)


def alignment_ratio(theta, mu, sigma: float) -> float:
    """mu^T theta / (sigma ||theta||), the quantity the bound controls."""
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    mu = np.asarray(mu, dtype=np.float64).reshape(-1)
    norm = float(np.linalg.norm(theta))
    if norm == 0.0:
        raise ConfigError("theta must be non-zero")
    return float(mu @ theta) / (sigma * norm)


def bound_rhs(mu_norm: float, sigma: float, n: int, d: int, alpha: float, tau: float) -> float:
    """Displayed lower bound:
    (||mu||^2 - sigma^(1/2) ||mu||^(3/2) - sigma^2 (alpha - tau)/2)
      / (2 sqrt(sigma^2/n (d + 1/sigma) + ||mu||^2)).
    """
    if mu_norm <= 0 or sigma <= 0 or n < 1 or d < 1:
        raise ConfigError("mu_norm, sigma positive and n, d >= 1 required")
    numerator = mu_norm ** 2 - sigma ** 0.5 * mu_norm ** 1.5 - sigma ** 2 * (alpha - tau) / 2.0
    denominator = 2.0 * math.sqrt(sigma ** 2 / n * (d + 1.0 / sigma) + mu_norm ** 2)
    return numerator / denominator


def boundary_margin(x_out, mu, sigma: float) -> float:
    """Empirical constraint level: (1 / (n sigma^2)) * sum |2 x_i^T mu|."""
    x_out = np.asarray(x_out, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64).reshape(-1)
    if x_out.shape[0] == 0:
        raise DataError("outlier set must be non-empty")
    if sigma <= 0:
        raise ConfigError("sigma must be positive")
    return float(np.sum(np.abs(2.0 * (x_out @ mu)))) / (x_out.shape[0] * sigma * sigma)


def sample_constrained_outliers(spec: GmmSpec, n: int, level: float,
                                rng: np.random.Generator,
                                max_draws: int = 2_000_000) -> np.ndarray:
    """Rejection-sample n points from N(-mu, sigma^2 I) with |2 x^T mu| <= sigma^2 * level.

    The per-point condition is sufficient for the summed boundary-margin
    constraint. Raises NumericError when the draw budget runs out, which
    signals infeasible parameters.
    """
    if level < 0:
        raise ConfigError("constraint level must be >= 0")
    threshold = spec.sigma ** 2 * level / 2.0
    accepted: list[np.ndarray] = []
    drawn = 0
    chunk = max(2048, 4 * n)
    while sum(a.shape[0] for a in accepted) < n:
        if drawn >= max_draws:
            raise NumericError(
                f"rejection sampler exhausted {max_draws} draws "
                f"(acceptance too rare for level={level})")
        batch = -spec.mu + spec.sigma * rng.standard_normal((chunk, spec.dim))
        drawn += chunk
        keep = np.abs(batch @ spec.mu) <= threshold
        if np.any(keep):
            accepted.append(batch[keep])
    return np.concatenate(accepted)[:n]


@dataclass
class BoundTrial:
    trial: int
    ratio: float
    rhs: float
    satisfied: bool


@dataclass
class BoundCheck:
    trials: list[BoundTrial]
    violation_fraction: float


def verify_bound(spec: GmmSpec, params: TheoryParams, rng: np.random.Generator) -> BoundCheck:
    """Monte Carlo check of the bound over constraint-feasible outlier sets.

    Each trial draws ID samples from the mixture, builds outliers by
    rejection at level (alpha - tau), and compares the alignment ratio of
    theta* against the displayed right-hand side.
    """
    mu_norm = float(np.linalg.norm(spec.mu))
    rhs = bound_rhs(mu_norm, spec.sigma, params.n2, spec.dim, params.alpha, params.tau)
    trials = []
    violations = 0
    for t in range(params.trials):
        x_id = spec.mu + spec.sigma * rng.standard_normal((params.n1, spec.dim))
        x_out = sample_constrained_outliers(spec, params.n2, params.alpha - params.tau, rng,
                                            params.max_rejection_draws)
        ratio = alignment_ratio(theta_star(x_id, x_out), spec.mu, spec.sigma)
        ok = ratio >= rhs
        violations += 0 if ok else 1
        trials.append(BoundTrial(trial=t, ratio=ratio, rhs=rhs, satisfied=ok))
    return BoundCheck(trials=trials, violation_fraction=violations / params.trials)


def monte_carlo_fpr(theta, mu, sigma: float, n_samples: int, rng: np.random.Generator,
                    chunk: int = 100_000) -> float:
    """Empirical P(theta^T x > 0) under x ~ N(-mu, sigma^2 I); the oracle for analytic_fpr."""
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    mu = np.asarray(mu, dtype=np.float64).reshape(-1)
    hits = 0
    remaining = n_samples
    while remaining > 0:
        m = min(chunk, remaining)
        x = -mu + sigma * rng.standard_normal((m, mu.size))
        hits += int(np.count_nonzero(x @ theta > 0))
        remaining -= m
    return hits / n_samples
