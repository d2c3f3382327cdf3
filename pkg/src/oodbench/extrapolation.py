"""Informative-extrapolation engine.

Outliers are synthesized by multi-step sign-gradient ascent on a target
(uniform-distribution loss, predicted-class confidence, or energy), with
every iterate projected back into the l-inf ball around its origin and
clamped to the data domain. The returned sample is the best iterate seen,
origin included, so the target never degrades in the chosen direction.

Samples are processed one at a time; the parallel path maps the same
per-sample routine over a thread pool and reassembles by input index, so
parallel and sequential runs are bit-identical.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import losses
from . import model as model_mod
from .errors import ConfigError, NumericError, ShapeError

DIRECTIONS = ("maximize", "minimize")
TARGETS = ("uniform_loss", "msp", "energy")


@dataclass(frozen=True)
class ExtrapolationConfig:
    """Knobs for the constrained multi-step update.

    ratio: fraction of each outlier batch to synthesize (ceil rounding).
    epsilon: l-inf radius around each origin, in normalized input units.
    steps: number of sign-gradient updates; step_size defaults to
    2*epsilon/steps so the ball stays reachable. pool lists
    (epsilon, fraction) slices; fractions must sum to 1.
    """

    ratio: float = 0.5
    epsilon: float = 0.05
    steps: int = 5
    step_size: float | None = None
    direction: str = "maximize"
    target: str = "uniform_loss"
    target_temperature: float = 1.0
    clamp: tuple[float, float] = (0.0, 1.0)
    pool: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        if not 0.0 <= self.ratio <= 1.0:
            raise ConfigError("ratio must lie in [0, 1]")
        if self.epsilon < 0:
            raise ConfigError("epsilon must be >= 0")
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.step_size is not None and self.step_size <= 0:
            raise ConfigError("step_size must be positive when given")
        if self.direction not in DIRECTIONS:
            raise ConfigError(f"direction must be one of {DIRECTIONS}")
        if self.target not in TARGETS:
            raise ConfigError(f"target must be one of {TARGETS}")
        if self.target_temperature <= 0:
            raise ConfigError("target_temperature must be positive")
        if self.clamp[0] >= self.clamp[1]:
            raise ConfigError("clamp interval must be non-empty")
        if self.pool is not None:
            if not self.pool:
                raise ConfigError("pool spec must not be empty")
            total = math.fsum(f for _, f in self.pool)
            if abs(total - 1.0) > 1e-9:
                raise ConfigError(f"pool fractions sum to {total}, expected 1")
            if any(e < 0 for e, _ in self.pool) or any(f < 0 for _, f in self.pool):
                raise ConfigError("pool entries must be non-negative")

    def effective_step_size(self, epsilon: float | None = None) -> float:
        eps = self.epsilon if epsilon is None else epsilon
        if self.step_size is not None:
            return self.step_size
        if self.steps == 0:
            return 0.0
        return 2.0 * eps / self.steps


@dataclass
class ExtrapolatedBatch:
    """Per-sample synthesis record: origins, best iterates, and target values."""

    origins: np.ndarray          # (n, d)
    synthesized: np.ndarray      # (n, d)
    epsilons: np.ndarray         # (n,)
    initial_values: np.ndarray   # (n,) target at origin
    final_values: np.ndarray     # (n,) target at best iterate
    aborted: np.ndarray = field(default=None)  # (n,) bool, non-finite gradient encountered

    def __post_init__(self):
        if self.aborted is None:
            self.aborted = np.zeros(self.origins.shape[0], dtype=bool)

    @staticmethod
    def concatenate(parts: list["ExtrapolatedBatch"]) -> "ExtrapolatedBatch":
        return ExtrapolatedBatch(
            origins=np.concatenate([p.origins for p in parts]),
            synthesized=np.concatenate([p.synthesized for p in parts]),
            epsilons=np.concatenate([p.epsilons for p in parts]),
            initial_values=np.concatenate([p.initial_values for p in parts]),
            final_values=np.concatenate([p.final_values for p in parts]),
            aborted=np.concatenate([p.aborted for p in parts]),
        )


_GRAPH_CACHE: dict[tuple, tuple] = {}


def _target_graph(dims: tuple[int, ...], target: str, temperature: float):
    """(scalar target node, logits node, needs_class_onehot) for a single row "x"."""
    key = (dims, target, temperature)
    cached = _GRAPH_CACHE.get(key)
    if cached is not None:
        return cached
    logits = model_mod.logits_graph(dims)
    if target == "uniform_loss":
        scalar = ad.reduce_mean(losses.oe_rowwise_expr(logits))
        needs_onehot = False
    elif target == "msp":
        # Confidence of the currently predicted class; sign-equivalent gradient to msp.
        scalar = ad.reduce_sum(ad.mul(ad.log_softmax(logits), ad.inp("class_onehot")))
        needs_onehot = True
    elif target == "energy":
        t = float(temperature)
        scalar = ad.reduce_mean(ad.affine(ad.logsumexp(ad.affine(logits, 1.0 / t), axis=1), t))
        needs_onehot = False
    else:
        raise ConfigError(f"unknown target {target!r}")
    entry = (scalar, logits, needs_onehot)
    _GRAPH_CACHE[key] = entry
    return entry


def _extrapolate_row(mlp: model_mod.MlpClassifier, row: np.ndarray,
                     cfg: ExtrapolationConfig, epsilon: float,
                     bindings: dict[str, np.ndarray]):
    """Best-iterate constrained ascent for one sample; returns (x, eps, v0, v_best, aborted)."""
    scalar, logits_node, needs_onehot = _target_graph(mlp.dims, cfg.target, cfg.target_temperature)
    x0 = row[None, :]
    sign_dir = 1.0 if cfg.direction == "maximize" else -1.0
    better = (lambda a, b: a > b) if cfg.direction == "maximize" else (lambda a, b: a < b)

    steps = 0 if epsilon == 0.0 else cfg.steps
    alpha = cfg.effective_step_size(epsilon)
    lo = x0 - epsilon
    hi = x0 + epsilon
    dlo, dhi = cfg.clamp

    x = x0
    best_x = x0
    best_v = None
    v0 = None
    try:
        # Visit x_0 ... x_steps; the origin is a candidate, so the best value
        # never falls below the initial one in the chosen direction.
        for t in range(steps + 1):
            b = dict(bindings)
            b["x"] = x
            if needs_onehot:
                raw = ad.evaluate(logits_node, b)
                onehot = np.zeros((1, mlp.n_classes))
                onehot[0, int(np.argmax(raw[0]))] = 1.0
                b["class_onehot"] = onehot
            if t < steps:
                raw_v, grads, _ = ad.value_and_grad(scalar, b, ["x"])
            else:
                raw_v, grads = ad.evaluate(scalar, b), None
            v = math.exp(float(raw_v)) if needs_onehot else float(raw_v)
            if t == 0:
                v0 = best_v = v
            elif better(v, best_v):
                best_x, best_v = x, v
            if grads is not None:
                x = np.clip(np.clip(x + alpha * sign_dir * np.sign(grads["x"]), dlo, dhi), lo, hi)
    except NumericError:
        if v0 is None:
            return row.copy(), epsilon, np.nan, np.nan, True
        return row.copy(), epsilon, v0, v0, True
    if steps == 0:
        return row.copy(), epsilon, v0, v0, False
    return best_x[0].copy(), epsilon, v0, best_v, False


def pgd_extrapolate(mlp: model_mod.MlpClassifier, x0, cfg: ExtrapolationConfig,
                    epsilon: float | None = None, parallel: bool = False,
                    max_workers: int = 4) -> ExtrapolatedBatch:
    """Synthesize one sample per input row under the l-inf/domain constraints.

    ``epsilon`` overrides cfg.epsilon (used by pool slices). Samples whose
    gradient turns non-finite are returned as their origin and flagged.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.ndim != 2 or x0.shape[1] != mlp.n_features:
        raise ShapeError(f"batch shape {x0.shape} does not match model input width")
    eps = cfg.epsilon if epsilon is None else float(epsilon)
    if eps < 0:
        raise ConfigError("epsilon must be >= 0")
    dlo, dhi = cfg.clamp
    if x0.size and (x0.min() < dlo - 1e-12 or x0.max() > dhi + 1e-12):
        raise ConfigError("origins must lie inside the domain clamp")
    bindings = model_mod.param_bindings(mlp)

    rows = list(x0)
    if parallel and len(rows) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(
                lambda row: _extrapolate_row(mlp, row, cfg, eps, bindings), rows))
    else:
        results = [_extrapolate_row(mlp, row, cfg, eps, bindings) for row in rows]

    n = len(results)
    out = ExtrapolatedBatch(
        origins=x0.copy(),
        synthesized=np.array([r[0] for r in results]).reshape(n, x0.shape[1]),
        epsilons=np.array([r[1] for r in results], dtype=np.float64),
        initial_values=np.array([r[2] for r in results], dtype=np.float64),
        final_values=np.array([r[3] for r in results], dtype=np.float64),
        aborted=np.array([r[4] for r in results], dtype=bool),
    )
    return out


def select_subbatch(outlier_batch, ratio: float, rng: np.random.Generator):
    """Uniform without-replacement split into (to_extrapolate, untouched).

    Both parts keep ascending original-index order, so a zero ratio leaves
    the batch bit-identical in its original order.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ConfigError("ratio must lie in [0, 1]")
    batch = np.asarray(outlier_batch, dtype=np.float64)
    n = batch.shape[0]
    k = math.ceil(ratio * n)
    chosen = np.sort(rng.choice(n, size=k, replace=False))
    mask = np.zeros(n, dtype=bool)
    mask[chosen] = True
    return batch[mask], batch[~mask]


def largest_remainder_counts(fractions, total: int) -> list[int]:
    """Integer slice sizes summing to ``total``; ties go to lower indices."""
    raw = [f * total for f in fractions]
    counts = [math.floor(r) for r in raw]
    deficit = total - sum(counts)
    remainders = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in remainders[:deficit]:
        counts[i] += 1
    return counts


def build_extrapolation_pool(mlp: model_mod.MlpClassifier, subbatch, cfg: ExtrapolationConfig,
                             parallel: bool = False) -> ExtrapolatedBatch:
    """Partition the sub-batch across the pool's epsilon slices and synthesize each.

    A single (epsilon, 1.0) entry is exactly one plain constrained run.
    """
    pool = cfg.pool if cfg.pool is not None else ((cfg.epsilon, 1.0),)
    if not pool:
        raise ConfigError("pool spec must not be empty")
    subbatch = np.asarray(subbatch, dtype=np.float64)
    counts = largest_remainder_counts([f for _, f in pool], subbatch.shape[0])
    parts = []
    start = 0
    for (eps, _), count in zip(pool, counts):
        stop = start + count
        if count:
            parts.append(pgd_extrapolate(mlp, subbatch[start:stop], cfg,
                                         epsilon=eps, parallel=parallel))
        start = stop
    if not parts:
        d = subbatch.shape[1] if subbatch.ndim == 2 else mlp.n_features
        empty = np.zeros((0, d))
        return ExtrapolatedBatch(empty, empty.copy(), np.zeros(0), np.zeros(0), np.zeros(0),
                                 np.zeros(0, dtype=bool))
    return ExtrapolatedBatch.concatenate(parts)


def random_noise_extrapolate(x, epsilon: float, rng: np.random.Generator,
                             clamp: tuple[float, float] = (0.0, 1.0)) -> np.ndarray:
    """Uniform(-epsilon, epsilon) perturbation per coordinate, clamped to the domain."""
    if epsilon < 0:
        raise ConfigError("epsilon must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    if epsilon == 0.0:
        return x.copy()
    noise = rng.uniform(-epsilon, epsilon, size=x.shape)
    return np.clip(x + noise, clamp[0], clamp[1])


def mixup_combine(x_out, partners, lambdas) -> np.ndarray:
    """Convex combination lambda*x_out + (1-lambda)*partner, row-wise."""
    x_out = np.asarray(x_out, dtype=np.float64)
    partners = np.asarray(partners, dtype=np.float64)
    lam = np.asarray(lambdas, dtype=np.float64).reshape(-1, 1)
    if partners.shape != x_out.shape or lam.shape[0] != x_out.shape[0]:
        raise ShapeError("mixup operands disagree on shape")
    return lam * x_out + (1.0 - lam) * partners


def mixup_extrapolate(x_out, partner_batch, beta_a: float = 1.0, beta_b: float = 0.1,
                      rng: np.random.Generator | None = None) -> np.ndarray:
    """Mix each outlier with a uniformly drawn partner, lambda ~ Beta(beta_a, beta_b)."""
    if beta_a <= 0 or beta_b <= 0:
        raise ConfigError("beta parameters must be positive")
    partner_batch = np.asarray(partner_batch, dtype=np.float64)
    if partner_batch.shape[0] == 0:
        raise ConfigError("partner batch must be non-empty")
    x_out = np.asarray(x_out, dtype=np.float64)
    if rng is None:
        raise ConfigError("rng is required")
    lam = rng.beta(beta_a, beta_b, size=x_out.shape[0])
    idx = rng.integers(0, partner_batch.shape[0], size=x_out.shape[0])
    return mixup_combine(x_out, partner_batch[idx], lam)
