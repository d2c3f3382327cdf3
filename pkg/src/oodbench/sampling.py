"""Auxiliary-outlier selection strategies.

The greedy sampler picks the pool samples that currently look most
in-distribution under a chosen score (the hardest outliers); the
stratifier splits the pool into contiguous score bands.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import scoring
from .errors import ConfigError, DataError


@dataclass
class OutlierPool:
    """A finite outlier sample set with an optional cached score vector."""

    samples: np.ndarray
    cached_scores: np.ndarray | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.cached_scores is not None:
            self.cached_scores = np.asarray(self.cached_scores, dtype=np.float64)
            if self.cached_scores.shape[0] != self.samples.shape[0]:
                raise DataError("score cache size does not match pool size")

    def __len__(self) -> int:
        return self.samples.shape[0]


def _pool_scores(pool: OutlierPool, mlp, score_spec: scoring.ScoreSpec) -> np.ndarray:
    if pool.cached_scores is not None:
        return pool.cached_scores
    return scoring.compute_scores(mlp, pool.samples, score_spec)


def random_sample(pool: OutlierPool, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform selection without replacement."""
    if n > len(pool):
        raise ConfigError(f"cannot sample {n} from a pool of {len(pool)}")
    idx = rng.choice(len(pool), size=n, replace=False)
    return pool.samples[idx]


def greedy_informative_sample(pool: OutlierPool, mlp, score_spec: scoring.ScoreSpec,
                              n: int) -> np.ndarray:
    """The n pool samples with the highest ID-ness scores; ties by ascending index."""
    if n > len(pool):
        raise ConfigError(f"cannot sample {n} from a pool of {len(pool)}")
    scores = _pool_scores(pool, mlp, score_spec)
    # Stable sort on negated scores keeps lower original indices first on ties.
    order = np.argsort(-scores, kind="stable")
    return pool.samples[order[:n]]


def stratify_by_score(pool: OutlierPool, mlp, score_spec: scoring.ScoreSpec,
                      group_count: int) -> list[np.ndarray]:
    """Sort by ascending score and split into equal contiguous groups.

    The last group absorbs the remainder.
    """
    if group_count < 1:
        raise ConfigError("group_count must be >= 1")
    if len(pool) == 0:
        raise DataError("pool is empty")
    scores = _pool_scores(pool, mlp, score_spec)
    order = np.argsort(scores, kind="stable")
    size = len(pool) // group_count
    groups = []
    for g in range(group_count):
        start = g * size
        stop = (g + 1) * size if g < group_count - 1 else len(pool)
        groups.append(pool.samples[order[start:stop]])
    return groups
