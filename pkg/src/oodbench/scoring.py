"""Post-hoc OOD score functions and the threshold decision rule.

Every score follows one orientation: higher means more in-distribution,
so a single threshold rule ``ID iff score >= lambda`` serves all of them.
The energy score is therefore T*logsumexp(logits/T); the hinge-loss sign
convention lives in the losses module only.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from . import autodiff as ad
from . import model as model_mod
from . import numerics
from .errors import ConfigError, DataError, NumericError, ShapeError

ODIN_DEFAULT_TEMPERATURE = 1.0e4
ODIN_DEFAULT_EPSILON = 1.4e-3


@dataclass(frozen=True, eq=False)
class GaussianStats:
    """Per-class means and a shared (tied) covariance, regularized by gamma*I."""

    means: np.ndarray          # (C, h)
    covariance: np.ndarray     # (h, h), already includes the gamma ridge
    gamma: float
    cho_factor: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        try:
            object.__setattr__(self, "cho_factor",
                               scipy.linalg.cho_factor(self.covariance, lower=True))
        except scipy.linalg.LinAlgError as exc:
            raise NumericError(
                f"covariance factorization failed (gamma={self.gamma} too small?)") from exc

    @property
    def n_features(self) -> int:
        return self.means.shape[1]


@dataclass(frozen=True)
class ScoreSpec:
    """Which score to compute and its parameters.

    kind: one of msp, energy, odin, mahalanobis, ash_energy.
    temperature applies to energy and odin; odin_epsilon is the input
    perturbation size; percentile drives the activation-shaping cut.
    """

    kind: str
    temperature: float = 1.0
    odin_epsilon: float = ODIN_DEFAULT_EPSILON
    percentile: float = 95.0
    stats: GaussianStats | None = None

    KINDS = ("msp", "energy", "odin", "mahalanobis", "ash_energy")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ConfigError(f"unknown score kind {self.kind!r}; expected one of {self.KINDS}")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if self.odin_epsilon < 0:
            raise ConfigError("odin_epsilon must be >= 0")
        if not 0.0 <= self.percentile < 100.0:
            raise ConfigError("percentile must lie in [0, 100)")

    @staticmethod
    def odin_default() -> "ScoreSpec":
        return ScoreSpec(kind="odin", temperature=ODIN_DEFAULT_TEMPERATURE,
                         odin_epsilon=ODIN_DEFAULT_EPSILON)


def msp_score(logits) -> np.ndarray:
    """Maximum softmax probability per row, in (1/C, 1]."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise ShapeError("msp needs 2-D logits with at least 2 classes")
    return np.max(numerics.softmax(logits, axis=-1), axis=1)


def energy_score(logits, temperature: float = 1.0) -> np.ndarray:
    """T*logsumexp(logits/T) per row; monotone in every logit."""
    if temperature <= 0:
        raise ConfigError("temperature must be positive")
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2:
        raise ShapeError("energy needs 2-D logits")
    return temperature * numerics.logsumexp(logits / temperature, axis=1)


def odin_score(mlp: model_mod.MlpClassifier, batch, temperature: float = ODIN_DEFAULT_TEMPERATURE,
               eps: float = ODIN_DEFAULT_EPSILON, domain: tuple[float, float] = (0.0, 1.0)) -> np.ndarray:
    """Confidence after a one-step sign-gradient push toward the predicted class.

    The perturbed input is clamped to ``domain``; with eps=0 and T=1 this
    is exactly ``msp_score`` of the raw logits.
    """
    if temperature <= 0:
        raise ConfigError("temperature must be positive")
    if eps < 0:
        raise ConfigError("eps must be >= 0")
    batch = np.asarray(batch, dtype=np.float64)
    logits = model_mod.forward(mlp, batch)
    top = np.argmax(logits, axis=1)
    graph = model_mod.logits_graph(mlp.dims)
    picked = ad.reduce_sum(ad.mul(ad.log_softmax(graph),
                                  ad.const(np.eye(mlp.n_classes)[top])))
    bindings = model_mod.param_bindings(mlp)
    bindings["x"] = batch
    grads = ad.gradient(picked, bindings, ["x"])
    perturbed = np.clip(batch + eps * np.sign(grads["x"]), domain[0], domain[1])
    return np.max(numerics.softmax(model_mod.forward(mlp, perturbed) / temperature, axis=-1), axis=1)


def fit_mahalanobis(features, labels, gamma: float | None = None) -> GaussianStats:
    """Class means plus pooled within-class covariance with a gamma*I ridge.

    gamma=None uses the scale-aware default 1e-6 * trace / h. Every class
    needs at least two samples.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if features.ndim != 2 or features.shape[0] != labels.shape[0]:
        raise ShapeError("features and labels disagree")
    classes = np.unique(labels)
    h = features.shape[1]
    means = np.zeros((classes.size, h))
    pooled = np.zeros((h, h))
    for k, c in enumerate(classes):
        rows = features[labels == c]
        if rows.shape[0] < 2:
            raise DataError(f"class {c} has fewer than 2 samples")
        means[k] = rows.mean(axis=0)
        centered = rows - means[k]
        pooled += centered.T @ centered
    pooled /= features.shape[0]
    if gamma is None:
        gamma = 1e-6 * np.trace(pooled) / h
    if gamma < 0:
        raise ConfigError("gamma must be >= 0")
    return GaussianStats(means=means, covariance=pooled + gamma * np.eye(h), gamma=float(gamma))


def mahalanobis_score(stats: GaussianStats, features) -> np.ndarray:
    """max over classes of the negated squared Mahalanobis distance; always <= 0."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != stats.n_features:
        raise ShapeError(f"feature width {features.shape} does not match stats ({stats.n_features})")
    best = np.full(features.shape[0], -np.inf)
    for mean in stats.means:
        delta = (features - mean).T            # (h, m)
        solved = scipy.linalg.cho_solve(stats.cho_factor, delta)
        dist2 = np.sum(delta * solved, axis=0)
        best = np.maximum(best, -dist2)
    return best


def ash_s(activations, percentile: float) -> np.ndarray:
    """Zero activations below the per-row percentile, rescale survivors to keep the row sum.

    Rows whose survivor sum is not positive are returned unchanged with a
    warning (nothing sensible to rescale).
    """
    if not 0.0 <= percentile < 100.0:
        raise ConfigError("percentile must lie in [0, 100)")
    acts = np.asarray(activations, dtype=np.float64)
    if acts.ndim != 2:
        raise ShapeError("activations must be 2-D")
    if percentile == 0.0:
        return acts.copy()
    out = acts.copy()
    cut = np.percentile(acts, percentile, axis=1, keepdims=True)
    kept = acts >= cut
    shaped = np.where(kept, acts, 0.0)
    before = acts.sum(axis=1)
    after = shaped.sum(axis=1)
    ok = (before > 0) & (after > 0)
    if not np.all(ok):
        warnings.warn(f"{int(np.sum(~ok))} rows left unshaped (non-positive sum)", stacklevel=2)
    scale = np.where(ok, before / np.where(after == 0, 1.0, after), 1.0)
    out[ok] = shaped[ok] * scale[ok, None]
    return out


def detect(scores, threshold: float) -> list[str]:
    """Threshold decision rule: "ID" iff score >= threshold, else "OOD"."""
    scores = np.asarray(scores, dtype=np.float64)
    return ["ID" if s >= threshold else "OOD" for s in scores]


def compute_scores(mlp: model_mod.MlpClassifier, batch, spec: ScoreSpec,
                   domain: tuple[float, float] = (0.0, 1.0)) -> np.ndarray:
    """Evaluate the configured score for a batch of raw inputs."""
    batch = np.asarray(batch, dtype=np.float64)
    if spec.kind == "msp":
        return msp_score(model_mod.forward(mlp, batch))
    if spec.kind == "energy":
        return energy_score(model_mod.forward(mlp, batch), spec.temperature)
    if spec.kind == "odin":
        return odin_score(mlp, batch, spec.temperature, spec.odin_epsilon, domain)
    if spec.kind == "mahalanobis":
        if spec.stats is None:
            raise ConfigError("mahalanobis score requires fitted GaussianStats")
        return mahalanobis_score(spec.stats, model_mod.penultimate_features(mlp, batch))
    if spec.kind == "ash_energy":
        shaped = ash_s(model_mod.penultimate_features(mlp, batch), spec.percentile)
        logits = shaped @ mlp.weights[-1] + mlp.biases[-1]
        return energy_score(logits, spec.temperature)
    raise ConfigError(f"unknown score kind {spec.kind!r}")


def write_score_csv(path, rows) -> None:
    """Score export: rows of (sample_id, set_name, score_kind, score)."""
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample_id", "set_name", "score_kind", "score"])
        for sample_id, set_name, kind, score in rows:
            writer.writerow([sample_id, set_name, kind, repr(float(score))])
