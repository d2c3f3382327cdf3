"""Fine-tuning loop: SGD with Nesterov momentum, weight decay and a
per-step cosine-annealed learning rate.

Per batch: sample an ID mini-batch and an outlier mini-batch, split off a
sub-batch by the extrapolation ratio, synthesize it against the current
model snapshot, then take one gradient step on the combined objective.
The outlier stream reshuffles and cycles so every ID batch is paired.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import data as data_mod
from . import losses
from . import model as model_mod
from .errors import ConfigError, NumericError
from .extrapolation import ExtrapolationConfig, build_extrapolation_pool, select_subbatch

LOSS_KINDS = ("ce", "oe", "energy_bounded", "divoe")


@dataclass(frozen=True)
class LossConfig:
    """Objective family and its parameters; margins only matter for the hinge loss."""

    kind: str = "oe"
    balance: float = losses.DEFAULT_OE_LAMBDA
    m_in: float = losses.DEFAULT_M_IN_10CLASS
    m_out: float = losses.DEFAULT_M_OUT
    temperature: float = 1.0

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ConfigError(f"loss kind must be one of {LOSS_KINDS}")
        if self.balance < 0:
            raise ConfigError("balance must be >= 0")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")


@dataclass(frozen=True)
class TrainConfig:
    """Fine-tuning hyperparameters; defaults follow the standard protocol."""

    epochs: int = 10
    lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 1e-4
    id_batch: int = 128
    outlier_batch: int = 128
    loss: LossConfig = field(default_factory=LossConfig)
    extrapolation: ExtrapolationConfig = field(default_factory=ExtrapolationConfig)
    sampler: str = "random"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.lr < 0:
            raise ConfigError("learning rate must be >= 0")
        if self.id_batch < 1 or self.outlier_batch < 1:
            raise ConfigError("batch sizes must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight decay must be >= 0")


@dataclass
class StepRecord:
    epoch: int
    step: int
    lr: float
    ce_loss: float
    oe_loss_orig: float | None
    oe_loss_extrap: float | None
    total_loss: float


@dataclass
class TrainHistory:
    records: list[StepRecord] = field(default_factory=list)
    outlier_stream: list[np.ndarray] = field(default_factory=list)
    synthesized_stream: list[np.ndarray] = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "step", "lr", "ce_loss", "oe_loss_orig",
                             "oe_loss_extrap", "total_loss"])
            for r in self.records:
                writer.writerow([
                    r.epoch, r.step, repr(r.lr), repr(r.ce_loss),
                    "" if r.oe_loss_orig is None else repr(r.oe_loss_orig),
                    "" if r.oe_loss_extrap is None else repr(r.oe_loss_extrap),
                    repr(r.total_loss),
                ])


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    """0.5 * lr0 * (1 + cos(pi * step / total_steps))."""
    if total_steps < 1:
        raise ConfigError("total_steps must be >= 1")
    if not 0 <= step <= total_steps:
        raise ConfigError("step must lie in [0, total_steps]")
    return 0.5 * lr0 * (1.0 + math.cos(math.pi * step / total_steps))


def sgd_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             velocity: dict[str, np.ndarray], lr: float, momentum: float,
             weight_decay: float):
    """One Nesterov update: g += wd*p; v' = m*v + g; p' = p - lr*(g + m*v')."""
    new_params = {}
    new_velocity = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ConfigError(f"gradient shape {g.shape} does not match parameter {name}")
        g = g + weight_decay * p
        v = momentum * velocity[name] + g
        new_params[name] = p - lr * (g + momentum * v)
        new_velocity[name] = v
    return new_params, new_velocity


def _component_seed(seed: int, stream: int) -> int:
    return int(np.random.SeedSequence([seed, stream]).generate_state(1)[0])


def _outlier_batches(outliers: np.ndarray, batch_size: int, seed: int):
    """Endless stream of fixed-size outlier batches; reshuffles when exhausted."""
    n = outliers.shape[0]
    pass_idx = 0
    while True:
        order = np.random.Generator(np.random.PCG64([seed, pass_idx])).permutation(n)
        for start in range(0, n - batch_size + 1, batch_size):
            yield outliers[order[start:start + batch_size]]
        if n < batch_size:
            # Tiny pools: cycle with replacement across passes.
            yield outliers[order]
        pass_idx += 1


def _build_loss_graph(dims, kind: str, lc: LossConfig, labels, n_orig: int, n_ext: int):
    """Scalar training objective with inputs x / x_out / x_ext and shared parameters."""
    n_classes = dims[-1]
    param_nodes = model_mod.make_param_nodes(dims)
    id_logits = model_mod.logits_graph(dims, "x", param_nodes)
    ce = losses.ce_loss_expr(id_logits, labels, n_classes)
    if kind == "ce":
        return ce, ce, None, None
    out_logits = model_mod.logits_graph(dims, "x_out", param_nodes) if n_orig else None
    ext_logits = model_mod.logits_graph(dims, "x_ext", param_nodes) if n_ext else None
    if kind == "energy_bounded":
        hinge = losses.energy_bounded_loss_expr(id_logits, out_logits, lc.m_in, lc.m_out,
                                                lc.temperature)
        total = ce + lc.balance * hinge
        return total, ce, hinge, None
    # Same structure divoe_loss_expr produces, but built from the shared
    # subexpressions so their values come out of the single training pass.
    oe_orig = losses.oe_uniform_loss_expr(out_logits) if out_logits is not None else None
    oe_ext = losses.oe_uniform_loss_expr(ext_logits) if ext_logits is not None else None
    if oe_orig is not None and oe_ext is not None:
        total = ce + lc.balance * (oe_orig + oe_ext)
    elif oe_orig is not None:
        total = ce + lc.balance * oe_orig
    elif oe_ext is not None:
        total = ce + lc.balance * oe_ext
    else:
        raise ConfigError("both outlier sides empty")
    return total, ce, oe_orig, oe_ext


def fine_tune(mlp: model_mod.MlpClassifier, id_train: data_mod.LabeledDataset,
              aux_outliers: np.ndarray | None, cfg: TrainConfig,
              collect_outlier_stream: bool = False):
    """Run the full fine-tuning loop; returns (model', TrainHistory).

    Deterministic per cfg.seed: batch shuffling, sub-batch selection and
    any extrapolation randomness come from per-component seed streams.
    A non-finite loss aborts with NumericError rather than being skipped.
    """
    kind = cfg.loss.kind
    aux = None if aux_outliers is None else np.asarray(aux_outliers, dtype=np.float64)
    if kind != "ce" and (aux is None or aux.shape[0] == 0):
        raise ConfigError(f"loss kind {kind!r} requires a non-empty auxiliary outlier pool")
    if mlp.n_features != id_train.x.shape[1]:
        raise ConfigError("model input width does not match the training data")

    params = dict(model_mod.param_bindings(mlp))
    velocity = {name: np.zeros_like(p) for name, p in params.items()}
    history = TrainHistory()
    if cfg.epochs == 0:
        return mlp, history

    n_batches = max(1, math.ceil(len(id_train) / cfg.id_batch))
    total_steps = cfg.epochs * n_batches
    shuffle_seed = _component_seed(cfg.seed, 0)
    select_rng = np.random.Generator(np.random.PCG64(_component_seed(cfg.seed, 1)))
    out_stream = None
    if kind != "ce":
        out_stream = _outlier_batches(aux, min(cfg.outlier_batch, aux.shape[0]),
                                      _component_seed(cfg.seed, 2))

    param_names = model_mod.param_names(mlp)
    step = 0
    current = mlp
    for epoch in range(cfg.epochs):
        epoch_iter = data_mod.batches(id_train, cfg.id_batch,
                                      seed=int(np.random.SeedSequence(
                                          [shuffle_seed, epoch]).generate_state(1)[0]))
        for x_id, y_id in epoch_iter:
            out_batch = next(out_stream) if out_stream is not None else None
            extrap = None
            orig_part = out_batch
            if kind == "divoe":
                to_ext, orig_part = select_subbatch(out_batch, cfg.extrapolation.ratio,
                                                    select_rng)
                if to_ext.shape[0]:
                    extrap = build_extrapolation_pool(current, to_ext, cfg.extrapolation)

            n_orig = 0 if orig_part is None else orig_part.shape[0]
            n_ext = 0 if extrap is None else extrap.synthesized.shape[0]
            total_node, ce_node, out_node, ext_node = _build_loss_graph(
                current.dims, kind, cfg.loss, y_id, n_orig, n_ext)

            bindings = dict(params)
            bindings["x"] = x_id
            if n_orig:
                bindings["x_out"] = orig_part
            if n_ext:
                bindings["x_ext"] = extrap.synthesized
            try:
                aux_nodes = tuple(node for node in (ce_node, out_node, ext_node)
                                  if node is not None)
                total_value, grads, aux_vals = ad.value_and_grad(
                    total_node, bindings, param_names, aux=aux_nodes)
            except NumericError as exc:
                raise NumericError(
                    f"non-finite loss at epoch {epoch} step {step}: {exc}") from exc

            aux_list = list(aux_vals)
            ce_value = float(aux_list.pop(0))
            out_value = float(aux_list.pop(0)) if out_node is not None else None
            ext_value = float(aux_list.pop(0)) if ext_node is not None else None

            if (n_ext and cfg.extrapolation.target == "uniform_loss"
                    and cfg.extrapolation.direction == "maximize"):
                baseline = float(np.mean(extrap.initial_values))
                synthesized = float(np.mean(extrap.final_values))
                assert synthesized >= baseline - 1e-12, (
                    "best-iterate extrapolation lost ground on the uniform loss")

            lr = cosine_lr(step, total_steps, cfg.lr)
            params, velocity = sgd_step(params, grads, velocity, lr, cfg.momentum,
                                        cfg.weight_decay)
            current = model_mod.MlpClassifier(
                current.dims,
                tuple(params[f"W{i}"] for i in range(len(current.weights))),
                tuple(params[f"b{i}"] for i in range(len(current.biases))),
            )
            history.records.append(StepRecord(
                epoch=epoch, step=step, lr=lr, ce_loss=ce_value,
                oe_loss_orig=out_value, oe_loss_extrap=ext_value,
                total_loss=float(total_value)))
            if collect_outlier_stream and out_batch is not None:
                history.outlier_stream.append(
                    orig_part.copy() if n_orig else np.zeros((0, out_batch.shape[1])))
                if n_ext:
                    history.synthesized_stream.append(extrap.synthesized.copy())
            step += 1
    return current, history


def evaluate_suite(mlp, id_test: data_mod.LabeledDataset, ood_sets: dict[str, np.ndarray],
                   score_specs, *, method: str = "model", seed: int | None = None,
                   config_digest: str | None = None):
    """One DetectionReport per score spec over the named OOD sets."""
    from . import metrics

    reports = []
    for spec in score_specs:
        reports.append(metrics.detection_report(
            mlp, spec, id_test.x, ood_sets, id_test.y,
            method=method, seed=seed, config_digest=config_digest))
    return reports
