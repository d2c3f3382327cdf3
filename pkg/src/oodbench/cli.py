"""Batch-oriented command-line front end.

Subcommands: gen-data, train, eval, extrapolate, theory-verify, gradcheck,
report. Every command is deterministic given (config, seed) and writes
only under the declared output directory. Exit codes: 0 success, 2 config
error, 3 data/IO error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import data as data_mod
from . import gradcheck as gradcheck_mod
from . import gmm_theory
from . import metrics as metrics_mod
from . import model as model_mod
from . import scoring
from . import trainer as trainer_mod
from .errors import ConfigError, DataError, NumericError, OodbenchError
from .extrapolation import ExtrapolationConfig, pgd_extrapolate


def _load_run_config(args) -> config_mod.RunConfig:
    if args.config is not None:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    else:
        doc = {}
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"seed={int(args.seed)}")
    if args.out is not None:
        overrides.append(f"outputs.dir={json.dumps(str(args.out))}")
    config_mod.apply_overrides(doc, overrides)
    return config_mod.parse_config(doc)


def _out_dir(cfg: config_mod.RunConfig) -> Path:
    out = Path(cfg.outputs.dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _benchmark_paths(out: Path) -> dict[str, Path]:
    return {
        "id_train": out / "id_train.csv",
        "id_test": out / "id_test.csv",
        "aux_out": out / "aux_out.csv",
        "transform": out / "transform.json",
    }


def cmd_gen_data(cfg: config_mod.RunConfig) -> int:
    """Write id_train/id_test/aux_out/ood_<name> CSVs plus the transform record."""
    out = _out_dir(cfg)
    d = cfg.data
    seed = config_mod.component_seed(cfg.seed, "data")
    raw_train = data_mod.gen_id_mixture_raw(d.classes, d.per_class, d.radius, d.sigma, seed)
    raw_test = data_mod.gen_id_mixture_raw(d.classes, d.test_per_class, d.radius, d.sigma,
                                           seed + 1)
    transform = data_mod.fit_minmax(raw_train.x)
    id_train = data_mod.LabeledDataset(transform.apply(raw_train.x), raw_train.y)
    id_test = data_mod.LabeledDataset(transform.apply(raw_test.x), raw_test.y)
    aux = data_mod.gen_arc_outliers(d.aux.inner_radius, d.aux.outer_radius,
                                    d.aux.arc_fraction, d.aux.count, seed + 2, transform)
    paths = _benchmark_paths(out)
    data_mod.save_csv(id_train, paths["id_train"])
    data_mod.save_csv(id_test, paths["id_test"])
    data_mod.save_csv(aux, paths["aux_out"])
    paths["transform"].write_text(transform.to_json(), encoding="utf-8")
    for i, (name, spec) in enumerate(sorted(d.ood_sets.items())):
        ood = data_mod.gen_ring_ood(spec.inner_radius, spec.outer_radius, spec.count,
                                    seed + 3 + i, transform)
        data_mod.save_csv(ood, out / f"ood_{name}.csv")
    print(f"wrote benchmark data to {out}")
    return 0


def _load_benchmark(cfg: config_mod.RunConfig):
    out = Path(cfg.outputs.dir)
    paths = _benchmark_paths(out)
    for p in (paths["id_train"], paths["id_test"], paths["aux_out"]):
        if not p.exists():
            raise DataError(f"missing data file {p}; run gen-data first")
    id_train = data_mod.load_csv(paths["id_train"])
    id_test = data_mod.load_csv(paths["id_test"])
    aux = data_mod.load_csv(paths["aux_out"])
    ood_sets = {}
    for name in sorted(cfg.data.ood_sets):
        p = out / f"ood_{name}.csv"
        if not p.exists():
            raise DataError(f"missing data file {p}; run gen-data first")
        ood_sets[name] = data_mod.load_csv(p).x
    if not isinstance(id_train, data_mod.LabeledDataset):
        raise DataError("id_train.csv lost its label column")
    return id_train, id_test, aux, ood_sets


def cmd_train(cfg: config_mod.RunConfig) -> int:
    """Fine-tune from a seeded init; writes checkpoint.json and history.csv."""
    out = _out_dir(cfg)
    id_train, _, aux, _ = _load_benchmark(cfg)
    dims = (id_train.x.shape[1], *cfg.model.hidden, cfg.data.classes)
    mlp = model_mod.init_model(dims, config_mod.component_seed(cfg.seed, "model"))
    trained, history = trainer_mod.fine_tune(mlp, id_train, aux.x, cfg.train)
    model_mod.save_checkpoint(trained, out / "checkpoint.json", seed=cfg.seed)
    history.to_csv(out / "history.csv")
    if history.records:
        last_epoch = history.records[-1].epoch
        finals = [r for r in history.records if r.epoch == last_epoch]
        mean_total = float(np.mean([r.total_loss for r in finals]))
        mean_ce = float(np.mean([r.ce_loss for r in finals]))
        print(f"final epoch {last_epoch}: mean total loss {mean_total:.6f}, "
              f"mean ce loss {mean_ce:.6f}")
    else:
        print("no training steps executed (epochs=0)")
    print(f"checkpoint written to {out / 'checkpoint.json'}")
    return 0


def cmd_eval(cfg: config_mod.RunConfig, checkpoint: str | None) -> int:
    """Evaluate a checkpoint: report.json, report.csv and per-sample scores.csv."""
    out = _out_dir(cfg)
    ckpt_path = Path(checkpoint) if checkpoint else out / "checkpoint.json"
    mlp = model_mod.load_checkpoint(ckpt_path)
    _, id_test, _, ood_sets = _load_benchmark(cfg)
    method = cfg.method_label()
    digest = cfg.digest()
    reports = trainer_mod.evaluate_suite(mlp, id_test, ood_sets, cfg.scores,
                                         method=method, seed=cfg.seed, config_digest=digest)
    (out / "report.json").write_text(
        json.dumps([r.to_dict() for r in reports], indent=2), encoding="utf-8")
    with (out / "report.csv").open("w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method", "score", "ood_set", "fpr95", "auroc", "aupr", "id_acc"])
        for report in reports:
            for row in report.results + [report.average]:
                writer.writerow([report.method, report.score_kind, row.set_name,
                                 repr(row.fpr95), repr(row.auroc), repr(row.aupr),
                                 repr(report.id_accuracy)])
    score_rows = []
    for spec in cfg.scores:
        id_scores = scoring.compute_scores(mlp, id_test.x, spec)
        score_rows.extend((i, "id_test", spec.kind, s) for i, s in enumerate(id_scores))
        for name in sorted(ood_sets):
            s_vals = scoring.compute_scores(mlp, ood_sets[name], spec)
            score_rows.extend((i, f"ood_{name}", spec.kind, s) for i, s in enumerate(s_vals))
    scoring.write_score_csv(out / "scores.csv", score_rows)
    for report in reports:
        avg = report.average
        print(f"[{report.score_kind}] average FPR95 {avg.fpr95:.4f}  AUROC {avg.auroc:.4f}  "
              f"AUPR {avg.aupr:.4f}  ID-ACC {report.id_accuracy:.4f}")
    return 0


def cmd_extrapolate(cfg: config_mod.RunConfig, checkpoint: str | None, input_csv: str,
                    dump_csv: str, samples_csv: str | None, epsilons: list[float] | None) -> int:
    """Synthesize from the inputs over an epsilon grid and dump per-sample records."""
    out = _out_dir(cfg)
    ckpt_path = Path(checkpoint) if checkpoint else out / "checkpoint.json"
    mlp = model_mod.load_checkpoint(ckpt_path)
    ds = data_mod.load_csv(input_csv)
    x = ds.x if not isinstance(ds, data_mod.LabeledDataset) else ds.x
    grid = epsilons if epsilons else [cfg.extrapolation.epsilon]
    score_spec = cfg.scores[0]
    dump_path = Path(dump_csv)
    dump_path.parent.mkdir(parents=True, exist_ok=True)
    samples_path = Path(samples_csv) if samples_csv else dump_path.with_name("synthesized.csv")
    with dump_path.open("w", encoding="utf-8", newline="\n") as dump_fh, \
            samples_path.open("w", encoding="utf-8", newline="\n") as samples_fh:
        dump_writer = csv.writer(dump_fh, lineterminator="\n")
        dump_writer.writerow(["index", "epsilon", "loss_before", "loss_after",
                              "score_before", "score_after"])
        sample_writer = csv.writer(samples_fh, lineterminator="\n")
        sample_writer.writerow(["index", "epsilon"] + [f"x{i}" for i in range(x.shape[1])])
        for eps in grid:
            batch = pgd_extrapolate(mlp, x, cfg.extrapolation, epsilon=float(eps))
            score_before = scoring.compute_scores(mlp, batch.origins, score_spec)
            score_after = scoring.compute_scores(mlp, batch.synthesized, score_spec)
            for i in range(x.shape[0]):
                dump_writer.writerow([
                    i, repr(float(eps)), repr(float(batch.initial_values[i])),
                    repr(float(batch.final_values[i])), repr(float(score_before[i])),
                    repr(float(score_after[i]))])
                sample_writer.writerow([i, repr(float(eps))] +
                                       [format(v, ".17g") for v in batch.synthesized[i]])
            print(f"epsilon {eps}: mean target {batch.initial_values.mean():.6f} -> "
                  f"{batch.final_values.mean():.6f}, mean {score_spec.kind} "
                  f"{score_before.mean():.6f} -> {score_after.mean():.6f}")
    return 0


def cmd_theory_verify(cfg: config_mod.RunConfig, out_csv: str | None) -> int:
    """Monte Carlo bound check; writes per-trial rows and prints the violation fraction."""
    out = _out_dir(cfg)
    t = cfg.theory
    mu = np.full(t.dim, t.mu_norm / np.sqrt(t.dim))
    spec = gmm_theory.GmmSpec(mu=mu, sigma=t.sigma)
    params = gmm_theory.TheoryParams(n1=t.n1, n2=t.n2, alpha=t.alpha, tau=t.tau,
                                     trials=t.trials)
    rng = np.random.Generator(np.random.PCG64(config_mod.component_seed(cfg.seed, "theory")))
    check = gmm_theory.verify_bound(spec, params, rng)
    path = Path(out_csv) if out_csv else out / "theory.csv"
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["trial", "ratio", "rhs", "satisfied"])
        for trial in check.trials:
            writer.writerow([trial.trial, repr(trial.ratio), repr(trial.rhs),
                             int(trial.satisfied)])
        writer.writerow(["violation_fraction", repr(check.violation_fraction), "", ""])
    print(f"violation fraction: {check.violation_fraction:.2f} over {t.trials} trials")
    return 0


def cmd_gradcheck(cases: int, seed: int) -> int:
    result = gradcheck_mod.run_suite(cases=cases, seed=seed)
    status = "PASS" if result.passed else "FAIL"
    print(f"gradcheck {status}: max relative error {result.max_relative_error:.3e} "
          f"(tolerance {result.tolerance:.0e}, {result.cases} cases)")
    return 0 if result.passed else 4


def cmd_report(report_paths: list[str], out_csv: str) -> int:
    """Merge several report.json files into one CSV table."""
    rows = []
    for rp in report_paths:
        path = Path(rp)
        if not path.exists():
            raise DataError(f"report not found: {path}")
        docs = json.loads(path.read_text(encoding="utf-8"))
        if isinstance(docs, dict):
            docs = [docs]
        for doc in docs:
            report = metrics_mod.DetectionReport.from_dict(doc)
            for row in report.results + [report.average]:
                rows.append([report.method, report.score_kind, row.set_name,
                             repr(row.fpr95), repr(row.auroc), repr(row.aupr),
                             repr(report.id_accuracy)])
    out_path = Path(out_csv)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with out_path.open("w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method", "score", "ood_set", "fpr95", "auroc", "aupr", "id_acc"])
        writer.writerows(rows)
    print(f"combined {len(rows)} rows into {out_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oodbench",
                                     description="Desk-scale OOD detection workbench")
    parser.add_argument("--config", help="path to a JSON run configuration")
    parser.add_argument("--seed", type=int, help="override the top-level seed")
    parser.add_argument("--out", help="override the output directory")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config entry by dotted path")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-data", help="generate the benchmark CSV files")
    sub.add_parser("train", help="fine-tune a model on the generated benchmark")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint into reports")
    p_eval.add_argument("--checkpoint", help="checkpoint path (default: <out>/checkpoint.json)")

    p_ex = sub.add_parser("extrapolate", help="dump synthesized outliers for an input CSV")
    p_ex.add_argument("--checkpoint", help="checkpoint path (default: <out>/checkpoint.json)")
    p_ex.add_argument("--input", required=True, help="input samples CSV")
    p_ex.add_argument("--dump", required=True, help="per-sample record CSV to write")
    p_ex.add_argument("--samples", help="synthesized samples CSV (default: synthesized.csv)")
    p_ex.add_argument("--epsilons", help="comma-separated epsilon grid")

    p_th = sub.add_parser("theory-verify", help="Monte Carlo check of the alignment bound")
    p_th.add_argument("--out-csv", help="per-trial CSV path (default: <out>/theory.csv)")

    p_gc = sub.add_parser("gradcheck", help="finite-difference self-test")
    p_gc.add_argument("--cases", type=int, default=100)
    p_gc.add_argument("--gc-seed", type=int, default=7)

    p_rep = sub.add_parser("report", help="merge report.json files into one CSV")
    p_rep.add_argument("reports", nargs="+", help="report.json paths")
    p_rep.add_argument("--out-csv", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "gradcheck":
            return cmd_gradcheck(args.cases, args.gc_seed)
        if args.command == "report":
            return cmd_report(args.reports, args.out_csv)
        cfg = _load_run_config(args)
        if args.command == "gen-data":
            return cmd_gen_data(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint)
        if args.command == "extrapolate":
            eps = None
            if args.epsilons:
                eps = [float(v) for v in args.epsilons.split(",") if v.strip()]
            return cmd_extrapolate(cfg, args.checkpoint, args.input, args.dump,
                                   args.samples, eps)
        if args.command == "theory-verify":
            return cmd_theory_verify(cfg, args.out_csv)
        raise ConfigError(f"unknown command {args.command!r}")
    except OodbenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return getattr(exc, "exit_code", 2)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
