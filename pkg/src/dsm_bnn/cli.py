"""Batch experiment runner: ``dsm-bnn {gen-data,fit,analyze,attack} --config FILE``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import os
import sys

import numpy as np

from . import datagen, diagnostics, linearize, metrics, pruning, robustness, shrinkage
from .bnn import Model, NetworkWeights, Posterior, draw_sigmas, draw_weights, predict_weights
from .config import ConfigError, ExperimentConfig, load_config
from .layout import LinearShape, NetworkShape
from .nuts import SamplerConfig, SamplerInitError, Trace, resolve_threads, run_nuts
from .specfun import NonConvergenceError

log = logging.getLogger("dsm_bnn")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class NumericalFailure(RuntimeError):
    pass


# --------------------------------------------------------------------------
# output helpers

def _header(cfg: ExperimentConfig, command: str) -> list[str]:
    return [f"config_hash={cfg.digest()}", f"seed={cfg.seed}", f"command={command}"]


def write_rows(path, rows: list[dict], header_lines, columns=None):
    columns = columns or (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def write_json(path, payload: dict, header_lines):
    meta = dict(item.split("=", 1) for item in header_lines)
    with open(path, "w") as fh:
        json.dump({"_header": meta, **payload}, fh, indent=2, sort_keys=True)
        fh.write("\n")


# --------------------------------------------------------------------------
# experiment assembly

def data_seed(cfg: ExperimentConfig) -> int:
    return cfg.dataset.seed if cfg.dataset.seed is not None else cfg.seed


def _generate(cfg: ExperimentConfig, N: int, seed: int) -> datagen.Dataset:
    d = cfg.dataset
    if d.generator == "linreg":
        return datagen.gen_linreg(N, d.rho, seed)
    if d.generator in ("friedman", "friedman_correlated"):
        return datagen.gen_friedman(N, d.generator == "friedman_correlated", seed=seed,
                                    noise_sd=d.noise_sd)
    if d.generator == "logistic_toy":
        return datagen.gen_logistic_toy(N, seed, d.shift)
    raise ConfigError(f"dataset.generator: unknown generator {d.generator!r}")


def build_dataset(cfg: ExperimentConfig) -> datagen.Dataset:
    """Training data with its test set, standardization fitted on the training rows.

    Linear regression keeps the raw scale; Friedman standardizes y; held-out
    generated data come from ``test_seed``.
    """
    d = cfg.dataset
    seed = data_seed(cfg)
    if d.path is not None:
        ds = datagen.load_csv(d.path, d.schema_)
        if d.test_path is not None:
            ds = ds.with_test(datagen.load_csv(d.test_path, d.schema_))
        elif d.train_frac < 1.0:
            ds = ds.split(d.train_frac, seed)
    else:
        ds = _generate(cfg, d.N, seed)
        if d.train_frac < 1.0:
            ds = ds.split(d.train_frac, seed)
        elif d.test_N > 0 and d.generator != "linreg":
            ds = ds.with_test(_generate(cfg, d.test_N, d.test_seed))
        if d.generator == "linreg":
            ds.standardize_x = False
            ds.standardize_y = False
    if d.standardize_y is not None:
        ds.standardize_y = d.standardize_y
    ds._fit_stats()
    return ds


def build_model(cfg: ExperimentConfig, ds: datagen.Dataset) -> Model:
    spec = cfg.prior_spec()
    p = ds.p
    if cfg.model.linear:
        shape = LinearShape(p)
    else:
        shape = NetworkShape(p, cfg.model.hidden)
    if spec.family != "Gaussian" and spec.tau0 is None:
        if not cfg.model.auto_tau0 or not spec.p0 < p:
            raise ConfigError(f"model.prior.tau0: set it explicitly (p0={spec.p0} needs p > p0, p={p})")
        spec = spec.with_tau0(p, len(ds.train_idx))
    return Model(shape, spec, ds.task)


def sampler_config(cfg: ExperimentConfig) -> SamplerConfig:
    s = cfg.sampler
    return SamplerConfig(chains=s.chains, warmup=s.warmup, draws=s.draws,
                         target_accept=s.target_accept, max_treedepth=s.max_treedepth, seed=cfg.seed)


def ensemble(X, weights: list[NetworkWeights], model: Model, ds: datagen.Dataset, trace):
    """Predictive ensemble on the data scale."""
    draws = predict_weights(X, weights, model.task)
    if model.task == "regression":
        sig = draw_sigmas(trace, model)
        return metrics.PredictiveEnsemble(ds.restore_y(draws), sig * ds.y_sd, model.task)
    return metrics.PredictiveEnsemble(draws, None, model.task)


def evaluation_split(ds: datagen.Dataset):
    """Test rows if there are any, otherwise the training rows."""
    if len(ds.test_idx):
        X, _ = ds.test()
        return "test", X, ds.y[ds.test_idx]
    X, _ = ds.train()
    return "train", X, ds.y[ds.train_idx]


def metric_rows(ens, y, task, split) -> list[dict]:
    summary = (metrics.regression_summary(ens, y) if task == "regression"
               else metrics.classification_summary(ens, y))
    return [{"split": split, "metric": k, "value": float(v)} for k, v in summary.items()]


# --------------------------------------------------------------------------
# commands

def cmd_gen_data(cfg: ExperimentConfig, out: str) -> list[str]:
    """Seed-indexed replicate datasets plus one held-out set from ``test_seed``."""
    d = cfg.dataset
    if d.generator is None:
        raise ConfigError("dataset.generator: gen-data needs a generator")
    header = _header(cfg, "gen-data")
    written = []
    if d.replicates is not None:
        sizes, seeds = d.replicates.sizes, d.replicates.seeds
    else:
        sizes, seeds = [d.N], [data_seed(cfg)]
    for N, seed in itertools.product(sizes, seeds):
        path = os.path.join(out, f"{d.generator}_N{N}_seed{seed}.csv")
        _generate(cfg, N, seed).to_csv(path, [*header, f"data_seed={seed}", f"N={N}"])
        written.append(path)
    if d.test_N > 0:
        path = os.path.join(out, f"{d.generator}_test_N{d.test_N}_seed{d.test_seed}.csv")
        _generate(cfg, d.test_N, d.test_seed).to_csv(
            path, [*header, f"data_seed={d.test_seed}", f"N={d.test_N}"])
        written.append(path)
    return written


def cmd_fit(cfg: ExperimentConfig, out: str, threads=None) -> dict:
    ds = build_dataset(cfg)
    model = build_model(cfg, ds)
    X, y = ds.train()
    post = Posterior(model, X, y)
    log.info("fitting %s with %d parameters on %d rows", model.spec.family, model.layout.dim, len(y))
    trace = run_nuts(post, model.layout.dim, sampler_config(cfg), threads=threads,
                     coordinate_names=model.layout.coordinate_names)
    header = _header(cfg, "fit")
    trace.to_csv(os.path.join(out, "trace.csv"), header)
    diag = diagnostics.summarize(trace)
    diag.update({"family": model.spec.family, "tau0": model.spec.tau0, "dim": model.layout.dim,
                 "n_train": int(len(y))})
    write_json(os.path.join(out, "diagnostics.json"), diag, header)
    split, Xe, ye = evaluation_split(ds)
    rows = metric_rows(ensemble(Xe, draw_weights(trace, model), model, ds, trace), ye, model.task, split)
    write_rows(os.path.join(out, "metrics.csv"), rows, header, ["split", "metric", "value"])
    return {"diagnostics": diag, "metrics": rows}


def _load_trace(path, model: Model) -> Trace:
    if not os.path.isfile(path):
        raise ConfigError(f"--trace: file not found: {path}")
    trace = Trace.from_csv(path)
    if trace.dim != model.layout.dim:
        raise ConfigError(f"--trace: trace has {trace.dim} coordinates, the configured model "
                          f"needs {model.layout.dim}")
    return trace


def _kappa_contexts(cfg: ExperimentConfig):
    k = cfg.kappa_tables
    for z, a, p, nu in itertools.product(k.z, k.alpha, k.p, k.nu):
        yield f"dsm(z={z},alpha={a},p={p},nu={nu})", shrinkage.ShrinkageContext(z=z, alpha=a, p=p, nu=nu)


def run_robustness(cfg, ds, model, trace, out, header) -> dict:
    r = cfg.robustness
    base = robustness.AttackConfig(epsilon=max(r.epsilons), delta_fractions=tuple(r.delta_fractions),
                                   subset_size=r.subset_size, n_draws=r.n_draws, seed=cfg.seed)
    _, Xe, _ = evaluation_split(ds)
    p1_rows, p2_rows = robustness.robustness_tables(draw_weights(trace, model), Xe, r.epsilons, base)
    attack_header = [*header, "search=single-step FGSM per draw; p1 and p2 are lower bounds",
                     "inputs=standardized feature scale"]
    write_rows(os.path.join(out, "robustness_p1.csv"), p1_rows, attack_header)
    write_rows(os.path.join(out, "robustness_p2.csv"), p2_rows, attack_header)
    return {"robustness_p2": p2_rows}


def cmd_analyze(cfg: ExperimentConfig, out: str, trace_path: str, analyses=None) -> dict:
    analyses = list(cfg.analyses if analyses is None else analyses)
    needs_fit = [a for a in analyses if a not in ("kappa_tables", "dependence_sweep")]
    header = _header(cfg, "analyze")
    summary = {}
    if needs_fit:
        ds = build_dataset(cfg)
        model = build_model(cfg, ds)
        trace = _load_trace(trace_path, model)
        weights = draw_weights(trace, model)
        split, Xe, ye = evaluation_split(ds)
    if "metrics" in analyses:
        rows = metric_rows(ensemble(Xe, weights, model, ds, trace), ye, model.task, split)
        write_rows(os.path.join(out, "analysis_metrics.csv"), rows, header, ["split", "metric", "value"])
    if "m_eff" in analyses:
        X, _ = ds.train()
        series = linearize.posterior_m_eff_trace(trace, X, model, thin=cfg.m_eff_thin, keep_spectra=True)
        write_rows(os.path.join(out, "m_eff.csv"),
                   [{"draw": int(i), "m_eff": float(v)} for i, v in zip(series.draw_index, series.values)],
                   header, ["draw", "m_eff"])
        write_rows(os.path.join(out, "spectrum.csv"),
                   [{"draw": int(i), "index": j, "omega": float(w)}
                    for i, om in zip(series.draw_index, series.spectra) for j, w in enumerate(om)],
                   header, ["draw", "index", "omega"])
        vals = series.values
        summary["m_eff"] = {"median": float(np.median(vals)) if vals.size else None,
                            "mean": float(np.mean(vals)) if vals.size else None,
                            "evaluated": int(vals.size), "skipped": series.skipped}
    if "prune_sweep" in analyses:
        restore = lambda e: e
        if model.task == "regression":
            restore = lambda e: metrics.PredictiveEnsemble(ds.restore_y(e.draws), e.sigma * ds.y_sd)
            chosen = {"rmse": metrics.rmse, "crps": metrics.crps}
        else:
            chosen = {"accuracy": metrics.accuracy, "nll": metrics.binary_nll}
        rows = pruning.sparsity_sweep(trace, cfg.prune.levels, Xe, ye, model, chosen, restore)
        write_rows(os.path.join(out, "prune_sweep.csv"), rows, header,
                   ["scheme", "sparsity", "metric", "value"])
    if "robustness" in analyses:
        summary.update(run_robustness(cfg, ds, model, trace, out, header))
    if "kappa_tables" in analyses:
        k = cfg.kappa_tables
        rows = shrinkage.kappa_density_table_logit(list(_kappa_contexts(cfg)), k.grid_size)
        write_rows(os.path.join(out, "kappa_density.csv"), rows, header)
    if "dependence_sweep" in analyses:
        dep = cfg.dependence
        rows = shrinkage.dispersion_sweep(dep.prior, dep.values, dep.p, dep.alpha, tau=dep.tau,
                                          draws=dep.draws, seed=cfg.seed)
        write_rows(os.path.join(out, "dependence_sweep.csv"), rows, header)
    if summary:
        write_json(os.path.join(out, "analysis.json"), summary, header)
    return summary


def cmd_attack(cfg: ExperimentConfig, out: str, trace_path: str) -> dict:
    ds = build_dataset(cfg)
    model = build_model(cfg, ds)
    if model.task != "binary_classification":
        raise ConfigError("dataset: attack requires a classification dataset")
    trace = _load_trace(trace_path, model)
    return run_robustness(cfg, ds, model, trace, out, _header(cfg, "attack"))


# --------------------------------------------------------------------------
# entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dsm-bnn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("gen-data", "fit", "analyze", "attack"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment JSON file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--threads", type=int, help="worker processes (default: $DSM_BNN_THREADS or 1)")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("analyze", "attack"):
            p.add_argument("--trace", help="trace CSV (default: OUT/trace.csv)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, seed=args.seed, output_dir=args.out)
        out = cfg.output_dir
        os.makedirs(out, exist_ok=True)
        threads = resolve_threads(args.threads)
        trace_path = getattr(args, "trace", None) or os.path.join(out, "trace.csv")
        if args.command == "gen-data":
            cmd_gen_data(cfg, out)
        elif args.command == "fit":
            cmd_fit(cfg, out, threads)
        elif args.command == "analyze":
            cmd_analyze(cfg, out, trace_path)
        else:
            cmd_attack(cfg, out, trace_path)
    except (ConfigError, datagen.DatasetError) as exc:
        print(f"configuration error:\n{exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SamplerInitError, NonConvergenceError, FloatingPointError, NumericalFailure) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
