"""Sweep execution: datasets per (alpha, seed), every scheme per M, test-set reports."""
from __future__ import annotations

import csv
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field

import numpy as np

from . import datagen
from .config import ExperimentConfig, dump_config
from .evaluation import REPORT_COLUMNS, _fmt, evaluate, write_roc_csv
from .exceptions import UwAuthError
from .plot import write_error_rate_svg
from .schemes import GLOBAL, derive_seed, parse_global_config, train_global, train_local_scheme

log = logging.getLogger("uwauth")

FAILURE_COLUMNS = ["scheme", "M", "alpha", "seed", "error"]


def _alpha_key(alpha):
    return f"alpha={float(alpha)!r}"


def source_key(cfg: ExperimentConfig):
    return f"ingest:{cfg.ingest}" if cfg.ingest else f"scenario:{cfg.scenario}"


_BANKS: dict = {}
_DATASETS: dict = {}


def marginal_bank(cfg: ExperimentConfig) -> datagen.MarginalBank:
    key = (source_key(cfg), cfg.N, cfg.K)
    if key not in _BANKS:
        if cfg.ingest:
            _BANKS[key] = datagen.fit_marginal_bank(datagen.read_series_csv(cfg.ingest), description=cfg.ingest)
        else:
            _BANKS[key] = datagen.reference_marginals(cfg.scenario, cfg.N, cfg.K)
    return _BANKS[key]


def cell_datasets(cfg: ExperimentConfig, alpha, seed):
    """Train/val/test split for one (alpha, seed); cached per process.

    Depends only on the marginal source, alpha, seed, sample count and split
    fractions, so every cell sharing those sees bitwise-identical data.
    """
    key = (source_key(cfg), cfg.N, cfg.K, float(alpha), int(seed), cfg.samples_per_class, cfg.split)
    if key not in _DATASETS:
        bank = marginal_bank(cfg)
        rng = np.random.default_rng(derive_seed(seed, "dataset", _alpha_key(alpha)))
        ds = datagen.generate_dataset(bank, datagen.CopulaSpec(float(alpha), cfg.N, cfg.K),
                                      cfg.samples_per_class, rng)
        split_rng = np.random.default_rng(derive_seed(seed, "split", _alpha_key(alpha)))
        _DATASETS.clear()  # one dataset at a time keeps memory flat at 10^5 rows per class
        _DATASETS[key] = datagen.split_dataset(ds, cfg.split, split_rng)
    return _DATASETS[key]


def bundle_name(scheme, M, alpha, seed):
    return f"{scheme}_M{M}_alpha{float(alpha):.2f}_seed{seed}"


def run_group(cfg: ExperimentConfig, alpha, seed, cells, out_dir):
    """Train and evaluate every ``(scheme, M, notation)`` cell on one dataset.

    Returns ``(rows, failures)``. A failing cell is recorded and skipped.
    """
    tr, va, te = cell_datasets(cfg, alpha, seed)
    train_cfg = cfg.train.replace(seed=derive_seed(seed, "train", _alpha_key(alpha)))
    ld_cache: dict = {}
    rows, failures = [], []
    for scheme, M, notation in cells:
        meta = {"scheme": scheme, "M": M, "alpha": float(alpha), "seed": int(seed)}
        t0 = time.perf_counter()
        try:
            if scheme == GLOBAL:
                gc = parse_global_config(notation, cfg.N, cfg.neuron_budget)
                bundle = train_global(gc, (tr.X, tr.y), (va.X, va.y), train_cfg, standardize=cfg.standardize)
            else:
                bundle = train_local_scheme(scheme, M, (tr.X, tr.y), (va.X, va.y), train_cfg,
                                            freeze_decision=cfg.freeze_decision, ld_cache=ld_cache,
                                            standardize=cfg.standardize,
                                            reconstruction_units=cfg.reconstruction_units)
            report = evaluate((bundle.scores(va.X), va.y), (bundle.scores(te.X), te.y), meta, with_roc=cfg.roc)
        except (UwAuthError, ArithmeticError) as exc:
            log.warning("cell %s M=%s alpha=%s seed=%s failed: %s", scheme, M, alpha, seed, exc)
            failures.append({**meta, "error": f"{type(exc).__name__}: {exc}"})
            continue
        bundle.threshold = report.threshold
        bundle.metadata.update(meta, notation=notation, requested_scheme=scheme)
        name = bundle_name(scheme, M, alpha, seed)
        if cfg.save_bundles:
            bundle.save(os.path.join(out_dir, "bundles", name + ".json"))
        if cfg.roc:
            write_roc_csv(os.path.join(out_dir, "roc", name + ".csv"), report.roc)
        rows.append(report.row())
        log.info("%s M=%s alpha=%.2f seed=%s: epsilon=%.5f (%.1fs)", scheme, M, alpha, seed,
                 report.epsilon, time.perf_counter() - t0)
    return rows, failures


def _sort_key(row):
    return (str(row["scheme"]), int(row["M"]), float(row["alpha"]), int(row["seed"]))


def _append(path, columns, rows):
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def _rewrite_sorted(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in sorted(rows, key=_sort_key):
            w.writerow([_fmt(r[c]) for c in columns])


@dataclass
class RunSummary:
    rows: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    out_dir: str = ""

    @property
    def results_csv(self):
        return os.path.join(self.out_dir, "results.csv")

    @property
    def exit_code(self):
        return 2 if self.failures else 0


def run_experiment(cfg: ExperimentConfig, out_dir=None, jobs=1, seed_offset=0) -> RunSummary:
    """Run the full (alpha x seed x scheme x M) sweep and write its artifacts."""
    out_dir = out_dir or cfg.output
    os.makedirs(out_dir, exist_ok=True)
    for sub, on in (("bundles", cfg.save_bundles), ("roc", cfg.roc)):
        if on:
            os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
    with open(os.path.join(out_dir, "config.resolved.yaml"), "w") as fh:
        fh.write(dump_config(cfg))
        fh.write(f"# seed_offset: {seed_offset}\n")
    summary = RunSummary(out_dir=out_dir)
    results = summary.results_csv
    _rewrite_sorted(results, REPORT_COLUMNS, [])
    cells = cfg.cells()
    groups = [(a, s + seed_offset) for a in cfg.alphas for s in cfg.seeds]
    log.info("%d datasets x %d models -> %s", len(groups), len(cells), out_dir)

    def collect(rows, failures):
        _append(results, REPORT_COLUMNS, rows)
        summary.rows.extend(rows)
        summary.failures.extend(failures)

    if jobs <= 1:
        for a, s in groups:
            collect(*run_group(cfg, a, s, cells, out_dir))
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(run_group, cfg, a, s, cells, out_dir) for a, s in groups]
            for fut in as_completed(futures):
                collect(*fut.result())

    _rewrite_sorted(results, REPORT_COLUMNS, summary.rows)
    failures_csv = os.path.join(out_dir, "failures.csv")
    if summary.failures:
        _rewrite_sorted(failures_csv, FAILURE_COLUMNS, summary.failures)
    elif os.path.exists(failures_csv):
        os.remove(failures_csv)
    if summary.rows:
        write_error_rate_svg(os.path.join(out_dir, "epsilon_vs_alpha.svg"), summary.rows)
    return summary


def mean_epsilon(rows):
    """Seed-averaged epsilon keyed by ``(scheme, M, alpha)``."""
    acc: dict = {}
    for r in rows:
        acc.setdefault((r["scheme"], int(r["M"]), float(r["alpha"])), []).append(float(r["epsilon"]))
    return {k: float(np.mean(v)) for k, v in acc.items()}


def read_results_csv(path):
    with open(path, newline="") as fh:
        return [dict(r) for r in csv.DictReader(fh)]

