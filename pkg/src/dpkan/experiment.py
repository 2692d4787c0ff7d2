"""Experiment orchestration: trials, reports and width sweeps."""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from dpkan.basis import BSplineGrid, RswafGrid
from dpkan.config import ExperimentConfig, parse_config
from dpkan.data import gen_synthetic, load_csv, load_mnist_idx, standardize, train_test_split
from dpkan.layers import build_model
from dpkan.numerics import Rng
from dpkan.optim import DpSgdConfig, evaluate, train
from dpkan.serialize import save_model

REPORT_HEADER = "# dpkan run report v1"


@dataclass
class RunReport:
    model: str
    task: str
    private: bool
    metric_name: str
    metric_values: list
    seeds: list
    epsilon: float
    delta: float
    parameter_count: int
    config_text: str
    wall_clock_seconds: float = field(default=0.0, compare=False)

    @property
    def trials(self):
        return len(self.metric_values)

    @property
    def metric_mean(self) -> float:
        return float(np.mean(self.metric_values))

    @property
    def metric_half_range(self) -> float:
        """(max - min) / 2 over trials; not a standard deviation."""
        return (max(self.metric_values) - min(self.metric_values)) / 2

    def to_text(self) -> str:
        lines = [
            REPORT_HEADER,
            f"model = {self.model}",
            f"task = {self.task}",
            f"private = {'true' if self.private else 'false'}",
            f"metric = {self.metric_name}",
            f"trials = {self.trials}",
            f"seeds = {','.join(str(s) for s in self.seeds)}",
            f"metric_values = {','.join(repr(v) for v in self.metric_values)}",
            f"metric_mean = {self.metric_mean!r}",
            f"metric_half_range = {self.metric_half_range!r}",
            f"epsilon = {self.epsilon!r}",
            f"delta = {self.delta!r}",
            f"parameter_count = {self.parameter_count}",
            f"wall_clock_seconds = {self.wall_clock_seconds:.3f}",
        ]
        lines += [f"config.{line}" for line in self.config_text.splitlines()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunReport":
        lines = text.splitlines()
        if not lines or lines[0] != REPORT_HEADER:
            raise ValueError("not a dpkan run report")
        kv, config_lines = {}, []
        for line in lines[1:]:
            if line.startswith("config."):
                config_lines.append(line[len("config.") :])
            else:
                k, v = (p.strip() for p in line.split("=", 1))
                kv[k] = v
        report = cls(
            model=kv["model"],
            task=kv["task"],
            private=kv["private"] == "true",
            metric_name=kv["metric"],
            metric_values=[float(v) for v in kv["metric_values"].split(",")],
            seeds=[int(s) for s in kv["seeds"].split(",")],
            epsilon=float(kv["epsilon"]),
            delta=float(kv["delta"]),
            parameter_count=int(kv["parameter_count"]),
            config_text="\n".join(config_lines) + "\n",
            wall_clock_seconds=float(kv["wall_clock_seconds"]),
        )
        if report.trials != int(kv["trials"]):
            raise ValueError("trials count does not match metric values")
        return report

    def config(self) -> ExperimentConfig:
        return parse_config(self.config_text, check_paths=False)


def dp_config(cfg: ExperimentConfig, seed: int, check_clipping=False) -> DpSgdConfig:
    return DpSgdConfig(
        epochs=cfg.epochs,
        learning_rate=cfg.learning_rate,
        clip_norm=cfg.clip_norm,
        noise_multiplier=cfg.noise_multiplier,
        batch_size=cfg.batch_size,
        delta=cfg.delta,
        seed=seed,
        private=cfg.private,
        non_private_batch_clip=cfg.batch_clip,
        weight_decay=cfg.weight_decay,
        sampling=cfg.sampling,
        check_clipping=check_clipping,
    )


def model_for(cfg: ExperimentConfig, n_in: int, n_out: int, seed: int):
    return build_model(
        cfg.model,
        [n_in, *cfg.hidden, n_out],
        gen=Rng(seed).stream("init"),
        kan_grid=BSplineGrid(cfg.kan_degree, cfg.kan_grid_size, cfg.kan_grid_lo, cfg.kan_grid_hi),
        rswaf_grid=RswafGrid(cfg.fk_grid_min, cfg.fk_grid_max, cfg.fk_num_grids, cfg.fk_inv_denominator),
        mlp_activation=cfg.mlp_activation,
        fk_layer_norm=cfg.fk_layer_norm,
        fk_bias=cfg.fk_bias,
    )


def _subset(ds, n, seed, stream):
    if not n or n >= len(ds):
        return ds
    idx = np.sort(Rng(seed).stream(stream).permutation(len(ds))[:n])
    return ds.subset(idx)


def prepare_data(cfg: ExperimentConfig, seed: int, _cache=None):
    """Return the (train, test) pair for one trial."""
    if cfg.data == "mnist":
        key = (cfg.mnist_train_images, cfg.mnist_test_images)
        if _cache is not None and key in _cache:
            train_ds, test_ds = _cache[key]
        else:
            train_ds = load_mnist_idx(cfg.mnist_train_images, cfg.mnist_train_labels)
            test_ds = load_mnist_idx(cfg.mnist_test_images, cfg.mnist_test_labels)
            if _cache is not None:
                _cache[key] = (train_ds, test_ds)
        train_ds = _subset(train_ds, cfg.train_subset, seed, "train_subset")
        test_ds = _subset(test_ds, cfg.test_subset, seed, "test_subset")
    else:
        if cfg.data == "synthetic":
            full = gen_synthetic(cfg.synthetic_n, cfg.synthetic_d, cfg.synthetic_noise, cfg.synthetic_seed)
        else:
            full = load_csv(cfg.csv_path, cfg.csv_target, cfg.csv_header)
        train_ds, test_ds = train_test_split(full, cfg.test_fraction, seed)
        train_ds = _subset(train_ds, cfg.train_subset, seed, "train_subset")
    if cfg.standardize:
        train_ds, (test_ds,) = standardize(train_ds, [test_ds])
    return train_ds, test_ds


@dataclass
class TrialResult:
    seed: int
    metric: float
    model: object
    log: object


def run_trial(cfg: ExperimentConfig, trial: int, check_clipping=False, _cache=None) -> TrialResult:
    seed = cfg.seed + trial
    train_ds, test_ds = prepare_data(cfg, seed, _cache)
    n_out = 1 if cfg.task == "regression" else train_ds.n_classes
    model = model_for(cfg, train_ds.n_features, n_out, seed)
    model, log = train(model, train_ds, dp_config(cfg, seed, check_clipping))
    model.feature_mean, model.feature_std = train_ds.feature_mean, train_ds.feature_std
    return TrialResult(seed, evaluate(model, test_ds), model, log)


def run_experiment(cfg: ExperimentConfig, out_dir=None, check_clipping=False) -> RunReport:
    """Run ``cfg.trials`` seeded trials and persist the report, logs and models.

    Trial ``i`` uses seed ``cfg.seed + i`` for splitting, initialization,
    batch sampling and noise. Pass ``out_dir=False`` to skip writing files.
    """
    start = time.perf_counter()
    out_dir = cfg.out_dir if out_dir is None else out_dir
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    cache = {}
    results = []
    for i in range(cfg.trials):
        res = run_trial(cfg, i, check_clipping, cache)
        results.append(res)
        if out_dir:
            with open(os.path.join(out_dir, f"log_trial{i}.txt"), "w") as f:
                f.write(res.log.to_text())
            save_model(res.model, os.path.join(out_dir, f"model_trial{i}.dpkan"))
    last = results[0].log.records[-1] if results[0].log.records else None
    report = RunReport(
        model=cfg.model,
        task=cfg.task,
        private=cfg.private,
        metric_name=results[0].log.metric_name,
        metric_values=[r.metric for r in results],
        seeds=[r.seed for r in results],
        epsilon=last.epsilon if last else math.inf,
        delta=cfg.delta,
        parameter_count=results[0].model.parameter_count,
        config_text=cfg.to_text(),
        wall_clock_seconds=time.perf_counter() - start,
    )
    if out_dir:
        with open(os.path.join(out_dir, "report.txt"), "w") as f:
            f.write(report.to_text())
    report.results = results
    return report


SWEEP_COLUMNS = (
    "model", "private", "width", "parameters", "metric", "metric_mean", "metric_half_range", "epsilon", "trials",
)


def sweep(configs, widths, modes=(False, True), out_dir=None) -> list[dict]:
    """Run every (config, privacy mode, hidden width) and return long-format rows.

    Each config is a template fixing the model kind and hyperparameters; its
    ``private`` flag is overridden by each entry of ``modes``. The row count is
    ``len(configs) * len(modes) * len(widths)``. With ``out_dir`` set, each
    run writes into its own subdirectory and the table goes to ``sweep.tsv``.
    """
    if isinstance(configs, ExperimentConfig):
        configs = [configs]
    rows = []
    for cfg in configs:
        if cfg.task != "classification":
            raise ValueError("sweep expects classification configs")
        for private in modes:
            for w in widths:
                run_cfg = cfg.with_overrides(hidden=(int(w),), private=bool(private))
                sub = False
                if out_dir:
                    sub = os.path.join(out_dir, f"{cfg.model}_{'dp' if private else 'nodp'}_w{w}")
                rep = run_experiment(run_cfg, out_dir=sub)
                rows.append(
                    {
                        "model": cfg.model,
                        "private": bool(private),
                        "width": int(w),
                        "parameters": rep.parameter_count,
                        "metric": rep.metric_name,
                        "metric_mean": rep.metric_mean,
                        "metric_half_range": rep.metric_half_range,
                        "epsilon": rep.epsilon,
                        "trials": rep.trials,
                    }
                )
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "sweep.tsv"), "w") as f:
            f.write(format_sweep(rows))
    return rows


def format_sweep(rows) -> str:
    out = ["\t".join(SWEEP_COLUMNS)]
    for r in rows:
        vals = []
        for c in SWEEP_COLUMNS:
            v = r[c]
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            vals.append(str(v))
        out.append("\t".join(vals))
    return "\n".join(out) + "\n"


def parse_sweep(text: str) -> list[dict]:
    lines = text.splitlines()
    header = lines[0].split("\t")
    casts = {"private": lambda s: s == "true", "width": int, "parameters": int, "trials": int,
             "metric_mean": float, "metric_half_range": float, "epsilon": float}
    return [{k: casts.get(k, str)(v) for k, v in zip(header, line.split("\t"))} for line in lines[1:]]
