"""Experiment cells, the sweep runner, and the result table.

A cell is one (schedule, solver, NFE, mode) combination run end to end:
build the problem, reuse or generate the teacher dataset, train if the mode
asks for it, then evaluate on fresh noise against the teacher.  Cells are
isolated jobs writing their own JSON result files, so sweeps resume by
skipping cells whose files exist; aggregation just collects rows into one
CSV.  Cell failures are recorded in place and never abort the sweep.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .coeffs import init_preset
from .configs import (ExperimentConfig, build_grid, build_model, build_schedule,
                      build_teacher, config_to_dict)
from .grids import LearnableTimeParams, heuristic_grid
from .teachers import generate_dataset, load_dataset, save_dataset
from .training import (evaluate, train_joint, train_s4s, train_s4s_alt,
                       train_schedule_only)

MODES = ("baseline", "s4s", "s4s-alt", "joint", "schedule-only")

RESULT_COLUMNS = [
    "schedule", "solver", "order", "preset", "prediction", "mode", "nfe",
    "status", "mean_error", "median_error", "max_error",
    "mean_error_normalized", "baseline_mean_error", "delta_vs_baseline",
    "final_train_loss", "final_val_loss", "r", "nfe_used", "wall_time_s",
    "seed", "message",
]


class ResultTable:
    """Rows keyed by (schedule, solver, nfe, mode); every requested cell present."""

    def __init__(self):
        self.rows = {}

    def add(self, row: dict):
        key = (row["schedule"], row["solver"], row["nfe"], row["mode"])
        self.rows[key] = row

    def ordered(self):
        return [self.rows[key] for key in sorted(self.rows)]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS)
            writer.writeheader()
            for row in self.ordered():
                writer.writerow({col: row.get(col, "") for col in RESULT_COLUMNS})

    def formatted(self) -> str:
        lines = [f"{'schedule':<10} {'solver':<6} {'mode':<13} {'nfe':>4} "
                 f"{'status':<10} {'mean_err':>12} {'delta':>12}"]
        for row in self.ordered():
            mean = row.get("mean_error", "")
            delta = row.get("delta_vs_baseline", "")
            fmt = lambda v: f"{v:.6g}" if isinstance(v, float) else str(v)
            lines.append(f"{row['schedule']:<10} {row['solver']:<6} {row['mode']:<13} "
                         f"{row['nfe']:>4} {row['status']:<10} {fmt(mean):>12} {fmt(delta):>12}")
        return "\n".join(lines)


def _cell_seed(base_seed: int, key: str) -> int:
    digest = hashlib.sha256(f"{base_seed}:{key}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


def _dataset_for(cfg: ExperimentConfig, schedule, model, cache_dir=None):
    teacher = build_teacher(cfg.teacher)
    count = cfg.dataset.n_train + cfg.dataset.n_val
    val_fraction = cfg.dataset.n_val / count
    if cache_dir is None:
        return generate_dataset(teacher, schedule, model, count, cfg.seed, val_fraction)
    tag = hashlib.sha256(json.dumps(
        [config_to_dict(cfg)["schedule"], config_to_dict(cfg)["model"],
         config_to_dict(cfg)["teacher"], count, cfg.seed], sort_keys=True
    ).encode()).hexdigest()[:16]
    path = Path(cache_dir) / f"dataset_{tag}.fsd"
    if path.exists():
        return load_dataset(path)
    dataset = generate_dataset(teacher, schedule, model, count, cfg.seed, val_fraction)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(dataset, path)
    return dataset


def run_cell(cfg: ExperimentConfig, nfe: int, mode: str, cache_dir=None) -> dict:
    """One isolated experiment cell; returns a result-table row."""
    row = {
        "schedule": cfg.schedule.kind, "solver": cfg.solver.kind,
        "order": cfg.solver.order, "preset": cfg.solver.preset,
        "prediction": cfg.solver.prediction, "mode": mode, "nfe": nfe,
        "status": "ok", "seed": cfg.seed, "message": "",
    }
    if mode not in MODES:
        row.update(status="failed", message=f"unknown mode {mode!r}")
        return row
    if cfg.solver.order > nfe:
        row.update(status="infeasible", message="order exceeds step count")
        return row
    started = time.perf_counter()
    try:
        schedule = build_schedule(cfg.schedule)
        model = build_model(cfg.model)
        teacher = build_teacher(cfg.teacher)
        grid = heuristic_grid(schedule, nfe, cfg.grid.kind, rho=cfg.grid.rho)
        coeffs = init_preset(cfg.solver.kind, cfg.solver.order, nfe, cfg.solver.preset,
                             schedule=schedule, grid=grid,
                             prediction=cfg.solver.prediction, seed=cfg.seed,
                             tied=cfg.solver.tied)
        eval_seed = _cell_seed(cfg.seed, f"eval:{cfg.schedule.kind}:{nfe}")
        baseline = evaluate(coeffs, schedule, model, teacher, grid=grid,
                            n_eval=200, seed=eval_seed, h_mode=cfg.train.h_mode)
        row["baseline_mean_error"] = baseline["mean_error"]
        if mode == "baseline":
            row.update(mean_error=baseline["mean_error"],
                       median_error=baseline["median_error"],
                       max_error=baseline["max_error"],
                       mean_error_normalized=baseline["mean_error_normalized"],
                       delta_vs_baseline=0.0, nfe_used=baseline["nfe_used"],
                       final_train_loss="", final_val_loss="", r="")
            return row
        dataset = _dataset_for(cfg, schedule, model, cache_dir)
        train_cfg = dataclasses.replace(cfg.train, seed=cfg.seed)
        if mode == "s4s":
            result = train_s4s(dataset, coeffs, grid, schedule, model, train_cfg)
        else:
            params = LearnableTimeParams.from_grid(grid, schedule, cfg.grid.clip_fraction)
            trainer = {"s4s-alt": train_s4s_alt, "joint": train_joint,
                       "schedule-only": train_schedule_only}[mode]
            result = trainer(dataset, coeffs, params, schedule, model, train_cfg)
        if result.status != "ok":
            row.update(status=result.status, message="training diverged")
        metrics = evaluate(result.coeffs, schedule, model, teacher, grid=result.grid,
                           n_eval=200, seed=eval_seed, h_mode=cfg.train.h_mode)
        row.update(mean_error=metrics["mean_error"], median_error=metrics["median_error"],
                   max_error=metrics["max_error"],
                   mean_error_normalized=metrics["mean_error_normalized"],
                   delta_vs_baseline=metrics["mean_error"] - baseline["mean_error"],
                   final_train_loss=result.final_train_loss,
                   final_val_loss=result.final_val_loss, r=result.r,
                   nfe_used=metrics["nfe_used"])
    except Exception as exc:  # cell isolation: failures become rows
        row.update(status="failed", message=f"{type(exc).__name__}: {exc}")
    finally:
        row["wall_time_s"] = round(time.perf_counter() - started, 3)
    return row


@dataclasses.dataclass
class SweepSpec:
    base: ExperimentConfig
    schedules: list
    solvers: list
    nfe_list: list
    modes: list


def sweep_cells(spec: SweepSpec):
    cells = []
    for sched in spec.schedules:
        for solver in spec.solvers:
            for nfe in spec.nfe_list:
                for mode in spec.modes:
                    cfg = dataclasses.replace(spec.base, schedule=sched, solver=solver)
                    key = f"{sched.kind}_{solver.kind}-{solver.order}-{solver.preset}_{nfe}_{mode}"
                    cells.append((key, cfg, nfe, mode))
    return cells


def _run_cell_job(args):
    key, cfg, nfe, mode, cache_dir = args
    return key, run_cell(cfg, nfe, mode, cache_dir=cache_dir)


def run_sweep(spec: SweepSpec, out_dir, workers: int | None = None,
              progress=None) -> ResultTable:
    """Resumable cross-product sweep; one JSON file per cell under out_dir/cells."""
    out = Path(out_dir)
    cell_dir = out / "cells"
    cell_dir.mkdir(parents=True, exist_ok=True)
    cache_dir = out / "datasets"
    if workers is None:
        workers = int(os.environ.get("FEWSTEP_WORKERS", "1"))

    table = ResultTable()
    pending = []
    for key, cfg, nfe, mode in sweep_cells(spec):
        path = cell_dir / f"{key}.json"
        if path.exists():
            with open(path) as fh:
                table.add(json.load(fh))
            if progress:
                progress(f"skip {key} (done)")
        else:
            pending.append((key, cfg, nfe, mode, str(cache_dir)))

    def record(key, row):
        with open(cell_dir / f"{key}.json", "w") as fh:
            json.dump(row, fh, indent=2, sort_keys=True)
        table.add(row)
        if progress:
            progress(f"done {key}: {row['status']}")

    if workers > 1 and pending:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for key, row in pool.map(_run_cell_job, pending):
                record(key, row)
    else:
        for job in pending:
            key, row = _run_cell_job(job)
            record(key, row)

    table.write_csv(out / "results.csv")
    return table
