"""Command-line entry points: dataset generation, training, evaluation, sweeps,
gradient checking, and a quick invariant self-test.

Every command takes a JSON config (see configs.py); all randomness flows from
its seed, so reruns reproduce outputs bit for bit.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import sys
from pathlib import Path

import click
import numpy as np

from .backprop import check_gradients
from .checkpoints import load_checkpoint, save_checkpoint
from .coeffs import SolverCoefficients, init_preset, table_param_count
from .configs import (ExperimentConfig, build_model, build_schedule, build_teacher,
                      config_from_dict, config_hash, load_config)
from .errors import CompatibilityError, ConfigError
from .experiments import MODES, ResultTable, SweepSpec, run_cell, run_sweep
from .grids import LearnableTimeParams, heuristic_grid, materialize
from .schedules import phi_functions
from .scores import default_mixture
from .solvers import solve
from .teachers import dataset_checksum, generate_dataset, load_dataset, save_dataset
from .training import (TrainConfig, evaluate, train_joint, train_s4s,
                       train_s4s_alt, train_schedule_only)


@click.group()
def main():
    """Few-step diffusion ODE solvers with learned coefficients and time steps."""


def _load(config_path) -> ExperimentConfig:
    try:
        return load_config(config_path)
    except ConfigError as exc:
        raise click.ClickException(str(exc)) from exc


@main.command("generate-teacher")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--seed", type=int, default=None, help="Override the config seed.")
def cli_generate_teacher(config_path, out_path, seed):
    """Generate the teacher dataset described by the config."""
    cfg = _load(config_path)
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    count = cfg.dataset.n_train + cfg.dataset.n_val
    if count < 1:
        raise click.ClickException("dataset.n_train + dataset.n_val must be >= 1")
    schedule = build_schedule(cfg.schedule)
    model = build_model(cfg.model)
    teacher = build_teacher(cfg.teacher)
    dataset = generate_dataset(teacher, schedule, model, count, cfg.seed,
                               val_fraction=cfg.dataset.n_val / count)
    save_dataset(dataset, out_path)
    click.echo(f"records: {count} (train {dataset.n_train} / val {dataset.n_val})")
    click.echo(f"dim: {dataset.dim}  teacher: {dataset.teacher_kind}")
    click.echo(f"checksum: {dataset_checksum(dataset)}")


@main.command("train")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--mode", type=click.Choice(["s4s", "s4s-alt", "joint", "schedule-only"]),
              default="s4s")
@click.option("--nfe", type=int, default=None, help="Step count; default: first nfe_list entry.")
@click.option("--out", "out_dir", required=True, type=click.Path())
def cli_train(config_path, dataset_path, mode, nfe, out_dir):
    """Train a solver on an existing dataset; writes checkpoint + history CSV."""
    cfg = _load(config_path)
    nfe = nfe or cfg.nfe_list[0]
    if cfg.solver.order > nfe:
        raise click.ClickException(
            f"solver order {cfg.solver.order} exceeds step count {nfe}")
    schedule = build_schedule(cfg.schedule)
    model = build_model(cfg.model)
    dataset = load_dataset(dataset_path)
    if dataset.dim != model.dim:
        raise click.ClickException(
            f"dataset dim {dataset.dim} does not match model dim {model.dim}")
    grid = heuristic_grid(schedule, nfe, cfg.grid.kind, rho=cfg.grid.rho)
    coeffs = init_preset(cfg.solver.kind, cfg.solver.order, nfe, cfg.solver.preset,
                         schedule=schedule, grid=grid, prediction=cfg.solver.prediction,
                         seed=cfg.seed, tied=cfg.solver.tied)
    train_cfg = dataclasses.replace(cfg.train, seed=cfg.seed)
    if mode == "s4s":
        result = train_s4s(dataset, coeffs, grid, schedule, model, train_cfg)
    else:
        params = LearnableTimeParams.from_grid(grid, schedule, cfg.grid.clip_fraction)
        trainer = {"s4s-alt": train_s4s_alt, "joint": train_joint,
                   "schedule-only": train_schedule_only}[mode]
        result = trainer(dataset, coeffs, params, schedule, model, train_cfg)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    snapshot = np.stack([rec.x_prime for rec in dataset.records])
    save_checkpoint(out / "checkpoint.fsc", result.coeffs, config_hash(cfg),
                    params=result.params, x_prime_snapshot=snapshot,
                    extra={"mode": mode, "nfe": nfe, "status": result.status})
    with open(out / "history.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["iteration", "phase", "train_loss",
                                                "val_loss", "r"])
        writer.writeheader()
        writer.writerows(result.history)
    click.echo(f"status: {result.status}  r: {result.r:.6g}  "
               f"final train loss: {result.final_train_loss:.6g}")
    if result.status != "ok":
        sys.exit(1)


@main.command("evaluate")
@click.option("--checkpoint", "ckpt_path", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--force", is_flag=True, help="Evaluate despite a config-hash mismatch.")
@click.option("--seed", type=int, default=None)
def cli_evaluate(ckpt_path, config_path, out_path, force, seed):
    """Evaluate a checkpoint on fresh noise; writes a result-table CSV."""
    cfg = _load(config_path)
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    try:
        coeffs, params, _, header = load_checkpoint(ckpt_path, config_hash(cfg), force)
    except CompatibilityError as exc:
        raise click.ClickException(str(exc)) from exc
    schedule = build_schedule(cfg.schedule)
    model = build_model(cfg.model)
    snap_shape = header.get("x_prime_shape")
    if snap_shape and snap_shape[-1] != model.dim:
        raise click.ClickException(
            f"checkpoint was trained at dim {snap_shape[-1]} but the config "
            f"model has dim {model.dim}")
    teacher = build_teacher(cfg.teacher)
    table = ResultTable()
    for nfe in cfg.nfe_list:
        row = {"schedule": cfg.schedule.kind, "solver": coeffs.kind,
               "order": coeffs.order, "preset": cfg.solver.preset,
               "prediction": coeffs.prediction, "mode": header["extra"].get("mode", ""),
               "nfe": nfe, "seed": cfg.seed, "message": "", "status": "ok"}
        if coeffs.order > nfe or coeffs.n_steps != nfe:
            row.update(status="infeasible",
                       message="checkpoint step count does not cover this NFE"
                       if coeffs.n_steps != nfe else "order exceeds step count")
            table.add(row)
            continue
        grid = (materialize(params, schedule) if params is not None
                else heuristic_grid(schedule, nfe, cfg.grid.kind, rho=cfg.grid.rho))
        metrics = evaluate(coeffs, schedule, model, teacher, grid=grid,
                           n_eval=200, seed=cfg.seed, h_mode=cfg.train.h_mode)
        row.update(mean_error=metrics["mean_error"], median_error=metrics["median_error"],
                   max_error=metrics["max_error"],
                   mean_error_normalized=metrics["mean_error_normalized"],
                   nfe_used=metrics["nfe_used"])
        table.add(row)
    table.write_csv(out_path)
    click.echo(table.formatted())


@main.command("sweep")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--workers", type=int, default=None,
              help="Worker processes; default env FEWSTEP_WORKERS or 1.")
def cli_sweep(config_path, out_dir, workers):
    """Run the cross-product sweep described by a sweep config document."""
    from .configs import ScheduleSpec, SolverSpec, _parse_section

    with open(config_path) as fh:
        doc = json.load(fh)
    for key in doc:
        if key not in ("version", "base", "schedules", "solvers", "nfe_list", "modes"):
            raise click.ClickException(f"unknown key {key}")
    base = config_from_dict(doc.get("base", {}))
    spec = SweepSpec(
        base=base,
        schedules=[_parse_section(ScheduleSpec, s, "schedules") for s in doc["schedules"]],
        solvers=[_parse_section(SolverSpec, s, "solvers") for s in doc["solvers"]],
        nfe_list=list(doc.get("nfe_list", base.nfe_list)),
        modes=list(doc.get("modes", ["baseline", "s4s"])),
    )
    for mode in spec.modes:
        if mode not in MODES:
            raise click.ClickException(f"unknown mode {mode!r}")
    table = run_sweep(spec, out_dir, workers=workers, progress=click.echo)
    click.echo(table.formatted())
    failures = [r for r in table.ordered() if r["status"] == "failed"]
    if failures:
        click.echo(f"{len(failures)} cell(s) failed", err=True)
        sys.exit(1)


@main.command("check-grad")
@click.option("--instances", type=int, default=20)
@click.option("--tolerance", type=float, default=1e-4)
@click.option("--seed", type=int, default=0)
def cli_check_grad(instances, tolerance, seed):
    """Finite-difference audit of the reverse-mode pass (the adjoint suite)."""
    from .schedules import VeSchedule

    schedule = VeSchedule()
    model = default_mixture(2)
    rng = np.random.default_rng(seed)
    worst = {"coefficients": 0.0, "initial_state": 0.0, "xi": 0.0, "xi_c": 0.0}
    for _ in range(instances):
        grid = heuristic_grid(schedule, 4, "logsnr")
        params = LearnableTimeParams.from_grid(grid, schedule)
        params.xi += 0.1 * rng.standard_normal(params.xi.shape)
        delta = 0.5 * np.min(-np.diff(materialize(params, schedule).steps))
        params.xi_c += 0.2 * delta * rng.standard_normal(params.xi_c.shape)
        coeffs = init_preset("lms", 2, 4, "gaussian", seed=int(rng.integers(2**31)))
        x0 = schedule.tilde_sigma * rng.standard_normal(2)
        target = rng.standard_normal(2)
        report = check_gradients(coeffs, schedule, model, x0, target, params=params)
        for block, dev in report["blocks"].items():
            worst[block] = max(worst[block], dev)
    status = 0
    for block, dev in worst.items():
        ok = dev <= tolerance
        click.echo(f"{block:<14} max relative deviation {dev:.3e}  "
                   f"{'PASS' if ok else 'FAIL'}")
        status |= 0 if ok else 1
    sys.exit(status)


@main.command("selftest")
def cli_selftest():
    """Quick invariant bundle: transforms, counts, accounting, grids."""
    from .schedules import VeSchedule, VpLinearSchedule
    from .scores import CountingScoreModel

    failures = 0

    def check(name, ok):
        nonlocal failures
        click.echo(f"{'PASS' if ok else 'FAIL'}  {name}")
        failures += 0 if ok else 1

    vp = VpLinearSchedule()
    ts = np.linspace(vp.t_min, vp.T, 200)
    rt = max(abs(vp.time_from_lambda(float(vp.lam(t))) - t) for t in ts)
    check("lambda round trip <= 1e-10", rt <= 1e-10)

    lo = phi_functions(1e-4 - 1e-12, 4).values
    hi = phi_functions(1e-4 + 1e-12, 4).values
    check("phi series/closed-form crossover", np.allclose(lo, hi, atol=1e-10))

    counts_ok = all(
        SolverCoefficients(kind, min(k, n), n).param_count()
        == table_param_count(kind, min(k, n), n)
        for kind in ("lms", "ss", "pc") for k in (1, 2, 3, 4) for n in range(k, 11)
    )
    check("parameter-count formulas", counts_ok)

    ve = VeSchedule()
    model = CountingScoreModel(default_mixture(2))
    grid = heuristic_grid(ve, 6, "logsnr")
    x0 = np.array([1.0, -0.5])
    good = True
    for kind, preset, expected in (("lms", "ipndm", 6), ("pc", "unipc", 7),
                                   ("ss", "dpmpp", 12)):
        model.reset()
        order = 2
        coeffs = init_preset(kind, order, 6, preset, schedule=ve, grid=grid)
        trace = solve(coeffs, ve, grid, model, x0)
        good &= trace.nfe_used == expected == model.n_epsilon
    check("NFE accounting (lms/pc/ss)", good)

    params = LearnableTimeParams.zeros(8)
    grid = materialize(params, ve)
    uniform = np.linspace(ve.T, ve.t_min, 9)
    check("zero logits -> uniform grid", np.allclose(grid.steps, uniform, atol=1e-12))

    lams = heuristic_grid(ve, 12, "logsnr").lambdas(ve)
    check("logsnr grid uniform in lambda", np.max(np.abs(np.diff(lams, 2))) <= 1e-8)

    sys.exit(1 if failures else 0)


if __name__ == "__main__":
    main()
