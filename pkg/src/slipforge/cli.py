"""Command-line interface: ``slipforge <subcommand> ...``.

Exit status is 0 on success, 2 for bad arguments, configs or input files,
and 3 when a simulation or episode left the model domain.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from slipforge.config import ExperimentConfig, load_config, load_course
from slipforge.csvio import read_table, write_rows
from slipforge.errors import ConfigError, ModelDomainError, SlipforgeError
from slipforge.estimator import Y_NAMES, Sample, SampleSet, update
from slipforge.model import INPUT_NAMES, STATE_NAMES, free_rolling_rates
from slipforge.sim import jacobian, step_interval
from slipforge.trials import (
    ReferenceTrajectory,
    generate_reference,
    initial_state,
    run_episode,
)

log = logging.getLogger("slipforge")

BODY_COLUMNS = ("x", "y", "psi", "xdot", "ydot", "psidot")
REF_COLUMNS = ("t",) + BODY_COLUMNS
TRANSITION_COLUMNS = ("t",) + STATE_NAMES + INPUT_NAMES
SAMPLE_COLUMNS = ("trial",) + TRANSITION_COLUMNS + Y_NAMES
EPISODE_COLUMNS = (("t",) + STATE_NAMES + ("x_ref", "y_ref") + INPUT_NAMES
                   + ("f_fx_b", "f_rx_b", "f_fy_b", "f_ry_b", "mpc_cost", "mpc_iters",
                      "mpc_pg_norm", "eq_residual", "front_saturated", "rear_fallback",
                      "steer_fallback", "clamped"))
METRICS_COLUMNS = ("trial", "mse", "B", "C", "D")
SUMMARY_COLUMNS = ("trial", "mse", "best_mse", "B_used", "C_used", "D_used", "B", "C", "D",
                   "samples", "aborted", "fit_iterations", "fit_loss")
STIFFNESS_COLUMNS = ("index", "lambda_max_abs", "lambda_min_abs", "ratio")


class _Failure(Exception):
    """Runtime failure after partial output was written."""


def _reference_rows(ref: ReferenceTrajectory):
    for t, q in zip(ref.times, ref.states):
        yield [t, *q]


def cmd_gen_ref(args) -> None:
    course = load_course(args.course)
    ref = generate_reference(course, args.dt)
    write_rows(args.out, REF_COLUMNS, _reference_rows(ref))
    print(f"wrote {len(ref)} reference states to {args.out}")


def _default_start(cfg: ExperimentConfig) -> np.ndarray:
    if cfg.initial_state is not None:
        return cfg.initial_state.copy()
    ref = generate_reference(cfg.course, cfg.task.sim.dt)
    return initial_state(ref, cfg.vehicle)


def cmd_simulate(args) -> None:
    cfg = load_config(args.config)
    table = read_table(args.inputs, required=INPUT_NAMES)
    U = np.column_stack([table[n] for n in INPUT_NAMES])
    sim = cfg.task.sim
    X = _default_start(cfg)
    rows = []
    error = None
    for k, u in enumerate(U):
        rows.append([k * sim.dt, *X, *u])
        try:
            X = step_interval(X, u, sim, cfg.vehicle, cfg.tyre_true)
        except ModelDomainError as exc:
            error = f"interval {k}: {exc}"
            break
    else:
        rows.append([len(U) * sim.dt, *X, "", "", ""])
    write_rows(args.out, TRANSITION_COLUMNS, rows)
    if error:
        raise _Failure(f"simulation stopped at {error}; partial trajectory in {args.out}")
    print(f"wrote {len(rows)} states to {args.out}")


def _sample_rows(trial: int, ep, dt: float):
    for k, s in enumerate(ep.samples):
        yield [trial, (k + 0.5) * dt, *s.state, *s.input, *s.observed_y]


def cmd_track(args) -> None:
    cfg = load_config(args.config)
    n_trials = args.trials if args.trials is not None else cfg.trials
    if n_trials < 1:
        raise ConfigError("--trials must be at least 1")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    task = cfg.task
    dt = task.sim.dt
    ref = generate_reference(cfg.course, dt)
    write_rows(out / "ref.csv", REF_COLUMNS, _reference_rows(ref))
    rng = np.random.default_rng(task.seed)
    data = SampleSet(task.estimator.capacity)
    theta_hat = cfg.tyre_prior
    theta_true = cfg.tyre_true
    metrics, summary, all_samples = [], [], []
    best = np.inf
    width = len(str(n_trials))
    for k in range(1, n_trials + 1):
        theta_true = cfg.road_changes.get(k, theta_true)
        ep = run_episode(ref, theta_hat, task, cfg.vehicle, theta_true, rng)
        write_rows(out / f"traj_{k:0{width}d}.csv", EPISODE_COLUMNS, ep.rows)
        all_samples.extend(_sample_rows(k, ep, dt))
        data.extend(ep.samples)
        used = theta_hat
        fit = None
        if len(data):
            theta_hat, fit = update(theta_hat, data.copy(), task.estimator, cfg.vehicle)
        best = min(best, ep.mse)
        metrics.append([k, ep.mse, theta_hat.B, theta_hat.C, theta_hat.D])
        summary.append([k, ep.mse, best, used.B, used.C, used.D, theta_hat.B, theta_hat.C,
                        theta_hat.D, len(ep.samples), int(ep.aborted),
                        fit.iterations if fit else 0, fit.final_loss if fit else float("nan")])
        flag = f"  aborted: {ep.error}" if ep.aborted else ""
        print(f"trial {k:>{width}d}  mse {ep.mse:10.6f}  B {theta_hat.B:7.4f}  "
              f"C {theta_hat.C:6.4f}  D {theta_hat.D:6.4f}{flag}", flush=True)
    write_rows(out / "metrics.csv", METRICS_COLUMNS, metrics)
    write_rows(out / "summary.csv", SUMMARY_COLUMNS, summary)
    write_rows(out / "samples.csv", SAMPLE_COLUMNS, all_samples)
    first, last = metrics[0][1], metrics[-1][1]
    ratio = last / first if first > 0 else float("nan")
    print(f"mse trial 1 {first:.6g}, trial {n_trials} {last:.6g} ({ratio:.3g} of trial 1); "
          f"outputs in {out}")


def samples_from_table(table: dict, dt_default: float | None = None) -> SampleSet:
    """Samples from a transitions table.

    Observed accelerations come from the ``xddot ... omegadot_r`` columns when
    present, otherwise from forward differences of consecutive rows paired
    with the earlier row.
    """
    X = np.column_stack([table[n] for n in STATE_NAMES])
    U = np.column_stack([table[n] for n in INPUT_NAMES])
    if all(n in table for n in Y_NAMES):
        Y = np.column_stack([table[n] for n in Y_NAMES])
        keep = np.all(np.isfinite(U), axis=1)
        return SampleSet.from_arrays(X[keep], U[keep], Y[keep], capacity=max(1, len(X)))
    if len(X) < 2:
        raise ConfigError("forward differencing needs at least two rows")
    if "t" in table:
        dts = np.diff(table["t"])
    elif dt_default is not None:
        dts = np.full(len(X) - 1, dt_default)
    else:
        raise ConfigError("transitions need a t column")
    if np.any(dts <= 0):
        raise ConfigError("transition times must be strictly increasing")
    Y = (X[1:, 3:8] - X[:-1, 3:8]) / dts[:, None]
    keep = np.all(np.isfinite(U[:-1]), axis=1)
    return SampleSet.from_arrays(X[:-1][keep], U[:-1][keep], Y[keep], capacity=max(1, len(X)))


def cmd_estimate(args) -> None:
    cfg = load_config(args.config)
    table = read_table(args.data, required=("t",) + STATE_NAMES + INPUT_NAMES)
    data = samples_from_table(table, cfg.task.sim.dt)
    theta, rep = update(cfg.tyre_prior, data, cfg.task.estimator, cfg.vehicle)
    print(f"B = {theta.B:.17g}")
    print(f"C = {theta.C:.17g}")
    print(f"D = {theta.D:.17g}")
    print(f"samples {rep.n_samples} (skipped {rep.n_skipped}), iterations {rep.iterations}, "
          f"loss {rep.initial_loss:.6g} -> {rep.final_loss:.6g}, "
          f"gradient norm {rep.grad_norm:.3g}, converged {rep.converged}")


def probe_states(table: dict, cfg: ExperimentConfig):
    """Full states and inputs at which to evaluate the stiffness Jacobian.

    Trajectory files carry wheel rates and inputs and are used as they are.
    A bare reference gets free-rolling wheels, zero steering and zero torque.
    """
    body = np.column_stack([table[n] for n in BODY_COLUMNS])
    n = len(body)
    if all(c in table for c in ("omega_f", "omega_r")):
        X = np.column_stack([body, table["omega_f"], table["omega_r"]])
    else:
        X = np.column_stack([body, np.zeros(n), np.zeros(n)])
        for i in range(n):
            X[i, 6], X[i, 7] = free_rolling_rates(X[i], 0.0, cfg.vehicle)
    if all(c in table for c in INPUT_NAMES):
        U = np.column_stack([table[c] for c in INPUT_NAMES])
        U = np.where(np.isfinite(U), U, 0.0)
    else:
        U = np.zeros((n, 3))
    return X, U


def cmd_stiffness(args) -> None:
    cfg = load_config(args.config)
    table = read_table(args.ref, required=BODY_COLUMNS)
    X, U = probe_states(table, cfg)
    rows = []
    for i, (x, u) in enumerate(zip(X, U)):
        rep = jacobian(x, u, cfg.vehicle, cfg.tyre_true)
        rows.append([i, rep.lambda_max_abs, rep.lambda_min_abs, rep.ratio])
    write_rows(args.out, STIFFNESS_COLUMNS, rows)
    ratios = np.array([r[3] for r in rows])
    print(f"wrote {len(rows)} reports to {args.out}; ratio min {ratios.min():.4g}, "
          f"median {np.median(ratios):.4g}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="slipforge", description=__doc__.splitlines()[0])
    p.add_argument("--log-level", default="WARNING", help="logging level (default WARNING)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-ref", help="sample a course into a reference CSV")
    s.add_argument("--course", required=True, help="TOML file with a [course] table")
    s.add_argument("--dt", type=float, default=0.1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_ref)

    s = sub.add_parser("simulate", help="open-loop simulation of an input sequence")
    s.add_argument("--config", required=True)
    s.add_argument("--inputs", required=True, help="CSV with delta,T_f,T_r per interval")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("track", help="run the learning trials on the configured course")
    s.add_argument("--config", required=True)
    s.add_argument("--trials", type=int, default=None, help="overrides task.trials")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_track)

    s = sub.add_parser("estimate", help="fit tyre parameters to logged transitions")
    s.add_argument("--data", required=True)
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("stiffness", help="Jacobian eigenvalue spread along a trajectory")
    s.add_argument("--config", required=True)
    s.add_argument("--ref", required=True, help="reference or trajectory CSV")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_stiffness)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ConfigError, OSError, ValueError) as exc:
        if isinstance(exc, ModelDomainError):
            print(f"error: {exc}", file=sys.stderr)
            return 3
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (_Failure, SlipforgeError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
