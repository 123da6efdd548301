"""Command-line front end: check, run, and sweep model files.

``check`` solves/validates relations and certificates without simulating;
``run`` simulates the scenario and writes trajectory, bound-series, and
report artifacts; ``sweep`` reruns the scenario across one parameter and
tabulates the outcome.  Exit codes: 0 success/PASS, 1 validation failure,
2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from .certificate import gain_slopes, verify_all
from .errors import ModelError, ParseError, PwaHierError
from .modelfile import (
    Pipeline,
    build_pipeline,
    certificate_to_jsonable,
    load_model,
    resolve_model_path,
)
from .simulator import Scenario, Trajectory, export_trajectory, run_scenario

logger = logging.getLogger("pwa_hier")

#: Slack used by the PASS verdict on the per-sample bound chain.
CHAIN_TOL = 1e-6

_SWEEP_PARAMS = ("disturbance-amplitude", "kappa", "step")


def _setup_logging() -> None:
    level = {"error": logging.ERROR, "info": logging.INFO,
             "debug": logging.DEBUG}.get(os.environ.get("PWA_HIER_LOG", "error"))
    if level is None:
        level = logging.ERROR
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@dataclasses.dataclass
class RunReport:
    """Summary of one check or run; every number is recomputable from the
    emitted CSV artifacts."""

    name: str
    residuals: list
    pairing: Optional[list]
    lmi_margins: list
    lam: float
    kappa: float
    gain_slopes: list
    certified: bool
    max_err: Optional[float] = None
    max_V: Optional[float] = None
    max_delta: Optional[float] = None
    verdict: Optional[str] = None
    files: list = dataclasses.field(default_factory=list)
    seed: Optional[int] = None

    def to_jsonable(self) -> dict:
        return dataclasses.asdict(self)


def _report_from_pipeline(pipe: Pipeline) -> RunReport:
    reports = verify_all(pipe.certificate, pipe.joint)
    slopes = [list(gain_slopes(pipe.certificate, pipe.joint, idx)[:3])
              for idx in range(len(pipe.joint.modes))]
    return RunReport(
        name=pipe.config.name,
        residuals=[float(r) for r in pipe.relation.residuals],
        pairing=None if pipe.pairing is None else [j + 1 for j in pipe.pairing],
        lmi_margins=[list(r.margins) for r in reports],
        lam=pipe.certificate.lam,
        kappa=pipe.certificate.kappa,
        gain_slopes=slopes,
        certified=all(r.feasible for r in reports),
    )


def _attach_trajectory(report: RunReport, traj: Trajectory) -> None:
    report.max_err = float(np.max(traj.err))
    report.max_V = float(np.max(traj.V))
    report.max_delta = float(np.max(traj.delta))
    chain = (np.all(traj.err <= traj.kappa * traj.V + CHAIN_TOL)
             and np.all(traj.kappa * traj.V <= traj.delta + CHAIN_TOL))
    report.verdict = "PASS" if bool(chain) else "FAIL"


def _print_report(report: RunReport) -> None:
    print(f"model: {report.name}")
    print(f"relation residuals: {['%.3e' % r for r in report.residuals]}")
    if report.pairing is not None:
        pairs = ", ".join(f"{i + 1}->{j}" for i, j in enumerate(report.pairing))
        print(f"pairing: {pairs}")
    print(f"certificate: lambda = {report.lam:.6g}, kappa = {report.kappa:g}, "
          f"certified = {report.certified}")
    for idx, margins in enumerate(report.lmi_margins):
        print(f"  mode {idx + 1}: margins = "
              f"({margins[0]:.3e}, {margins[1]:.3e}, {margins[2]:.3e})")
    if report.max_err is not None:
        print(f"max ||e|| = {report.max_err:.6g}, max V = {report.max_V:.6g}, "
              f"max delta = {report.max_delta:.6g}")
    if report.verdict is not None:
        print(f"bound chain: {report.verdict}")


def _atomic_write(path: Path, payload: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(payload, encoding="utf-8")
    os.replace(tmp, path)


def _write_bounds_csv(traj: Trajectory, path: Path) -> None:
    lines = ["t,err,kV,delta"]
    kappa = traj.kappa
    for k in range(len(traj)):
        lines.append(",".join([
            repr(float(traj.t[k])), repr(float(traj.err[k])),
            repr(float(kappa * traj.V[k])), repr(float(traj.delta[k])),
        ]))
    _atomic_write(path, "\n".join(lines) + "\n")


def _write_plot_data(pipe: Pipeline, traj: Trajectory, plot_dir: Path) -> list:
    """Two-column (or paired-column) series, one file per plotted quantity."""
    plot_dir.mkdir(parents=True, exist_ok=True)
    k_dim = pipe.config.system.k
    y1 = np.empty((len(traj), k_dim))
    y2 = np.empty((len(traj), k_dim))
    for idx in np.unique(traj.mode_i):
        rows = traj.mode_i == idx
        y1[rows] = traj.x1[rows] @ pipe.config.system.modes[idx].C.T
    if pipe.pairing is not None:
        for jdx in np.unique(traj.mode_j):
            rows = traj.mode_j == jdx
            y2[rows] = traj.x2[rows] @ pipe.config.abstraction.modes[jdx].H.T
    else:
        y2[:] = traj.x2 @ pipe.config.abstraction.H.T
    series = {
        "err.dat": np.column_stack([traj.t, traj.err]),
        "sim_fn.dat": np.column_stack([traj.t, traj.kappa * traj.V]),
        "bound.dat": np.column_stack([traj.t, traj.delta]),
        "path_concrete.dat": y1,
        "path_abstraction.dat": y2,
    }
    written = []
    for fname, data in series.items():
        lines = [" ".join(repr(float(v)) for v in row) for row in data]
        _atomic_write(plot_dir / fname, "\n".join(lines) + "\n")
        written.append(str(plot_dir / fname))
    return written


def cmd_check(model_spec: str, save_certificate: Optional[str] = None) -> int:
    pipe = build_pipeline(load_model(resolve_model_path(model_spec)))
    report = _report_from_pipeline(pipe)
    _print_report(report)
    if save_certificate:
        payload = json.dumps(
            certificate_to_jsonable(pipe.certificate, pipe.joint), indent=2
        ) + "\n"
        _atomic_write(Path(save_certificate), payload)
        print(f"certificate written to {save_certificate}")
    return 0 if report.certified else 1


def cmd_run(model_spec: str, out_dir: str, plot_data: bool = False,
            t_end: Optional[float] = None, step: Optional[float] = None,
            seed: Optional[int] = None) -> int:
    pipe = build_pipeline(load_model(resolve_model_path(model_spec)))
    scenario = pipe.scenario
    if t_end is not None or step is not None:
        scenario = dataclasses.replace(
            scenario,
            t_end=t_end if t_end is not None else scenario.t_end,
            h=step if step is not None else scenario.h,
        )
    report = _report_from_pipeline(pipe)
    report.seed = seed
    traj = run_scenario(scenario)
    _attach_trajectory(report, traj)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    traj_path = out / "trajectory.csv"
    bounds_path = out / "bounds.csv"
    export_trajectory(traj, traj_path)
    _write_bounds_csv(traj, bounds_path)
    report.files = [str(traj_path), str(bounds_path)]
    if plot_data:
        report.files += _write_plot_data(pipe, traj, out / "plot")
    report_path = out / "report.json"
    _atomic_write(report_path, json.dumps(report.to_jsonable(), indent=2) + "\n")
    report.files.append(str(report_path))

    _print_report(report)
    for f in report.files:
        print(f"wrote {f}")
    if not report.certified:
        return 1
    return 0 if report.verdict == "PASS" else 2


def _sweep_scenario(pipe: Pipeline, param: str, value: float) -> Scenario:
    scenario = pipe.scenario
    if param == "disturbance-amplitude":
        return dataclasses.replace(
            scenario, disturbance=scenario.disturbance.scaled_to(value)
        )
    if param == "kappa":
        cert = dataclasses.replace(scenario.certificate, kappa=value)
        return dataclasses.replace(scenario, certificate=cert)
    if param == "step":
        return dataclasses.replace(scenario, h=value)
    raise ModelError(
        f"unknown sweep parameter {param!r} (choose from {_SWEEP_PARAMS})"
    )


def cmd_sweep(model_spec: str, param: str, values: list[float]) -> int:
    if param not in _SWEEP_PARAMS:
        raise ModelError(
            f"unknown sweep parameter {param!r} (choose from {_SWEEP_PARAMS})"
        )
    if not values:
        raise ModelError("sweep needs at least one value")
    pipe = build_pipeline(load_model(resolve_model_path(model_spec)))
    print(f"{'value':>12} {'max ||e||':>14} {'max V':>14} verdict")
    all_pass = True
    for value in values:
        traj = run_scenario(_sweep_scenario(pipe, param, value))
        kappa = traj.kappa
        chain = (np.all(traj.err <= kappa * traj.V + CHAIN_TOL)
                 and np.all(kappa * traj.V <= traj.delta + CHAIN_TOL))
        verdict = "PASS" if bool(chain) else "FAIL"
        all_pass = all_pass and bool(chain)
        print(f"{value:>12.6g} {float(np.max(traj.err)):>14.6g} "
              f"{float(np.max(traj.V)):>14.6g} {verdict}")
    return 0 if all_pass else 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pwa-hier",
        description="Certified hierarchical tracking control of "
                    "piecewise-affine systems.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_check = sub.add_parser("check", help="solve relations and verify certificates")
    p_check.add_argument("model", help="model file path or builtin name (case1, case2)")
    p_check.add_argument("--save-certificate", metavar="PATH",
                         help="write the certificate as a reusable JSON fragment")

    p_run = sub.add_parser("run", help="simulate the scenario and write artifacts")
    p_run.add_argument("model")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--plot-data", action="store_true",
                       help="also emit two-column series under <out>/plot/")
    p_run.add_argument("--t-end", type=float, default=None)
    p_run.add_argument("--step", type=float, default=None)
    p_run.add_argument("--seed", type=int, default=None,
                       help="recorded in the report; runs are deterministic")

    p_sweep = sub.add_parser("sweep", help="rerun the scenario across one parameter")
    p_sweep.add_argument("model")
    p_sweep.add_argument("--param", required=True, choices=_SWEEP_PARAMS)
    p_sweep.add_argument("--values", required=True,
                         help="comma-separated list, e.g. 0,0.05,0.1")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        if args.command == "check":
            return cmd_check(args.model, save_certificate=args.save_certificate)
        if args.command == "run":
            return cmd_run(args.model, args.out, plot_data=args.plot_data,
                           t_end=args.t_end, step=args.step, seed=args.seed)
        if args.command == "sweep":
            values = [float(v) for v in args.values.split(",") if v != ""]
            return cmd_sweep(args.model, args.param, values)
        raise AssertionError(f"unhandled command {args.command}")
    except (ParseError, ModelError) as exc:
        logger.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except PwaHierError as exc:
        validation = isinstance(exc, ValueError)
        logger.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 1 if validation else 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
