"""Batch command-line front end.

Subcommands ``solve``, ``sweep``, ``fieldmap`` and ``oracle`` read JSON
inputs and write JSON/CSV outputs. Exit codes: 0 ok, 1 usage or I/O,
2 infeasible, 3 not tight (or no certified optimum), 4 invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .circuit import ImpedanceMatrix, assemble_impedance_matrix, impedance_from_dict
from .errors import (
    Infeasible,
    NotTightWarning,
    SolverNumericalFailure,
    TooManyDimensions,
    VerificationFailed,
    WPTError,
)
from .fields import PlaneSpec, fieldmap_grid, fmt, write_field_csv
from .geometry import Scenario, scenario_from_dict
from .oracle import oracle_passive_search
from .sdr import SolverStatus
from .synthesis import (
    OperatingPoint,
    closed_form_load,
    optimize_load_resistance,
    solve_operating_point,
)

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_NOT_TIGHT, EXIT_INVARIANT = 0, 1, 2, 3, 4
ORACLE_SLACK = 1e-6

SWEEP_COLUMNS = ["param_value", "eta", "eta_upper_if_not_tight", "epsilon", "r_l",
                 "solve_ms", "status"]

# sweep parameter -> shorthand key(s) per scenario type
SWEEP_KEYS = {
    "relay_count": {"arc_relay": ("n_relays",), "coaxial_stack": ("n_passive",)},
    "distance": {"arc_relay": ("arc_radius",), "coaxial_stack": ("tx_receiver_separation",),
                 "metasurface": ("tx_rx_distance",)},
    "grid_size": {"metasurface": ("nx", "ny")},
    "angle": {"arc_relay": ("arc_angle",), "coaxial_stack": ("receiver_angle",)},
    "load_resistance": None,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Bad usage exits with 1; argparse's default 2 means 'infeasible' here."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fail(msg: str, code: int) -> int:
    print(f"wptopt: {msg}", file=sys.stderr)
    return code


def _read_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path} is not valid JSON: {exc}") from None


def load_system(path) -> tuple[Scenario | None, ImpedanceMatrix]:
    """A scenario document, or an impedance-matrix document (key ``z``)."""
    data = _read_json(path)
    if "z" in data:
        return None, impedance_from_dict(data)
    s = scenario_from_dict(data)
    return s, assemble_impedance_matrix(s)


def _timestamp() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _solve(Z: ImpedanceMatrix, r_l, optimize_rl: bool, tol) -> OperatingPoint:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NotTightWarning)
        if optimize_rl:
            return optimize_load_resistance(Z, tol=tol).op
        R_L = closed_form_load(Z).R_L_a if r_l is None else r_l
        return solve_operating_point(Z, R_L, tol=tol)


# ---------------------------------------------------------------------------
# solve


def cmd_solve(args) -> int:
    _, Z = load_system(args.scenario)
    try:
        op = _solve(Z, args.rl, args.optimize_rl, args.solver_tol)
    except Infeasible as exc:
        return _fail(f"infeasible: {exc}", EXIT_INFEASIBLE)
    except SolverNumericalFailure as exc:
        return _fail(f"solver failed: {exc}", EXIT_NOT_TIGHT)
    except VerificationFailed as exc:
        return _fail(f"verification failed: {exc}", EXIT_INVARIANT)
    if args.out:
        Path(args.out).write_text(json.dumps(op.to_dict(), indent=2))
    print(f"eta={op.eta:.10g} epsilon={op.epsilon:.3e} r_l={op.R_L:.10g} "
          f"status={op.solver_status.value}")
    if op.solver_status is SolverStatus.NOT_TIGHT:
        return _fail("relaxation is not tight; eta is an upper bound", EXIT_NOT_TIGHT)
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep


def sweep_values(spec: dict) -> list:
    values = spec.get("values")
    if isinstance(values, dict):
        start, stop = float(values["start"]), float(values["stop"])
        steps = int(values["steps"])
        if steps < 1:
            raise UsageError("sweep needs at least one step")
        if values.get("spacing", "linear") == "log":
            values = list(np.geomspace(start, stop, steps))
        else:
            values = list(np.linspace(start, stop, steps))
    if not values:
        raise UsageError("sweep values are empty")
    return list(values)


def sweep_point_scenario(base: dict, parameter: str, value):
    kind = base.get("type")
    keys = SWEEP_KEYS[parameter]
    if keys is None:
        return scenario_from_dict(base)
    if kind not in keys:
        raise UsageError(f"parameter {parameter!r} does not apply to {kind!r} scenarios")
    data = dict(base)
    for key in keys[kind]:
        data[key] = int(round(value)) if key in ("n_relays", "n_passive", "nx", "ny") else value
    return scenario_from_dict(data)


def run_sweep_point(task) -> dict:
    """Solve one sweep point; failures become a status string."""
    base, parameter, value, r_l, optimize_rl, tol, timed = task
    row = {"param_value": value, "eta": None, "eta_upper_if_not_tight": None,
           "epsilon": None, "r_l": None, "solve_ms": None}
    t0 = time.perf_counter()
    try:
        s = sweep_point_scenario(base, parameter, value)
        Z = assemble_impedance_matrix(s)
        if parameter == "load_resistance":
            op = _solve(Z, float(value), False, tol)
        else:
            op = _solve(Z, r_l, optimize_rl, tol)
        if op.solver_status is SolverStatus.NOT_TIGHT:
            row["eta_upper_if_not_tight"] = op.eta_relax
        else:
            row["eta"] = op.eta
        row.update(epsilon=op.epsilon, r_l=op.R_L, status=op.solver_status.value)
    except Infeasible:
        row["status"] = "infeasible"
    except (WPTError, UsageError, ValueError) as exc:
        row["status"] = f"error:{type(exc).__name__}"
    if timed:
        row["solve_ms"] = 1e3 * (time.perf_counter() - t0)
    return row


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    return fmt(v)


def cmd_sweep(args) -> int:
    spec = _read_json(args.sweep)
    try:
        parameter = spec["parameter"]
        base = spec["base_scenario"]
    except KeyError as exc:
        raise UsageError(f"sweep file lacks {exc}") from None
    if parameter not in SWEEP_KEYS:
        raise UsageError(f"unknown sweep parameter {parameter!r}")
    keys = SWEEP_KEYS[parameter]
    if keys is not None and base.get("type") not in keys:
        raise UsageError(f"parameter {parameter!r} does not apply to {base.get('type')!r} "
                         "scenarios")
    values = sweep_values(spec)
    tasks = [(base, parameter, v, spec.get("r_l"), bool(spec.get("optimize_rl", False)),
              args.solver_tol, not args.no_timestamp) for v in values]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(run_sweep_point, tasks))
    else:
        rows = [run_sweep_point(t) for t in tasks]
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        if not args.no_timestamp:
            out.write(f"# generated {_timestamp()}\n")
        w = csv.writer(out, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for row in rows:
            w.writerow([_cell(row[c]) for c in SWEEP_COLUMNS])
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


# ---------------------------------------------------------------------------
# fieldmap


def _vector(text: str) -> tuple:
    try:
        parts = tuple(float(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected x,y,z, got {text!r}") from None
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected three components, got {text!r}")
    return parts


def cmd_fieldmap(args) -> int:
    s, _ = load_system(args.scenario)
    if s is None:
        raise UsageError("field maps need a geometric scenario, not an impedance matrix")
    op = OperatingPoint.from_dict(_read_json(args.result))
    if op.n_nodes != s.n_nodes:
        raise UsageError(f"result has {op.n_nodes} currents, scenario has {s.n_nodes} loops")
    try:
        plane = PlaneSpec(args.origin, args.u_axis, args.v_axis, args.nu, args.nv, args.spacing)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    grid = fieldmap_grid(s, op, plane, n_segments=args.segments)
    write_field_csv(grid, args.out, None if args.no_timestamp else _timestamp())
    return EXIT_OK


# ---------------------------------------------------------------------------
# oracle


def cmd_oracle(args) -> int:
    _, Z = load_system(args.scenario)
    R_L = closed_form_load(Z).R_L_a if args.rl is None else args.rl
    try:
        orc = oracle_passive_search(Z, R_L, resolution=args.resolution, mode=args.mode,
                                    seed=args.seed)
        op = _solve(Z, R_L, False, args.solver_tol)
    except TooManyDimensions as exc:
        return _fail(str(exc), EXIT_USAGE)
    except Infeasible as exc:
        return _fail(f"infeasible: {exc}", EXIT_INFEASIBLE)
    gap = (orc.eta_best - op.eta_relax) / op.eta_relax
    print(f"oracle_eta={orc.eta_best:.12g} sdr_eta={op.eta_relax:.12g} relative_gap={gap:.3e}")
    if orc.eta_best - op.eta_relax > ORACLE_SLACK:
        return _fail("oracle beats the relaxation bound", EXIT_INVARIANT)
    return EXIT_OK


# ---------------------------------------------------------------------------


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="wptopt", description=__doc__.splitlines()[0])
    common = _Parser(add_help=False)
    common.add_argument("--solver-tol", type=float, default=None,
                        help="relaxation solver tolerance (default: WPT_SOLVER_TOL or 1e-9)")
    common.add_argument("--no-timestamp", action="store_true",
                        help="omit the timestamp header and timings for byte-stable output")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sp = sub.add_parser("solve", parents=[common], help="optimal loading of one scenario")
    sp.add_argument("--scenario", required=True)
    grp = sp.add_mutually_exclusive_group()
    grp.add_argument("--rl", type=float, help="fixed load resistance (ohm)")
    grp.add_argument("--optimize-rl", action="store_true", help="optimize the load resistance")
    sp.add_argument("--out", help="operating-point JSON output")
    sp.set_defaults(func=cmd_solve)

    sw = sub.add_parser("sweep", parents=[common], help="parameter sweep to CSV")
    sw.add_argument("--sweep", required=True, help="sweep specification JSON")
    sw.add_argument("--out", help="CSV output (default: stdout)")
    sw.add_argument("--jobs", type=_positive_int, default=1)
    sw.set_defaults(func=cmd_sweep)

    fm = sub.add_parser("fieldmap", parents=[common], help="H-field map of a solved scenario")
    fm.add_argument("--scenario", required=True)
    fm.add_argument("--result", required=True, help="operating-point JSON from 'solve'")
    fm.add_argument("--out", required=True)
    fm.add_argument("--origin", type=_vector, default=(0.0, 0.0, 0.0))
    fm.add_argument("--u-axis", type=_vector, default=(1.0, 0.0, 0.0))
    fm.add_argument("--v-axis", type=_vector, default=(0.0, 1.0, 0.0))
    fm.add_argument("--nu", type=int, default=101)
    fm.add_argument("--nv", type=int, default=101)
    fm.add_argument("--spacing", type=float, required=True, help="cell pitch (m)")
    fm.add_argument("--segments", type=_positive_int, default=512)
    fm.set_defaults(func=cmd_fieldmap)

    oc = sub.add_parser("oracle", parents=[common], help="brute-force cross-check")
    oc.add_argument("--scenario", required=True)
    oc.add_argument("--rl", type=float, help="load resistance (default: closed form)")
    oc.add_argument("--resolution", type=int, default=41)
    oc.add_argument("--mode", choices=("grid", "multistart"), default="grid")
    oc.add_argument("--seed", type=int, default=0, help="multistart random seed")
    oc.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.solver_tol is not None and not (0 < args.solver_tol < 1):
        return _fail("--solver-tol must lie in (0, 1)", EXIT_USAGE)
    try:
        return args.func(args)
    except UsageError as exc:
        return _fail(str(exc), EXIT_USAGE)
    except WPTError as exc:
        return _fail(f"{type(exc).__name__}: {exc}", EXIT_USAGE)


if __name__ == "__main__":
    sys.exit(main())
