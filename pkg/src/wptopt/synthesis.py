"""From a solved relaxation to physical operating parameters.

Recovers currents, loading reactances/capacitances and the efficiency of
a scenario at a given load resistance, and optimizes the load
resistance itself in an outer golden-section loop.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .circuit import ImpedanceMatrix, apply_loading, assemble_impedance_matrix, terminate_nodes
from .errors import (
    DeadPassiveNode,
    Infeasible,
    NoImprovementWarning,
    NonPositiveFrequency,
    NonPositiveLoad,
    NotCapacitive,
    SingularTransmitterLoss,
    VerificationFailed,
    ZeroVector,
)
from .geometry import Scenario
from .sdr import SDRSolution, SolverStatus, currents_from_vector, real_embedding, solve_sdr

DEAD_NODE_RTOL = 1e-12
VERIFY_RTOL = 1e-7
GOLDEN_SPAN = 30.0
GOLDEN_RTOL = 1e-4


@dataclass
class OperatingPoint:
    """Optimal operating point, currents normalized to 1 W in the load.

    ``reactances`` is indexed like ``passive_indices`` (receiver last);
    open (current-free) nodes have ``nan`` reactance and are listed in
    ``open_nodes``.
    """

    currents: np.ndarray
    source_voltages: np.ndarray
    reactances: np.ndarray
    capacitances: list
    passive_indices: tuple
    active_indices: tuple
    R_L: float
    eta: float
    eta_relax: float
    epsilon: float
    solver_status: SolverStatus
    residual_passive_voltages: float
    verification_error: float
    open_nodes: tuple = ()
    sdr: SDRSolution | None = field(default=None, repr=False)

    @property
    def n_nodes(self) -> int:
        return len(self.currents)

    def full_reactances(self) -> np.ndarray:
        """Per-node reactance vector (0 on active nodes, nan on open nodes)."""
        x = np.zeros(self.n_nodes)
        x[list(self.passive_indices)] = self.reactances
        return x

    def port_powers(self, Z: ImpedanceMatrix) -> np.ndarray:
        """Real power entering each port, ``Re(conj(i_n) v_n) / 2``."""
        x = np.nan_to_num(self.full_reactances())
        v = apply_loading(Z, x, self.R_L).Zhat @ self.currents
        return 0.5 * (self.currents.conj() * v).real

    def to_dict(self) -> dict:
        N = self.n_nodes
        react = [None] * N
        caps = [None] * N
        for k, n in enumerate(self.passive_indices):
            react[n] = None if np.isnan(self.reactances[k]) else float(self.reactances[k])
            caps[n] = self.capacitances[k]
        return {
            "eta": self.eta,
            "eta_relax": self.eta_relax,
            "r_l_ohm": self.R_L,
            "currents": [[float(c.real), float(c.imag)] for c in self.currents],
            "source_voltages": [[float(v.real), float(v.imag)] for v in self.source_voltages],
            "reactances_ohm": react,
            "capacitances_farad": caps,
            "active_indices": list(self.active_indices),
            "open_nodes": list(self.open_nodes),
            "residuals": {
                "passive_voltage": self.residual_passive_voltages,
                "verification": self.verification_error,
            },
            "epsilon": self.epsilon,
            "solver_status": self.solver_status.value,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "OperatingPoint":
        currents = np.array([complex(*c) for c in data["currents"]])
        N = len(currents)
        active = tuple(data.get("active_indices", [0]))
        passive = tuple(n for n in range(N) if n not in active)
        react = np.array([np.nan if data["reactances_ohm"][n] is None
                          else data["reactances_ohm"][n] for n in passive])
        volts = np.array([complex(*v) for v in data.get("source_voltages", [[0, 0]] * N)])
        res = data.get("residuals", {})
        return cls(
            currents=currents, source_voltages=volts, reactances=react,
            capacitances=[data["capacitances_farad"][n] for n in passive],
            passive_indices=passive, active_indices=active, R_L=float(data["r_l_ohm"]),
            eta=float(data["eta"]), eta_relax=float(data.get("eta_relax", data["eta"])),
            epsilon=float(data["epsilon"]), solver_status=SolverStatus(data["solver_status"]),
            residual_passive_voltages=float(res.get("passive_voltage", np.nan)),
            verification_error=float(res.get("verification", np.nan)),
            open_nodes=tuple(data.get("open_nodes", ())),
        )


@dataclass(frozen=True)
class LoadEstimate:
    z_o: complex
    U2: float
    R_L_a: float


@dataclass
class LoadOptimum:
    R_L_star: float
    op: OperatingPoint
    R_L_a: float
    eta_a: float
    improvement: float  # relative eta gain of the optimum over the better bracket end
    evaluations: int


# ---------------------------------------------------------------------------


def pte(i, Z, R_L: float) -> float:
    """``R_L |i_N|^2 / (i^H Z' i + R_L |i_N|^2)``."""
    i = np.asarray(i, dtype=complex)
    if not np.any(i):
        raise ZeroVector("current vector is zero")
    if not R_L > 0:
        raise NonPositiveLoad(f"load resistance must be positive, got {R_L}")
    Zm = Z.Z if isinstance(Z, ImpedanceMatrix) else np.asarray(Z)
    load = R_L * abs(i[-1]) ** 2
    loss = float(np.real(np.vdot(i, Zm.real @ i)))
    return load / (loss + load)


def unloaded_voltages(Z, i_star) -> np.ndarray:
    Zm = Z.Z if isinstance(Z, ImpedanceMatrix) else np.asarray(Z)
    return Zm @ np.asarray(i_star, dtype=complex)


def optimal_reactances(v_unl, i_star, passive, on_dead: str = "raise") -> np.ndarray:
    """``x_n = -Im(v_unl_n / i_n)`` for every passive node (receiver included).

    Nodes whose current is below ``1e-12 ||i||`` have no defined reactance:
    with ``on_dead="raise"`` they raise :class:`DeadPassiveNode`, with
    ``on_dead="open"`` they get ``nan`` (treated as open circuits).
    """
    v = np.asarray(v_unl, dtype=complex)
    i = np.asarray(i_star, dtype=complex)
    passive = list(passive)
    floor = DEAD_NODE_RTOL * np.linalg.norm(i)
    dead = [n for n in passive if abs(i[n]) <= floor]
    if dead and on_dead == "raise":
        raise DeadPassiveNode(dead)
    x = np.full(len(passive), np.nan)
    for k, n in enumerate(passive):
        if n not in dead:
            x[k] = -(v[n] / i[n]).imag
    return x


def reactance_to_capacitance(x: float, f: float) -> float:
    """``C = -1 / (w x)``; inductive reactances raise :class:`NotCapacitive`."""
    if not f > 0:
        raise NonPositiveFrequency(f"frequency must be positive, got {f}")
    omega = 2 * math.pi * f
    if not x < 0:
        raise NotCapacitive(x, x / omega)
    return -1.0 / (omega * float(x))


def closed_form_load(Z: ImpedanceMatrix) -> LoadEstimate:
    """Minimum-loss output impedance, coupling factor U^2 and load estimate.

    ``z_o = z_r - z_tr^T (Z_t')^{-1} z_tr'``,
    ``U^2 = z_tr^H (Z_t')^{-1} z_tr / z_o'`` and
    ``R_L^a = z_o' sqrt(1 + U^2)``. Exact for a single transmitter and for
    unconstrained fully active transmitters.
    """
    Rt = Z.Z_t.real
    try:
        chol = np.linalg.cholesky(0.5 * (Rt + Rt.T))
    except np.linalg.LinAlgError:
        raise SingularTransmitterLoss("transmitter loss matrix is not positive definite") \
            from None
    z = Z.z_tr

    def solve(b):
        return np.linalg.solve(chol.T, np.linalg.solve(chol, b))

    z_o = Z.z_r - z @ solve(z.real)
    num = float(np.real(np.vdot(z, solve(z))))
    U2 = num / z_o.real
    return LoadEstimate(complex(z_o), U2, z_o.real * math.sqrt(1.0 + U2))


# ---------------------------------------------------------------------------


def _as_matrix(s) -> ImpedanceMatrix:
    return s if isinstance(s, ImpedanceMatrix) else assemble_impedance_matrix(s)


def solve_relaxation(Z: ImpedanceMatrix, R_L: float, tol=None, backend="ipm") -> SDRSolution:
    Zh = apply_loading(Z, 0.0, R_L)
    return solve_sdr(real_embedding(Zh), tol=tol, backend=backend, zhat=Zh.Zhat)


def solve_operating_point(s, R_L: float, tol=None, backend: str = "ipm",
                          verify: bool = True) -> OperatingPoint:
    """Full pipeline: assemble, embed, relax, recover currents and loads, verify.

    The verification step re-solves the loaded circuit driven only by the
    synthesized source voltages and compares the resulting currents.
    """
    Z = _as_matrix(s)
    N = Z.n_nodes
    sol = solve_relaxation(Z, R_L, tol=tol, backend=backend)
    i = currents_from_vector(sol.c_star, N)
    i *= math.sqrt(2.0 / R_L) / i[-1].real  # 1 W in the load
    passive = Z.passive_indices
    v_unl = unloaded_voltages(Z, i)
    x = optimal_reactances(v_unl, i, passive, on_dead="open")
    open_nodes = tuple(n for k, n in enumerate(passive) if np.isnan(x[k]))
    if N - 1 in open_nodes:
        raise Infeasible("the optimum carries no receiver current")

    x_full = np.zeros(N)
    x_full[list(passive)] = np.nan_to_num(x)
    Zl = apply_loading(Z, x_full, R_L).Zhat
    v = Zl @ i
    closed = [n for n in passive if n not in open_nodes]
    scale = np.abs(v_unl).max()
    residual = float(np.abs(v[closed]).max() / scale)
    v_src = np.zeros(N, dtype=complex)
    v_src[list(Z.active_indices)] = v[list(Z.active_indices)]

    keep = [n for n in range(N) if n not in open_nodes]
    i_check = np.zeros(N, dtype=complex)
    i_check[keep] = np.linalg.solve(Zl[np.ix_(keep, keep)], v_src[keep])
    verr = float(np.linalg.norm(i_check - i) / np.linalg.norm(i))
    if verify and sol.solver_status is not SolverStatus.NOT_TIGHT and verr > VERIFY_RTOL:
        raise VerificationFailed(f"re-solved currents differ by {verr:.2e} (relative)")

    caps = []
    for xn in x:
        try:
            caps.append(reactance_to_capacitance(xn, Z.omega / (2 * math.pi)))
        except NotCapacitive:
            caps.append(None)
    caps = [None if (c is not None and not np.isfinite(c)) else c for c in caps]
    return OperatingPoint(
        currents=i, source_voltages=v_src, reactances=x, capacitances=caps,
        passive_indices=tuple(passive), active_indices=tuple(Z.active_indices), R_L=R_L,
        eta=pte(i, Z, R_L), eta_relax=sol.eta_relax, epsilon=sol.epsilon,
        solver_status=sol.solver_status, residual_passive_voltages=residual,
        verification_error=verr, open_nodes=open_nodes, sdr=sol,
    )


def relaxed_efficiency(Z: ImpedanceMatrix, R_L: float, tol=None) -> float:
    """Optimal (relaxed) efficiency at a fixed load resistance."""
    return solve_relaxation(Z, R_L, tol=tol).eta_relax


def golden_section_max(f, a: float, b: float, xtol: float, max_iter: int = 200):
    """Maximize a unimodal ``f`` on ``[a, b]``; returns (x, f(x), evaluations)."""
    invphi = (math.sqrt(5) - 1) / 2
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    evals = 2
    for _ in range(max_iter):
        if abs(b - a) <= xtol:
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
        evals += 1
    return (c, fc, evals) if fc >= fd else (d, fd, evals)


def optimize_load_resistance(s, bracket=None, tol=None, xtol: float = GOLDEN_RTOL) -> LoadOptimum:
    """Maximize efficiency over ``R_L`` by golden-section search on ``log R_L``.

    The default bracket is ``[R_L^a / 30, 30 R_L^a]`` around the closed-form
    estimate. A flat landscape returns ``R_L^a`` with a warning.
    """
    Z = _as_matrix(s)
    est = closed_form_load(Z)
    lo, hi = bracket if bracket is not None else (est.R_L_a / GOLDEN_SPAN,
                                                 est.R_L_a * GOLDEN_SPAN)
    cache = {}

    def eta_log(t):
        if t not in cache:
            cache[t] = relaxed_efficiency(Z, math.exp(t), tol=tol)
        return cache[t]

    t_star, eta_star, evals = golden_section_max(eta_log, math.log(lo), math.log(hi), xtol)
    ends = max(eta_log(math.log(lo)), eta_log(math.log(hi)))
    eta_a = relaxed_efficiency(Z, est.R_L_a, tol=tol)
    improvement = (eta_star - ends) / max(ends, 1e-300)
    R_star = math.exp(t_star)
    if max(cache.values()) - min(cache.values()) <= 1e-12 * max(cache.values()):
        warnings.warn("efficiency is flat in R_L; returning the closed-form estimate",
                      NoImprovementWarning, stacklevel=2)
        R_star = est.R_L_a
    op = solve_operating_point(Z, R_star, tol=tol)
    return LoadOptimum(R_star, op, est.R_L_a, eta_a, improvement, len(cache) + 1)


def efficiency_with_fixed_loads(s, loads: dict, R_L: float | None = None, tol=None) -> float:
    """Optimal efficiency when some passive nodes carry prescribed reactances.

    Fixed nodes are eliminated by Kron reduction; the remaining passive
    nodes (receiver included) are optimized. ``R_L`` defaults to the
    closed-form estimate of the reduced system.
    """
    Z = _as_matrix(s)
    reduced = terminate_nodes(Z, loads) if loads else Z
    if R_L is None:
        R_L = closed_form_load(reduced).R_L_a
    return relaxed_efficiency(reduced, R_L, tol=tol)
