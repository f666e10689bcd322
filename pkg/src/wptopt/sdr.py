"""Real-valued trace form of the loss-minimization QCQP and its SDP relaxation.

The complex currents ``i`` (receiver current real) are stacked into the
real vector ``c = [Re i_0 .. Re i_{N-1}, Im i_0 .. Im i_{N-2}]`` of length
``M = 2N - 1``. Each port power ``(1/2) i^H T_n i`` becomes ``c^T Q_n c``
and the transferred power ``(1/2) R_L i_{N-1}^2`` becomes ``c^T R c``; the
factor 1/2 lives inside every ``Q_n`` and ``R`` so that ``tr(R C) = 1``
means one watt delivered to the load.
"""

from __future__ import annotations

import enum
import os
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components

from .circuit import LoadedImpedanceMatrix, _eigensystem_from_pim, port_impedance_matrix
from .errors import (
    Infeasible,
    MissingDuals,
    NotTightWarning,
    RankDeficient,
    SolverNumericalFailure,
    ZeroVector,
)
from .sdp import LowRank, solve_sdp, solve_sdp_cvxpy

SCALING_FLOOR = 1e-8
TIGHTNESS_THRESHOLD = 1e-8
DEFAULT_SOLVER_TOL = 1e-9


def default_solver_tol() -> float:
    """Solver accuracy, overridable through ``WPT_SOLVER_TOL``."""
    return float(os.environ.get("WPT_SOLVER_TOL", DEFAULT_SOLVER_TOL))


class SolverStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    NOT_TIGHT = "not_tight"
    INACCURATE = "inaccurate"


@dataclass(frozen=True)
class RealEmbedding:
    """Real trace-form data of one loaded system.

    ``factors[n]`` holds ``Q_n`` in low-rank form; :meth:`Q` materializes
    it. ``Q0`` and ``Rmat`` are stored densely.
    """

    Q0: np.ndarray
    factors: tuple
    Rmat: np.ndarray
    n_nodes: int
    R_L: float
    active_indices: tuple
    passive_indices: tuple

    @property
    def M(self) -> int:
        return 2 * self.n_nodes - 1

    def Q(self, n: int) -> np.ndarray:
        return self.factors[n].dense()

    @property
    def Qn(self) -> list:
        return [self.Q(n) for n in range(self.n_nodes)]

    def real_row(self, n: int) -> int:
        return n

    def imag_row(self, n: int) -> int | None:
        return self.n_nodes + n if n < self.n_nodes - 1 else None

    def receiver_factor(self) -> LowRank:
        e = np.zeros((self.M, 1))
        e[self.n_nodes - 1, 0] = 1.0
        return LowRank(e, np.array([self.Rmat[self.n_nodes - 1, self.n_nodes - 1]]))


@dataclass
class SDRSolution:
    C_star: np.ndarray
    c_star: np.ndarray
    objective: float  # minimal loss P_l per watt transferred
    epsilon: float
    duals: dict
    solver_status: SolverStatus
    Q_star: np.ndarray = field(repr=False, default=None)
    primal_value: float = np.nan  # tr(Q0 C*)
    dual_value: float = np.nan  # sigma
    iterations: int = 0

    @property
    def eta_relax(self) -> float:
        """Efficiency implied by the relaxed optimum (an upper bound)."""
        return 1.0 / (1.0 + self.objective)

    @property
    def tight(self) -> bool:
        return self.epsilon < TIGHTNESS_THRESHOLD


@dataclass(frozen=True)
class KKTReport:
    primal_min_eig: float  # lambda_min(C*) / tr(C*)
    dual_min_eig: float  # lambda_min(Q*) / ||Q*||
    lambda_min: float
    transferred_power_residual: float
    passive_residual: float
    active_min: float
    complementary_slackness_active: float
    complementary_slackness: float  # |tr(Q* C*)| / (||Q*|| ||C*||)
    dual_zero_eigenvalues: int
    rank_condition: bool  # exactly one zero eigenvalue of Q* (rank M - 1)
    duality_gap: float

    def passed(self, tol: float = 1e-8) -> bool:
        return (self.primal_min_eig > -tol and self.dual_min_eig > -tol
                and self.lambda_min >= -tol and self.transferred_power_residual < tol
                and self.passive_residual < tol and self.active_min > -tol
                and self.complementary_slackness < tol)


# ---------------------------------------------------------------------------


def currents_from_vector(c, n_nodes: int) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    i = c[:n_nodes].astype(complex)
    i[: n_nodes - 1] += 1j * c[n_nodes:]
    return i


def vector_from_currents(i) -> np.ndarray:
    """Rotate so the receiver current is real and nonnegative, then stack."""
    i = np.asarray(i, dtype=complex)
    if abs(i[-1]) > 0:
        i = i * (abs(i[-1]) / i[-1])
    return np.concatenate([i.real, i[:-1].imag])


def _embed_rank_one(v, weight):
    """Factors of the real form of ``weight * v v^H`` (v unit), receiver-imag row dropped."""
    p, q = v.real, v.imag
    a = np.concatenate([p, q[:-1]])
    b = np.concatenate([-q, p[:-1]])
    return np.column_stack([a, b]), np.array([weight, weight])


def real_embedding(Zhat: LoadedImpedanceMatrix) -> RealEmbedding:
    """Build ``Q_n`` (via the analytic PIM eigensystem), ``Q0`` and ``R``."""
    N = Zhat.n_nodes
    M = 2 * N - 1
    base = Zhat.base
    factors = []
    for n in range(N):
        T = port_impedance_matrix(base, n).T
        eig = _eigensystem_from_pim(T, n)
        cols, weights = [], []
        for lam, v in ((eig.lambda_plus, eig.v_plus), (eig.lambda_minus, eig.v_minus)):
            if lam != 0.0:
                f, w = _embed_rank_one(v, 0.5 * lam)
                cols.append(f)
                weights.append(w)
        if n == N - 1:
            e = np.zeros((M, 1))
            e[N - 1, 0] = 1.0
            cols.append(e)
            weights.append(np.array([0.5 * Zhat.R_L]))
        factors.append(LowRank(np.hstack(cols), np.concatenate(weights)))

    resistance = Zhat.Zhat.real.copy()
    resistance = 0.5 * (resistance + resistance.T)
    Q0 = np.zeros((M, M))
    Q0[:N, :N] = 0.5 * resistance
    Q0[N:, N:] = 0.5 * resistance[:-1, :-1]
    Rmat = np.zeros((M, M))
    Rmat[N - 1, N - 1] = 0.5 * Zhat.R_L
    return RealEmbedding(Q0, tuple(factors), Rmat, N, Zhat.R_L,
                         base.active_indices, base.passive_indices)


def embedding_from_dense(Zhat: LoadedImpedanceMatrix) -> list:
    """Direct (non-factored) real forms of every loaded PIM, for cross-checks."""
    N = Zhat.n_nodes
    out = []
    for n in range(N):
        T = port_impedance_matrix(Zhat, n).T
        Q = 0.5 * np.block([[T.real, -T.imag], [T.imag, T.real]])
        keep = [k for k in range(2 * N) if k != 2 * N - 1]
        out.append(Q[np.ix_(keep, keep)])
    return out


def extract_rank1(C_star, receiver_row: int | None = None) -> np.ndarray:
    """Principal-eigenpair estimate ``sqrt(lambda_1) u_1`` with a sign convention.

    The sign makes entry ``receiver_row`` (the receiver real current,
    default ``(M - 1) // 2``) nonnegative.
    """
    C = np.asarray(C_star, dtype=float)
    C = 0.5 * (C + C.T)
    vals, vecs = np.linalg.eigh(C)
    lam, u = vals[-1], vecs[:, -1]
    if not lam > 0:
        raise RankDeficient("largest eigenvalue is not positive")
    row = (C.shape[0] - 1) // 2 if receiver_row is None else receiver_row
    c = np.sqrt(lam) * u
    if c[row] < 0:
        c = -c
    return c


def tightness_error(C_star, c_star) -> float:
    """``||C* - c* c*^T||_F / (c*^T c*)``."""
    c = np.asarray(c_star, dtype=float)
    norm2 = float(c @ c)
    if norm2 == 0:
        raise ZeroVector("c* is the zero vector")
    return float(np.linalg.norm(np.asarray(C_star) - np.outer(c, c)) / norm2)


def _receiver_reachable(Zm, active) -> bool:
    adjacency = (np.abs(Zm) > 0).astype(int)
    np.fill_diagonal(adjacency, 0)
    _, labels = connected_components(adjacency, directed=False)
    return labels[-1] in {labels[a] for a in active}


def _variable_scaling(e: RealEmbedding, zhat: np.ndarray) -> np.ndarray:
    """Diagonal scaling that balances the magnitudes of the relaxed currents.

    Weakly coupled systems have optimal currents spanning many decades,
    which starves the conic solver of precision. The estimate tunes every
    passive node to resonance and drives the active nodes with 1 V.
    """
    N = e.n_nodes
    Zr = np.array(zhat, dtype=complex)
    idx = list(e.passive_indices)
    Zr[idx, idx] = Zr[idx, idx].real
    v = np.zeros(N, dtype=complex)
    v[list(e.active_indices)] = 1.0
    try:
        mag = np.abs(np.linalg.solve(Zr, v))
    except np.linalg.LinAlgError:
        return np.ones(2 * N - 1)
    if not np.all(np.isfinite(mag)) or mag[-1] == 0:
        return np.ones(2 * N - 1)
    mag = np.clip(mag / mag[-1], SCALING_FLOOR, 1 / SCALING_FLOOR)
    return np.concatenate([mag, mag[:-1]])


def _diagonal_scaling(C: np.ndarray, N: int) -> np.ndarray:
    """Scaling from a previous (possibly inaccurate) relaxed solution."""
    diag = np.sqrt(np.clip(np.diag(C), 0.0, None))
    mag = np.maximum(diag[:N], np.concatenate([diag[N:], [0.0]]))
    if not np.all(np.isfinite(mag)) or mag[-1] <= 0:
        return np.ones(2 * N - 1)
    mag = np.clip(mag / mag[-1], SCALING_FLOOR, 1 / SCALING_FLOOR)
    return np.concatenate([mag, mag[:-1]])


def _better(a, b) -> bool:
    """Prefer converged runs, then smaller tightness error."""
    rank = {"optimal": 0, "inaccurate": 1}
    return (rank.get(a[0].status, 2), a[3]) < (rank.get(b[0].status, 2), b[3])


def solve_sdr(e: RealEmbedding, active=None, passive=None, tol: float | None = None,
              backend: str = "ipm", zhat: np.ndarray | None = None) -> SDRSolution:
    """Minimize total loss per watt transferred over the relaxed current matrix.

    Raises :class:`Infeasible` when no power path exists and
    :class:`SolverNumericalFailure` when the solver does not converge. A
    non-tight optimum is returned with status ``NOT_TIGHT`` and a warning;
    its efficiency is then an upper bound only.
    """
    tol = default_solver_tol() if tol is None else tol
    N = e.n_nodes
    active = tuple(e.active_indices if active is None else active)
    passive = tuple(e.passive_indices if passive is None else passive)
    if sorted(active + passive) != list(range(N)) or N - 1 not in passive:
        raise ValueError("active/passive sets must partition the nodes, receiver passive")
    if zhat is not None and not _receiver_reachable(zhat, active):
        raise Infeasible("the receiver is not coupled to any active node")

    constraints = list(e.factors) + [e.receiver_factor()]
    b = np.zeros(N + 1)
    b[-1] = 1.0
    ineq = np.zeros(N + 1, dtype=bool)
    ineq[list(active)] = True
    if backend not in ("ipm", "cvxpy"):
        raise ValueError(f"unknown backend {backend!r}")
    solver = solve_sdp if backend == "ipm" else solve_sdp_cvxpy

    def attempt(d):
        # solve for C' with C = D C' D; a congruence keeps rank and definiteness
        Q0s = d[:, None] * e.Q0 * d[None, :]
        scaled = [LowRank(d[:, None] * f.factors, f.weights) for f in constraints]
        res = solver(Q0s, scaled, b, ineq, tol=tol)
        if res.status in ("infeasible", "failed"):
            return res, None, None, np.inf
        C = 0.5 * (res.X + res.X.T)
        C = d[:, None] * C * d[None, :]
        try:
            c = extract_rank1(C, receiver_row=N - 1)
        except RankDeficient:
            return res, None, None, np.inf
        return res, C, c, tightness_error(C, c)

    # Weakly coupled systems have optimal currents spanning many decades,
    # which starves the solver of precision; rebalancing the variables
    # and solving again usually recovers a tight answer.
    res, C, c, eps = attempt(np.ones(2 * N - 1))
    if res.status != "infeasible" and (res.status != "optimal" or eps >= TIGHTNESS_THRESHOLD):
        guesses = []
        if C is not None:
            guesses.append(_diagonal_scaling(C, N))
        if zhat is not None:
            guesses.append(_variable_scaling(e, zhat))
        for d in guesses:
            trial = attempt(d)
            if trial[1] is not None and (C is None or _better(trial, (res, C, c, eps))):
                res, C, c, eps = trial
            if res.status == "optimal" and eps < TIGHTNESS_THRESHOLD:
                break

    if res.status == "infeasible":
        raise Infeasible("the relaxation is infeasible: no power path to the receiver")
    if C is None:
        raise SolverNumericalFailure(
            f"SDP solver failed (gap {res.relative_gap:.2e}, "
            f"pinf {res.primal_infeasibility:.2e}, dinf {res.dual_infeasibility:.2e})"
        )
    y = res.y
    lam = {n: float(y[n]) for n in active}
    nu = {n: float(y[n]) for n in passive}
    sigma = float(y[-1])
    Q_star = e.Q0 - sum(y[n] * e.Q(n) for n in range(N)) - sigma * e.Rmat
    Q_star = 0.5 * (Q_star + Q_star.T)
    primal = float(np.vdot(e.Q0, C))
    status = SolverStatus.OPTIMAL if res.status == "optimal" else SolverStatus.INACCURATE
    if eps >= TIGHTNESS_THRESHOLD:
        status = SolverStatus.NOT_TIGHT
        warnings.warn(f"relaxation not tight (epsilon = {eps:.3e}); efficiency is an "
                      "upper bound only", NotTightWarning, stacklevel=2)
    return SDRSolution(
        C_star=C, c_star=c, objective=primal - 1.0, epsilon=eps,
        duals={"lambda": lam, "nu": nu, "sigma": sigma}, solver_status=status,
        Q_star=Q_star, primal_value=primal, dual_value=sigma, iterations=res.iterations,
    )


def kkt_report(sol: SDRSolution, e: RealEmbedding, zero_rtol: float = 1e-8) -> KKTReport:
    """Residuals of the optimality conditions at a solved relaxation."""
    if sol.duals is None or sol.Q_star is None:
        raise MissingDuals("solution carries no dual multipliers")
    C, Q = sol.C_star, sol.Q_star
    N = e.n_nodes
    traces = np.array([np.vdot(e.Q(n), C) for n in range(N)])
    act = list(sol.duals["lambda"])
    pas = list(sol.duals["nu"])
    lam = np.array([sol.duals["lambda"][n] for n in act]) if act else np.zeros(0)
    c_eigs = np.linalg.eigvalsh(C)
    q_eigs = np.linalg.eigvalsh(Q)
    q_norm = np.linalg.norm(Q)
    c_norm = np.linalg.norm(C)
    zero_count = int((np.abs(q_eigs) < zero_rtol * q_norm).sum())
    scale = max(abs(sol.primal_value), 1.0)
    return KKTReport(
        primal_min_eig=float(c_eigs[0] / np.trace(C)),
        dual_min_eig=float(q_eigs[0] / q_norm),
        lambda_min=float(lam.min()) if lam.size else 0.0,
        transferred_power_residual=float(abs(np.vdot(e.Rmat, C) - 1.0)),
        passive_residual=float(np.abs(traces[pas]).max()) / scale,
        active_min=float(traces[act].min()) / scale if act else 0.0,
        complementary_slackness_active=float(np.abs(lam * traces[act]).max()) / scale
        if act else 0.0,
        complementary_slackness=float(abs(np.vdot(Q, C)) / (q_norm * c_norm)),
        dual_zero_eigenvalues=zero_count,
        rank_condition=zero_count == 1,
        duality_gap=float(abs(sol.primal_value - sol.dual_value) / scale),
    )


def dump_triples(e: RealEmbedding, path) -> None:
    """Write ``matrix,row,col,value`` triples (upper triangles, nonzeros).

    Matrix ids: 0 is ``Q0``, ``1..N`` are ``Q_1..Q_N``, ``N + 1`` is ``R``.
    """
    with open(path, "w") as fh:
        fh.write("matrix,row,col,value\n")
        mats = [(0, e.Q0)] + [(n + 1, None) for n in range(e.n_nodes)] + \
               [(e.n_nodes + 1, e.Rmat)]
        for mid, mat in mats:
            if mat is None:
                mat = e.Q(mid - 1)
            rows, cols = np.nonzero(np.triu(mat))
            for r, c in zip(rows, cols):
                fh.write(f"{mid},{r},{c},{mat[r, c]:.17e}\n")
