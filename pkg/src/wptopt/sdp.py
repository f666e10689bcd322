"""Primal-dual interior-point method for SDPs with low-rank constraint matrices.

Solves::

    min  <C, X>
    s.t. <A_i, X> = b_i      (equality rows)
         <A_i, X> >= b_i     (inequality rows, via nonnegative slacks)
         X >= 0 (PSD)

with the HKM search direction and Mehrotra predictor-corrector steps.
Every ``A_i`` is given in factored form ``U_i diag(w_i) U_i^T``, which
makes the Schur complement cost ``O(n^2 K + K^2 n)`` for ``K`` total
factor columns instead of ``O(m n^3)``.

The dual is ``max b^T y  s.t.  C - sum_i y_i A_i = Z >= 0``, with
``y_i >= 0`` on inequality rows.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LowRank:
    """Symmetric matrix ``factors @ diag(weights) @ factors.T``."""

    factors: np.ndarray
    weights: np.ndarray

    def dense(self) -> np.ndarray:
        return (self.factors * self.weights) @ self.factors.T

    @classmethod
    def from_dense(cls, A, rtol=1e-14) -> "LowRank":
        vals, vecs = np.linalg.eigh(0.5 * (A + A.T))
        keep = np.abs(vals) > rtol * max(np.abs(vals).max(), 1e-300)
        return cls(vecs[:, keep], vals[keep])

    def frobenius(self) -> float:
        g = self.factors.T @ self.factors
        return float(np.sqrt(np.einsum("i,ij,j->", self.weights, g**2, self.weights)))


@dataclass
class SDPResult:
    X: np.ndarray
    y: np.ndarray
    Z: np.ndarray
    slack: np.ndarray
    status: str  # "optimal", "inaccurate", "infeasible", "failed"
    iterations: int
    primal_objective: float
    dual_objective: float
    relative_gap: float
    primal_infeasibility: float
    dual_infeasibility: float


class _Operator:
    """The map X -> (<A_i, X>)_i and its adjoint for stacked low-rank data."""

    def __init__(self, constraints):
        self.m = len(constraints)
        self.U = np.hstack([c.factors for c in constraints])
        self.w = np.concatenate([c.weights for c in constraints])
        owner = np.concatenate([np.full(len(c.weights), i) for i, c in enumerate(constraints)])
        self.owner = owner
        self.S = np.zeros((self.m, len(owner)))
        self.S[owner, np.arange(len(owner))] = 1.0

    def apply(self, X) -> np.ndarray:
        quad = np.einsum("ik,ik->k", self.U, X @ self.U)
        return self.S @ (self.w * quad)

    def adjoint(self, y) -> np.ndarray:
        scale = self.w * y[self.owner]
        out = (self.U * scale) @ self.U.T
        return 0.5 * (out + out.T)

    def schur(self, X, Zinv) -> np.ndarray:
        P = self.U.T @ (X @ self.U)
        W = self.U.T @ (Zinv @ self.U)
        H = self.S @ ((np.outer(self.w, self.w) * P * W) @ self.S.T)
        return 0.5 * (H + H.T)


def _max_step(X, dX):
    """Largest alpha with X + alpha dX PSD (inf if unbounded)."""
    L = np.linalg.cholesky(X)
    M = sla.solve_triangular(L, dX, lower=True)
    M = sla.solve_triangular(L, M.T, lower=True)
    lam = sla.eigh(0.5 * (M + M.T), eigvals_only=True, subset_by_index=[0, 0])[0]
    return np.inf if lam >= 0 else -1.0 / lam


def _max_step_lp(s, ds):
    neg = ds < 0
    if not neg.any():
        return np.inf
    return float(np.min(-s[neg] / ds[neg]))


def solve_sdp(C, constraints, b, inequality=None, tol=1e-9, max_iter=150,
              target=None, verbose=False) -> SDPResult:
    """Solve the SDP described in the module docstring.

    Parameters
    ----------
    C : (n, n) array
        Symmetric cost matrix.
    constraints : list of LowRank
        Constraint matrices ``A_i``.
    b : (m,) array
    inequality : (m,) bool array, optional
        Rows that are ``>=`` constraints. Defaults to all equalities.
    tol : float
        Accuracy (relative gap and scaled infeasibilities) required for
        status ``"optimal"``.
    target : float, optional
        Accuracy at which iterations stop; defaults to ``tol * 1e-4`` so a
        converged run ends well inside ``tol``. Iterations also stop at
        numerical stagnation, returning the best iterate.
    """
    C = np.asarray(C, dtype=float)
    b = np.asarray(b, dtype=float)
    n, m = C.shape[0], len(constraints)
    ineq = np.zeros(m, dtype=bool) if inequality is None else np.asarray(inequality, bool)
    target = max(tol * 1e-4, 1e-15) if target is None else target

    # row and cost normalization
    row_scale = np.array([c.frobenius() for c in constraints])
    row_scale[row_scale == 0] = 1.0
    cost_scale = max(np.linalg.norm(C), 1e-300)
    cons = [LowRank(c.factors, c.weights / s) for c, s in zip(constraints, row_scale)]
    bs = b / row_scale
    Cs = C / cost_scale
    op = _Operator(cons)
    iq = np.flatnonzero(ineq)
    ns = len(iq)

    xi = max(10.0, np.sqrt(n), n * np.max((1 + np.abs(bs)) / 2.0))
    eta = max(10.0, np.sqrt(n), 1.0)
    X = xi * np.eye(n)
    Z = eta * np.eye(n)
    y = np.zeros(m)
    s = np.full(ns, xi)
    zs = np.full(ns, eta)
    nb, nc = np.linalg.norm(bs), np.linalg.norm(Cs)

    best = None
    history = []
    status = "failed"
    gamma = 0.9
    for it in range(max_iter + 1):
        AX = op.apply(X)
        rp = bs - AX
        rp[iq] += s
        Rd = Cs - op.adjoint(y) - Z
        rds = y[iq] - zs
        pobj = float(np.vdot(Cs, X))
        dobj = float(bs @ y)
        compl = float(np.vdot(X, Z) + s @ zs)
        mu = compl / (n + ns)
        rel_gap = compl / (1 + abs(pobj) + abs(dobj))
        pinf = np.linalg.norm(rp) / (1 + nb)
        dinf = np.sqrt(np.linalg.norm(Rd) ** 2 + np.linalg.norm(rds) ** 2) / (1 + nc)
        merit = max(rel_gap, pinf, dinf)
        history.append(merit)
        if verbose:
            log.info("it %3d pobj %.12e dobj %.12e gap %.2e pinf %.2e dinf %.2e",
                     it, pobj, dobj, rel_gap, pinf, dinf)
        if best is None or merit < best[0]:
            best = (merit, X.copy(), y.copy(), Z.copy(), s.copy(), it, pobj, dobj,
                    rel_gap, pinf, dinf)
        if merit < target:
            break
        # primal infeasibility certificate: dual ray with growing objective
        if dobj > 1e10 * (1 + abs(pobj)) and dinf < 1e-6:
            status = "infeasible"
            break
        if it == max_iter:
            break
        if len(history) > 15 and min(history[-10:]) > 0.9 * min(history[:-10]):
            break  # stagnation

        try:
            Zchol = sla.cho_factor(Z, lower=True)
            Zinv = sla.cho_solve(Zchol, np.eye(n))
            Zinv = 0.5 * (Zinv + Zinv.T)
            H = op.schur(X, Zinv)
            if ns:
                H[iq, iq] += s / zs
            try:
                Hfac = sla.cho_factor(H, lower=True)
                solve_h = lambda r: sla.cho_solve(Hfac, r)  # noqa: E731
            except np.linalg.LinAlgError:
                lu = sla.lu_factor(H)
                solve_h = lambda r: sla.lu_solve(lu, r)  # noqa: E731
        except (np.linalg.LinAlgError, ValueError):
            break

        XRdZi = X @ Rd @ Zinv

        def direction(rc_x, rc_s):
            T = rc_x - XRdZi
            rhs = rp - op.apply(T)
            if ns:
                rhs[iq] += rc_s - s * rds / zs
            dy = solve_h(rhs)
            Ady = op.adjoint(dy)
            dZ = Rd - Ady
            dX = T + X @ Ady @ Zinv
            dX = 0.5 * (dX + dX.T)
            dzs = rds + dy[iq]
            ds = rc_s - s * dzs / zs
            return dX, dy, dZ, ds, dzs

        def steps(dX, dZ, ds, dzs):
            try:
                ap = min(_max_step(X, dX), _max_step_lp(s, ds))
                ad = min(_max_step(Z, dZ), _max_step_lp(zs, dzs))
            except np.linalg.LinAlgError:
                return None
            return ap, ad

        # predictor
        pred = direction(-X, -s)
        st = steps(pred[0], pred[2], pred[3], pred[4])
        if st is None:
            break
        ap, ad = min(1.0, st[0]), min(1.0, st[1])
        mu_aff = (np.vdot(X + ap * pred[0], Z + ad * pred[2])
                  + (s + ap * pred[3]) @ (zs + ad * pred[4])) / (n + ns)
        sigma = min(1.0, (mu_aff / mu) ** 3) if mu > 0 else 0.0
        # corrector
        rc_x = sigma * mu * Zinv - X - pred[0] @ pred[2] @ Zinv
        rc_s = sigma * mu / zs - s - pred[3] * pred[4] / zs
        dX, dy, dZ, ds, dzs = direction(rc_x, rc_s)
        st = steps(dX, dZ, ds, dzs)
        if st is None:
            break
        gamma = 0.9 + 0.09 * min(ap, ad)
        ap, ad = min(1.0, gamma * st[0]), min(1.0, gamma * st[1])
        if max(ap, ad) < 1e-10:
            break
        X = X + ap * dX
        X = 0.5 * (X + X.T)
        s = s + ap * ds
        y = y + ad * dy
        Z = Z + ad * dZ
        Z = 0.5 * (Z + Z.T)
        zs = zs + ad * dzs

    merit, X, y, Z, s, it_best, pobj, dobj, rel_gap, pinf, dinf = best
    if status != "infeasible":
        if merit <= tol:
            status = "optimal"
        elif merit <= np.sqrt(tol):
            status = "inaccurate"
        else:
            status = "failed"
    # undo scaling
    y_out = y * cost_scale / row_scale
    return SDPResult(
        X=X, y=y_out, Z=Z * cost_scale, slack=s * row_scale[iq] if ns else s,
        status=status, iterations=len(history) - 1,
        primal_objective=pobj * cost_scale, dual_objective=dobj * cost_scale,
        relative_gap=rel_gap, primal_infeasibility=pinf, dual_infeasibility=dinf,
    )


def solve_sdp_cvxpy(C, constraints, b, inequality=None, tol=1e-9, solver="CLARABEL"):
    """Reference path through cvxpy, for cross-checking small instances."""
    import cvxpy as cp

    n, m = C.shape[0], len(constraints)
    ineq = np.zeros(m, dtype=bool) if inequality is None else np.asarray(inequality, bool)
    X = cp.Variable((n, n), symmetric=True)
    dense = [c.dense() if isinstance(c, LowRank) else np.asarray(c) for c in constraints]
    cons = []
    for A, bi, is_ineq in zip(dense, b, ineq):
        expr = cp.trace(A @ X)
        cons.append(expr >= bi if is_ineq else expr == bi)
    psd = X >> 0
    prob = cp.Problem(cp.Minimize(cp.trace(C @ X)), cons + [psd])
    opts = {}
    if solver == "CLARABEL":
        opts = dict(tol_gap_abs=tol * 1e-2, tol_gap_rel=tol * 1e-2, tol_feas=tol * 1e-2,
                    max_iter=500)
    prob.solve(solver=solver, **opts)
    if prob.status in ("infeasible", "infeasible_inaccurate"):
        status = "infeasible"
    elif prob.status == "optimal":
        status = "optimal"
    elif prob.status == "optimal_inaccurate":
        status = "inaccurate"
    else:
        status = "failed"
    if X.value is None:
        return SDPResult(np.zeros((n, n)), np.zeros(m), np.zeros((n, n)), np.zeros(0), status,
                         0, np.nan, np.nan, np.nan, np.nan, np.nan)
    # cvxpy reports duals of >= constraints as nonnegative multipliers
    y = np.array([float(c.dual_value) for c in cons])
    Zd = C - sum(yi * A for yi, A in zip(y, dense))
    pobj = float(prob.value)
    dobj = float(np.dot(b, y))
    return SDPResult(
        X=np.asarray(X.value), y=y, Z=0.5 * (Zd + Zd.T), slack=np.zeros(int(ineq.sum())),
        status=status, iterations=int(prob.solver_stats.num_iters or 0),
        primal_objective=pobj, dual_objective=dobj,
        relative_gap=abs(pobj - dobj) / (1 + abs(pobj) + abs(dobj)),
        primal_infeasibility=np.nan, dual_infeasibility=np.nan,
    )
