"""Brute-force optimizers in the physical (reactance) parameterization.

None of this touches the relaxation code path: each candidate loading is
evaluated by solving the loaded circuit driven at the single transmitter.
Used to falsify the claimed global optimum on small instances.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .circuit import ImpedanceMatrix, assemble_impedance_matrix
from .errors import DimensionMismatch, Infeasible, NonPositiveLoad, TooManyDimensions

GRID_MAX_DIMS = 3
GRID_HALF_WIDTH = 0.5
GRID_REFINE = 10.0
MULTISTART_COUNT = 32
MULTISTART_SPREAD = 0.2
NM_FATOL = 1e-10


class OracleMethod(str, enum.Enum):
    GRID = "GridSearch"
    MULTISTART = "NelderMeadMultistart"
    SISO = "SISOClosedForm"


@dataclass
class OracleResult:
    eta_best: float
    x_best: np.ndarray
    method: OracleMethod
    evaluations: int
    history: list = field(default_factory=list)  # best eta after each stage


@dataclass(frozen=True)
class SISOResult:
    eta_max: float
    R_L_opt: float
    U2: float


def _matrix(s) -> ImpedanceMatrix:
    return s if isinstance(s, ImpedanceMatrix) else assemble_impedance_matrix(s)


class LoadedEfficiency:
    """Efficiency of a single-transmitter circuit as a function of passive reactances."""

    def __init__(self, Z: ImpedanceMatrix, R_L: float):
        if len(Z.active_indices) != 1:
            raise DimensionMismatch("the oracle needs exactly one active node")
        if not R_L > 0:
            raise NonPositiveLoad(f"load resistance must be positive, got {R_L}")
        self.Z = Z.Z
        self.R = Z.Z.real
        self.R_L = R_L
        self.free = list(Z.passive_indices)
        self.source = Z.active_indices[0]
        self.calls = 0

    @property
    def dims(self) -> int:
        return len(self.free)

    def resonance(self) -> np.ndarray:
        return -np.diag(self.Z)[self.free].imag

    def __call__(self, X) -> np.ndarray:
        """Efficiency for each row of ``X`` (shape ``(K, dims)``)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        K, N = X.shape[0], self.Z.shape[0]
        Zl = np.broadcast_to(self.Z, (K, N, N)).copy()
        idx = np.asarray(self.free)
        Zl[:, idx, idx] += 1j * X
        Zl[:, -1, -1] += self.R_L
        v = np.zeros((K, N, 1), dtype=complex)
        v[:, self.source, 0] = 1.0
        i = np.linalg.solve(Zl, v)[..., 0]
        loss = np.einsum("ki,ij,kj->k", i.conj(), self.R, i).real
        load = self.R_L * np.abs(i[:, -1]) ** 2
        self.calls += K
        return load / (loss + load)


def _grid(center, half, resolution):
    axes = [np.linspace(c - h, c + h, resolution) for c, h in zip(center, half)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _nelder_mead(f, x0, scale):
    res = minimize(lambda x: -f(x)[0], x0, method="Nelder-Mead",
                   options={"initial_simplex": x0 + np.vstack([np.zeros_like(x0),
                                                               np.diag(scale)]),
                            "xatol": 1e-12 * max(1.0, float(np.max(np.abs(x0)))),
                            "fatol": NM_FATOL, "maxiter": 4000 * len(x0),
                            "maxfev": 8000 * len(x0)})
    return res.x, -res.fun


def oracle_passive_search(s, R_L: float, resolution: int = 41, mode: str = "grid",
                          refinements: int = 2, polish: bool = True,
                          starts: int = MULTISTART_COUNT, seed: int = 0) -> OracleResult:
    """Search passive and receiver reactances for maximum efficiency.

    ``mode="grid"`` scans ``resolution`` points per axis over the
    resonance reactance +-50%, then zooms in ``refinements`` times by 10x
    around the incumbent; ``polish`` finishes with a simplex descent.
    ``mode="multistart"`` runs simplex descents from ``starts`` random
    points within +-20% of resonance.
    """
    Z = _matrix(s)
    f = LoadedEfficiency(Z, R_L)
    res0 = f.resonance()
    width = GRID_HALF_WIDTH * np.maximum(np.abs(res0), 1e-9)

    if mode == "grid":
        if f.dims > GRID_MAX_DIMS:
            raise TooManyDimensions(f"{f.dims} free reactances; grid mode allows {GRID_MAX_DIMS}")
        if resolution < 3:
            raise ValueError("resolution must be at least 3")
        center, half, history = res0, width, []
        best_x, best_eta = center, -1.0
        for _ in range(refinements + 1):
            X = _grid(center, half, resolution)
            eta = f(X)
            k = int(np.argmax(eta))
            if eta[k] > best_eta:
                best_x, best_eta = X[k], float(eta[k])
            history.append(best_eta)
            center, half = best_x, half / GRID_REFINE
        if polish:
            x, e = _nelder_mead(f, best_x, half * GRID_REFINE)
            if e > best_eta:
                best_x, best_eta = x, e
            history.append(best_eta)
        method = OracleMethod.GRID
    elif mode == "multistart":
        rng = np.random.default_rng(seed)
        best_x, best_eta, history = res0, float(f(res0)[0]), []
        for _ in range(starts):
            x0 = res0 * (1 + rng.uniform(-MULTISTART_SPREAD, MULTISTART_SPREAD, f.dims))
            x, e = _nelder_mead(f, x0, 0.05 * width)
            if e > best_eta:
                best_x, best_eta = x, e
            history.append(best_eta)
        method = OracleMethod.MULTISTART
    else:
        raise ValueError(f"unknown oracle mode {mode!r}")

    if not np.isfinite(best_eta) or best_eta <= 0:
        raise Infeasible("no loading transfers any power")
    return OracleResult(best_eta, np.asarray(best_x), method, f.calls, history)


def siso_closed_form(Z) -> SISOResult:
    """Textbook optimum of a two-loop link: ``eta = U^2 / (1 + sqrt(1 + U^2))^2``."""
    Z = _matrix(Z)
    if Z.n_nodes != 2:
        raise DimensionMismatch(f"closed form needs a 2x2 system, got {Z.n_nodes} nodes")
    R1, R2 = Z.Z[0, 0].real, Z.Z[1, 1].real
    z12 = Z.Z[0, 1]
    r_out = R2 - z12.real ** 2 / R1
    U2 = abs(z12) ** 2 / (R1 * r_out)
    root = math.sqrt(1 + U2)
    return SISOResult(U2 / (1 + root) ** 2, r_out * root, U2)


def siso_efficiency(Z, R_L: float) -> float:
    """Best two-loop efficiency at a fixed load resistance (receiver reactance tuned)."""
    Z = _matrix(Z)
    if Z.n_nodes != 2:
        raise DimensionMismatch(f"closed form needs a 2x2 system, got {Z.n_nodes} nodes")
    R1, R2 = Z.Z[0, 0].real, Z.Z[1, 1].real
    z12 = Z.Z[0, 1]
    w = R2 - z12.real ** 2 / R1
    s = abs(z12) ** 2 / R1
    loss_ratio = ((w + R_L) ** 2 + w * s) / (s * R_L)
    return 1.0 / (1.0 + loss_ratio)
