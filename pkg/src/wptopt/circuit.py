"""Impedance matrices, loading and port impedance matrices (PIMs).

Node indices are zero-based throughout; the receiver is always the last
node. A PIM ``T_n`` is the Hermitian matrix whose quadratic form
``i^H T_n i`` equals ``Re(conj(i_n) v_n)``, i.e. twice the real power
entering port ``n``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import (
    IndexOutOfRange,
    InvalidScenario,
    NonPositiveLoad,
    PassivityViolation,
    ZeroCoupling,
)
from .geometry import Scenario, mutual_impedance_matrix, self_impedance

ZERO_EIG_RTOL = 1e-10


@dataclass(frozen=True)
class ImpedanceMatrix:
    """Unloaded N x N impedance matrix with its node partition."""

    Z: np.ndarray
    active_indices: tuple
    passive_indices: tuple
    omega: float

    def __post_init__(self):
        Z = np.array(self.Z, dtype=complex)
        if Z.ndim != 2 or Z.shape[0] != Z.shape[1]:
            raise InvalidScenario("impedance matrix must be square")
        n = Z.shape[0]
        act = tuple(int(i) for i in self.active_indices)
        pas = tuple(int(i) for i in self.passive_indices)
        if sorted(act + pas) != list(range(n)):
            raise InvalidScenario("active and passive indices must partition the nodes")
        if n - 1 not in pas:
            raise InvalidScenario("the last node must be the (passive) receiver")
        if not act:
            raise InvalidScenario("at least one active node is required")
        Z.setflags(write=False)
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "active_indices", act)
        object.__setattr__(self, "passive_indices", pas)

    @property
    def n_nodes(self) -> int:
        return self.Z.shape[0]

    @property
    def receiver_index(self) -> int:
        return self.n_nodes - 1

    @property
    def transmitter_indices(self) -> tuple:
        return tuple(range(self.n_nodes - 1))

    @property
    def resistance(self) -> np.ndarray:
        """Real part Z' (loss resistance matrix)."""
        return self.Z.real

    def block(self, rows, cols) -> np.ndarray:
        return self.Z[np.ix_(list(rows), list(cols))]

    # partitions of the unloaded matrix
    @property
    def Z_a(self):
        return self.block(self.active_indices, self.active_indices)

    @property
    def Z_p(self):
        p = self.passive_indices[:-1]
        return self.block(p, p)

    @property
    def Z_ap(self):
        return self.block(self.active_indices, self.passive_indices[:-1])

    @property
    def z_ar(self):
        return self.Z[list(self.active_indices), -1]

    @property
    def z_pr(self):
        return self.Z[list(self.passive_indices[:-1]), -1]

    @property
    def z_r(self) -> complex:
        return complex(self.Z[-1, -1])

    @property
    def Z_t(self):
        return self.Z[:-1, :-1]

    @property
    def z_tr(self):
        return self.Z[:-1, -1]

    def with_partition(self, active_indices) -> "ImpedanceMatrix":
        act = tuple(sorted(active_indices))
        pas = tuple(i for i in range(self.n_nodes) if i not in act)
        return ImpedanceMatrix(self.Z, act, pas, self.omega)

    def all_active(self) -> "ImpedanceMatrix":
        return self.with_partition(range(self.n_nodes - 1))


@dataclass(frozen=True)
class ValidationReport:
    min_eigenvalue: float
    symmetry_residual: float
    passed: bool


@dataclass(frozen=True)
class LoadedImpedanceMatrix:
    """``Zhat = Z + j Diag(x) + Diag(0, ..., 0, R_L)``."""

    base: ImpedanceMatrix
    x: np.ndarray
    R_L: float
    Zhat: np.ndarray = field(repr=False)

    @property
    def n_nodes(self) -> int:
        return self.base.n_nodes


@dataclass(frozen=True)
class PortImpedanceMatrix:
    T: np.ndarray
    port: int
    loaded: bool


@dataclass(frozen=True)
class PIMEigensystem:
    """Nonzero eigenpairs of a PIM; ``lambda_minus < 0 < lambda_plus``.

    ``analytic`` is False when the closed form was not applicable (an
    uncoupled port) and the pairs come from the decoupled limit instead.
    """

    lambda_minus: float
    lambda_plus: float
    v_minus: np.ndarray
    v_plus: np.ndarray
    analytic: bool = True


# ---------------------------------------------------------------------------


def validate_positive_real(Z) -> ValidationReport:
    """Check symmetry and positive-definiteness of the real part (report only)."""
    Zm = Z.Z if isinstance(Z, ImpedanceMatrix) else np.asarray(Z, dtype=complex)
    sym = float(np.linalg.norm(Zm - Zm.T))
    resistance = 0.5 * (Zm.real + Zm.real.T)
    min_eig = float(np.linalg.eigvalsh(resistance)[0])
    tol = 1e-12 * max(1.0, np.linalg.norm(Zm))
    return ValidationReport(min_eig, sym, bool(min_eig > 0 and sym <= tol))


def assemble_impedance_matrix(s: Scenario) -> ImpedanceMatrix:
    """Self impedances on the diagonal, retarded mutual impedances off it."""
    Z = mutual_impedance_matrix(s.loops, s.frequency)
    for i, loop in enumerate(s.loops):
        Z[i, i] = self_impedance(loop, s.frequency, s.conductivity,
                                 s.include_radiation_resistance)
    out = ImpedanceMatrix(Z, s.active_indices, s.passive_indices, s.omega)
    report = validate_positive_real(out)
    if not report.passed:
        raise PassivityViolation(
            f"Re(Z) is not positive definite (min eigenvalue {report.min_eigenvalue:.3e})"
        )
    return out


def apply_loading(Z: ImpedanceMatrix, x, R_L: float) -> LoadedImpedanceMatrix:
    """Add series reactances ``x`` (positive = inductive) and the load ``R_L``."""
    if not R_L > 0:
        raise NonPositiveLoad(f"load resistance must be positive, got {R_L}")
    x = np.broadcast_to(np.asarray(x, dtype=float), (Z.n_nodes,)).copy()
    Zhat = Z.Z + 1j * np.diag(x)
    Zhat[-1, -1] += R_L
    Zhat.setflags(write=False)
    x.setflags(write=False)
    return LoadedImpedanceMatrix(Z, x, float(R_L), Zhat)


def _check_port(n, size):
    if not 0 <= n < size:
        raise IndexOutOfRange(f"port {n} outside 0..{size - 1}")


def port_impedance_matrix(Z, n: int) -> PortImpedanceMatrix:
    """``T_n = (E_n Zhat + Zhat^H E_n) / 2``.

    Accepts a loaded or an unloaded matrix; only the receiver PIM differs.
    """
    loaded = isinstance(Z, LoadedImpedanceMatrix)
    Zm = Z.Zhat if loaded else Z.Z
    size = Zm.shape[0]
    _check_port(n, size)
    T = np.zeros((size, size), dtype=complex)
    T[n, :] += 0.5 * Zm[n, :]
    T[:, n] += 0.5 * Zm[n, :].conj()
    T.setflags(write=False)
    return PortImpedanceMatrix(T, n, loaded)


def _eigensystem_from_pim(T: np.ndarray, n: int, strict: bool = False) -> PIMEigensystem:
    # T has nonzeros only in row/column n: R on the diagonal and w/2 elsewhere
    resistance = float(T[n, n].real)
    w = 2.0 * T[:, n].copy()
    w[n] = 0.0
    s2 = float(np.vdot(w, w).real)
    size = T.shape[0]
    if s2 == 0.0:
        if strict:
            raise ZeroCoupling(f"port {n} is not coupled to any other node")
        e_n = np.zeros(size, dtype=complex)
        e_n[n] = 1.0
        other = np.zeros(size, dtype=complex)
        other[(n + 1) % size] = 1.0
        return PIMEigensystem(0.0, resistance, other, e_n, analytic=False)
    root = np.hypot(np.sqrt(s2), resistance)
    lam_plus = 0.5 * (resistance + root)
    # cancellation-free form of (R - root) / 2
    lam_minus = -0.5 * s2 / (resistance + root) if resistance > 0 else 0.5 * (resistance - root)
    vectors = []
    for lam in (lam_minus, lam_plus):
        v = w / (2.0 * lam)
        v[n] = 1.0
        vectors.append(v / np.linalg.norm(v))
    return PIMEigensystem(float(lam_minus), float(lam_plus), vectors[0], vectors[1])


def pim_eigensystem_analytic(Z, n: int, strict: bool = False) -> PIMEigensystem:
    """Closed-form nonzero eigenpairs of the port-``n`` PIM.

    ``lambda_pm = (R_n +- sqrt(S_n^2 + R_n^2)) / 2`` with
    ``S_n^2 = sum_m |Z_nm|^2`` over the off-diagonal entries of row ``n``.
    The eigenvectors have entries ``conj(Z_nm) / (2 lambda)`` and 1 at ``n``
    (normalized). Accepts an :class:`ImpedanceMatrix`,
    :class:`LoadedImpedanceMatrix` or :class:`PortImpedanceMatrix`.
    """
    if isinstance(Z, PortImpedanceMatrix):
        _check_port(n, Z.T.shape[0])
        if n != Z.port:
            raise IndexOutOfRange(f"PIM belongs to port {Z.port}, not {n}")
        return _eigensystem_from_pim(Z.T, n, strict)
    return _eigensystem_from_pim(port_impedance_matrix(Z, n).T, n, strict)


def pim_split(T: PortImpedanceMatrix, eig: PIMEigensystem | None = None):
    """Positive and negative semidefinite rank-1 parts with ``T = T+ - T-``."""
    eig = eig or _eigensystem_from_pim(T.T, T.port)
    vp, vm = eig.v_plus, eig.v_minus
    t_plus = eig.lambda_plus * np.outer(vp, vp.conj()) / np.vdot(vp, vp).real
    t_minus = -eig.lambda_minus * np.outer(vm, vm.conj()) / np.vdot(vm, vm).real
    return t_plus, t_minus


def eigen_signature(T: PortImpedanceMatrix, rtol: float = ZERO_EIG_RTOL) -> tuple[int, int, int]:
    """Counts of (positive, negative, zero) eigenvalues."""
    vals = np.linalg.eigvalsh(T.T)
    scale = np.abs(vals).max()
    zero = np.abs(vals) < rtol * scale
    return int(((vals > 0) & ~zero).sum()), int(((vals < 0) & ~zero).sum()), int(zero.sum())


# ---------------------------------------------------------------------------
# network reductions


def remove_nodes(Z: ImpedanceMatrix, nodes) -> ImpedanceMatrix:
    """Open-circuit ``nodes``: they carry no current and drop out entirely."""
    drop = set(nodes)
    if Z.receiver_index in drop:
        raise InvalidScenario("the receiver cannot be removed")
    keep = [i for i in range(Z.n_nodes) if i not in drop]
    remap = {old: new for new, old in enumerate(keep)}
    act = [remap[i] for i in Z.active_indices if i in remap]
    pas = [remap[i] for i in Z.passive_indices if i in remap]
    return ImpedanceMatrix(Z.block(keep, keep), act, pas, Z.omega)


def terminate_nodes(Z: ImpedanceMatrix, reactances: Mapping[int, float]) -> ImpedanceMatrix:
    """Close ``nodes`` with fixed reactances and eliminate them (Kron reduction)."""
    fixed = sorted(reactances)
    if Z.receiver_index in fixed:
        raise InvalidScenario("the receiver cannot be eliminated")
    keep = [i for i in range(Z.n_nodes) if i not in reactances]
    Zff = Z.block(fixed, fixed) + 1j * np.diag([reactances[i] for i in fixed])
    Zkf = Z.block(keep, fixed)
    reduced = Z.block(keep, keep) - Zkf @ np.linalg.solve(Zff, Zkf.T)
    reduced = 0.5 * (reduced + reduced.T)
    remap = {old: new for new, old in enumerate(keep)}
    act = [remap[i] for i in Z.active_indices if i in remap]
    pas = [remap[i] for i in Z.passive_indices if i in remap]
    return ImpedanceMatrix(reduced, act, pas, Z.omega)


# ---------------------------------------------------------------------------
# serialization


def impedance_to_dict(Z: ImpedanceMatrix) -> dict:
    return {
        "omega": Z.omega,
        "active_indices": list(Z.active_indices),
        "passive_indices": list(Z.passive_indices),
        "receiver_index": Z.receiver_index,
        "z": [[[float(v.real), float(v.imag)] for v in row] for row in Z.Z],
    }


def impedance_from_dict(data: dict, sym_rtol: float = 1e-12) -> ImpedanceMatrix:
    """Import an externally computed matrix; it is symmetrized after a check."""
    try:
        raw = np.asarray(data["z"], dtype=float)
        Z = raw[..., 0] + 1j * raw[..., 1]
        omega = float(data["omega"])
        act = data["active_indices"]
        pas = data.get("passive_indices")
    except (KeyError, IndexError, ValueError) as exc:
        raise InvalidScenario(f"malformed impedance matrix document: {exc}") from None
    if pas is None:
        pas = [i for i in range(Z.shape[0]) if i not in set(act)]
    if "receiver_index" in data and int(data["receiver_index"]) != Z.shape[0] - 1:
        raise InvalidScenario("the receiver must be the last node")
    if np.linalg.norm(Z - Z.T) > sym_rtol * np.linalg.norm(Z):
        raise InvalidScenario("impedance matrix is not symmetric (reciprocity)")
    return ImpedanceMatrix(0.5 * (Z + Z.T), act, pas, omega)


def save_impedance(Z: ImpedanceMatrix, path) -> None:
    Path(path).write_text(json.dumps(impedance_to_dict(Z)))


def load_impedance(path) -> ImpedanceMatrix:
    with open(path) as fh:
        return impedance_from_dict(json.load(fh))
