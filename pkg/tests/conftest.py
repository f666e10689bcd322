from functools import lru_cache

import numpy as np
import pytest

from wptopt.circuit import ImpedanceMatrix, assemble_impedance_matrix
from wptopt.geometry import reference_arc, reference_coaxial_stack, reference_metasurface


@lru_cache(maxsize=None)
def arc_matrix(n_relays: int, arc_angle: float | None = None) -> ImpedanceMatrix:
    s = reference_arc(n_relays) if arc_angle is None else reference_arc(n_relays, arc_angle)
    return assemble_impedance_matrix(s)


@lru_cache(maxsize=None)
def coax_matrix(n_passive: int, angle: float = 0.0) -> ImpedanceMatrix:
    return assemble_impedance_matrix(reference_coaxial_stack(n_passive, angle))


@lru_cache(maxsize=None)
def metasurface_matrix(n: int, distance: float) -> ImpedanceMatrix:
    return assemble_impedance_matrix(reference_metasurface(n, distance))


def random_passive_matrix(rng: np.random.Generator, n: int, omega: float = 1.0,
                          active=(0,)) -> ImpedanceMatrix:
    """Symmetric Z with positive-definite real part and generic coupling."""
    A = rng.normal(size=(n, n))
    R = A @ A.T / n + 0.5 * np.eye(n)
    B = rng.normal(size=(n, n)) * 5
    X = B + B.T
    return ImpedanceMatrix(R + 1j * X, list(active),
                           [k for k in range(n) if k not in active], omega)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(mod.RESULTS):
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
