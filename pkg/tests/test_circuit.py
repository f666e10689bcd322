import math

import numpy as np
import pytest

from conftest import arc_matrix, coax_matrix, random_passive_matrix
from wptopt.circuit import (
    ImpedanceMatrix,
    apply_loading,
    eigen_signature,
    impedance_from_dict,
    impedance_to_dict,
    load_impedance,
    pim_eigensystem_analytic,
    pim_split,
    port_impedance_matrix,
    remove_nodes,
    save_impedance,
    terminate_nodes,
    validate_positive_real,
)
from wptopt.errors import (
    IndexOutOfRange,
    InvalidScenario,
    NonPositiveLoad,
    ZeroCoupling,
)


def test_coaxial_siso_coupling_sign():
    Z = coax_matrix(0)
    assert Z.Z.shape == (2, 2)
    assert Z.Z[0, 1].imag > 0


def test_assembled_matrix_is_exactly_symmetric_and_passive():
    Z = arc_matrix(1)
    assert Z.Z.shape == (3, 3)
    assert np.array_equal(Z.Z, Z.Z.T)
    assert np.linalg.eigvalsh(Z.Z.real).min() > 0
    assert validate_positive_real(Z).passed


def test_partitions():
    Z = coax_matrix(2)
    assert Z.Z_a.shape == (1, 1) and Z.Z_p.shape == (2, 2)  # receiver kept apart
    assert Z.z_r == Z.Z[-1, -1]
    assert np.array_equal(Z.z_tr, Z.Z[:-1, -1])
    assert np.array_equal(Z.Z_t, Z.Z[:-1, :-1])


def test_validation_reports():
    ident = validate_positive_real(np.eye(3) + 0j)
    assert ident.passed and ident.min_eigenvalue == pytest.approx(1.0)
    bad = np.array([[1.0, 1.5], [1.5, 1.0]]) + 0j  # |R12| > sqrt(R1 R2)
    assert not validate_positive_real(bad).passed


def test_loading():
    Z = coax_matrix(1)
    L = apply_loading(Z, 0.0, 1.0)
    expect = np.array(Z.Z)
    expect[-1, -1] += 1.0
    assert np.array_equal(L.Zhat, expect)
    C, f = 100e-12, 13.56e6
    x = np.zeros(3)
    x[1] = -1 / (2 * math.pi * f * C)
    L2 = apply_loading(Z, x, 2.0)
    assert L2.Zhat[1, 1] == pytest.approx(Z.Z[1, 1] + 1j * x[1])
    with pytest.raises(NonPositiveLoad):
        apply_loading(Z, 0.0, 0.0)


def test_pims_sum_to_loaded_resistance(rng):
    Z = random_passive_matrix(rng, 6)
    L = apply_loading(Z, rng.normal(size=6), 0.7)
    total = sum(port_impedance_matrix(L, n).T for n in range(6))
    expect = Z.Z.real + np.diag([0, 0, 0, 0, 0, 0.7])
    assert np.abs(total - expect).max() < 1e-12 * np.abs(expect).max()


def test_pim_power_balance(rng):
    Z = random_passive_matrix(rng, 5)
    L = apply_loading(Z, 0.0, 2.0)
    i = rng.normal(size=5) + 1j * rng.normal(size=5)
    v = L.Zhat @ i
    for n in range(5):
        T = port_impedance_matrix(L, n).T
        assert np.allclose(T, T.conj().T, atol=1e-14)
        assert np.vdot(i, T @ i).real == pytest.approx((np.conj(i[n]) * v[n]).real, rel=1e-12)


def test_decoupled_pim_is_single_entry():
    Z = ImpedanceMatrix(np.diag([1.0 + 2j, 3.0 + 1j, 2.0 + 0j]), [0], [1, 2], 1.0)
    T = port_impedance_matrix(Z, 1).T
    expect = np.zeros((3, 3))
    expect[1, 1] = 3.0
    assert np.array_equal(T, expect)
    eig = pim_eigensystem_analytic(Z, 1)
    assert eig.lambda_plus == 3.0 and eig.lambda_minus == 0.0 and not eig.analytic
    with pytest.raises(ZeroCoupling):
        pim_eigensystem_analytic(Z, 1, strict=True)


def test_loading_only_changes_receiver_pim(rng):
    Z = random_passive_matrix(rng, 4)
    L = apply_loading(Z, rng.normal(size=4), 3.0)
    for n in range(3):
        # reactive loading sits on the diagonal and only adds imaginary parts there
        assert np.allclose(port_impedance_matrix(L, n).T, port_impedance_matrix(Z, n).T,
                           atol=1e-15)
    diff = port_impedance_matrix(L, 3).T - port_impedance_matrix(Z, 3).T
    assert diff[3, 3] == pytest.approx(3.0) and np.count_nonzero(np.round(diff, 14)) == 1


def test_analytic_toy_eigenvalues():
    Z = ImpedanceMatrix(np.array([[1.0, 1j], [1j, 1.0]]), [0], [1], 1.0)
    eig = pim_eigensystem_analytic(Z, 0)
    assert eig.lambda_plus == pytest.approx(0.5 * (1 + math.sqrt(2)), rel=1e-14)
    assert eig.lambda_minus == pytest.approx(0.5 * (1 - math.sqrt(2)), rel=1e-14)
    num = np.linalg.eigvalsh(port_impedance_matrix(Z, 0).T)
    assert num == pytest.approx([eig.lambda_minus, eig.lambda_plus], rel=1e-12)


@pytest.mark.parametrize("N", [3, 5, 12, 20])
def test_analytic_matches_numeric(rng, N):
    Z = random_passive_matrix(rng, N)
    for n in range(N):
        T = port_impedance_matrix(Z, n)
        eig = pim_eigensystem_analytic(Z, n)
        vals = np.linalg.eigvalsh(T.T)
        assert eig.lambda_minus == pytest.approx(vals[0], rel=1e-9)
        assert eig.lambda_plus == pytest.approx(vals[-1], rel=1e-9)
        for lam, v in ((eig.lambda_minus, eig.v_minus), (eig.lambda_plus, eig.v_plus)):
            assert np.linalg.norm(T.T @ v - lam * v) < 1e-10 * np.linalg.norm(T.T)
        assert eigen_signature(T) == (1, 1, N - 2)


def test_split_reconstructs(rng):
    Z = random_passive_matrix(rng, 6)
    T = port_impedance_matrix(Z, 2)
    tp, tm = pim_split(T)
    norm = np.linalg.norm(T.T)
    assert np.linalg.norm(T.T - (tp - tm)) / norm < 1e-12
    for part in (tp, tm):
        vals = np.linalg.eigvalsh(part)
        assert vals[0] >= -1e-12 * norm
        assert vals[-2] < 1e-10 * norm


def test_port_index_checked():
    with pytest.raises(IndexOutOfRange):
        port_impedance_matrix(coax_matrix(0), 2)


def test_remove_and_terminate():
    Z = coax_matrix(2)
    R = remove_nodes(Z, [1])
    assert R.n_nodes == 3 and R.Z[1, 1] == Z.Z[2, 2]
    # a huge series reactance is indistinguishable from an open circuit
    T = terminate_nodes(Z, {1: 1e12})
    assert np.allclose(T.Z, R.Z, rtol=0, atol=1e-9)
    with pytest.raises(InvalidScenario):
        remove_nodes(Z, [3])


def test_impedance_roundtrip(tmp_path):
    Z = arc_matrix(2)
    path = tmp_path / "z.json"
    save_impedance(Z, path)
    back = load_impedance(path)
    assert np.array_equal(back.Z, Z.Z)
    assert back.active_indices == Z.active_indices and back.omega == Z.omega
    data = impedance_to_dict(Z)
    data["z"][0][1] = [5.0, 5.0]
    with pytest.raises(InvalidScenario):
        impedance_from_dict(data)
