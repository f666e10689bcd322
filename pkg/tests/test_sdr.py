import csv
import warnings

import numpy as np
import pytest

from conftest import arc_matrix, coax_matrix, random_passive_matrix
from wptopt.circuit import ImpedanceMatrix, apply_loading
from wptopt.errors import Infeasible, NotTightWarning, RankDeficient, ZeroVector
from wptopt.sdp import LowRank, solve_sdp
from wptopt.sdr import (
    SolverStatus,
    currents_from_vector,
    dump_triples,
    embedding_from_dense,
    extract_rank1,
    kkt_report,
    real_embedding,
    solve_sdr,
    tightness_error,
    vector_from_currents,
)
from wptopt.synthesis import closed_form_load


def embed(Z, R_L=None):
    R_L = closed_form_load(Z).R_L_a if R_L is None else R_L
    L = apply_loading(Z, 0.0, R_L)
    return real_embedding(L), L


def solve(Z, **kw):
    e, L = embed(Z)
    return solve_sdr(e, zhat=L.Zhat, **kw), e


# -- embedding ---------------------------------------------------------------


def test_dimensions():
    e, _ = embed(coax_matrix(0))
    assert e.M == 3 and e.Q0.shape == (3, 3)
    nz = np.argwhere(e.Rmat)
    assert nz.tolist() == [[1, 1]]


def test_q0_is_sum_of_port_matrices(rng):
    Z = random_passive_matrix(rng, 6)
    e, _ = embed(Z, 0.8)
    total = sum(e.Qn)
    assert np.abs(total - e.Q0).max() < 1e-12 * np.abs(e.Q0).max()


def test_factored_matches_dense_embedding(rng):
    Z = random_passive_matrix(rng, 5)
    e, L = embed(Z, 1.3)
    for Qa, Qd in zip(e.Qn, embedding_from_dense(L)):
        assert np.abs(Qa - Qd).max() < 1e-12 * np.abs(Qd).max()


def test_quadratic_forms_match_complex_arithmetic(rng):
    Z = random_passive_matrix(rng, 4)
    e, L = embed(Z, 0.5)
    i = rng.normal(size=4) + 1j * rng.normal(size=4)
    c = vector_from_currents(i)
    i = currents_from_vector(c, 4)  # receiver current made real
    v = L.Zhat @ i
    loss = 0.5 * np.vdot(i, L.Zhat.real @ i).real
    assert c @ e.Q0 @ c == pytest.approx(loss, rel=1e-12)
    for n in range(4):
        assert c @ e.Q(n) @ c == pytest.approx(0.5 * (np.conj(i[n]) * v[n]).real, rel=1e-11)


# -- rank-1 extraction --------------------------------------------------------


def test_extract_exact_rank_one():
    # M = 3: row 1 holds the receiver's real current
    c = np.array([0.3, 1.2, -2.0])
    assert np.allclose(extract_rank1(np.outer(c, c)), c, atol=1e-12)
    c2 = np.array([0.3, -1.2, 2.0])
    assert np.allclose(extract_rank1(np.outer(c2, c2)), -c2, atol=1e-12)
    assert tightness_error(np.outer(c, c), c) < 1e-14


def test_identity_is_maximally_loose():
    c = extract_rank1(np.eye(2))
    assert np.linalg.norm(c) == pytest.approx(1.0)
    assert tightness_error(np.eye(2), np.array([1.0, 0.0])) == pytest.approx(1.0)
    with pytest.raises(RankDeficient):
        extract_rank1(np.zeros((3, 3)))
    with pytest.raises(ZeroVector):
        tightness_error(np.eye(2), np.zeros(2))


# -- solving ------------------------------------------------------------------


def test_ipm_agrees_with_cvxpy():
    pytest.importorskip("cvxpy")
    Z = arc_matrix(1)
    e, L = embed(Z)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a = solve_sdr(e, zhat=L.Zhat)
        b = solve_sdr(e, zhat=L.Zhat, backend="cvxpy", tol=1e-8)
    assert a.objective == pytest.approx(b.objective, rel=1e-6)


def test_siso_p1_is_tight_with_kkt_certificate():
    sol, e = solve(arc_matrix(1))
    assert sol.tight and sol.solver_status is SolverStatus.OPTIMAL
    assert sol.epsilon < 1e-8
    rep = kkt_report(sol, e)
    assert rep.complementary_slackness < 1e-8
    assert rep.rank_condition and rep.dual_zero_eigenvalues == 1
    assert rep.duality_gap < 1e-7
    assert rep.passed()


def test_solution_invariants():
    sol, e = solve(coax_matrix(2))
    C = sol.C_star
    assert np.linalg.eigvalsh(C)[0] >= -1e-9 * np.trace(C)
    assert abs(np.vdot(e.Rmat, C) - 1) < 1e-8
    for n in e.passive_indices:
        assert abs(np.vdot(e.Q(n), C)) < 1e-8
    for n in e.active_indices:
        assert np.vdot(e.Q(n), C) > -1e-8
    assert sol.c_star[e.n_nodes - 1] >= 0


def test_tight_solution_satisfies_original_constraints():
    sol, e = solve(arc_matrix(3))
    c = sol.c_star
    assert sol.epsilon < 1e-8
    assert abs(c @ e.Rmat @ c - 1) < 1e-7
    for n in e.passive_indices:
        assert abs(c @ e.Q(n) @ c) < 1e-7


def test_uncoupled_receiver_is_infeasible():
    Z = np.diag([1.0 + 1j, 2.0 + 0.5j]).astype(complex)
    with pytest.raises(Infeasible):
        solve(ImpedanceMatrix(Z, [0], [1], 1.0))


def test_scaling_invariance():
    e, L = embed(arc_matrix(1))
    N = e.n_nodes
    b = np.zeros(N + 1)
    b[-1] = 1.0
    ineq = np.zeros(N + 1, bool)
    ineq[0] = True
    etas = []
    for k in (1.0, 37.0):
        cons = [LowRank(f.factors, f.weights * k) for f in e.factors]
        r = e.receiver_factor()
        cons.append(LowRank(r.factors, r.weights * k))
        res = solve_sdp(e.Q0 * k, cons, b, ineq)
        etas.append(1 / res.primal_objective)
    assert etas[0] == pytest.approx(etas[1], rel=1e-10)


def test_passive_never_beats_active():
    Z = coax_matrix(2)
    passive, _ = solve(Z)
    active, _ = solve(Z.all_active())
    assert passive.eta_relax <= active.eta_relax + 1e-9


def test_not_tight_is_flagged(monkeypatch):
    import wptopt.sdr as sdr

    monkeypatch.setattr(sdr, "TIGHTNESS_THRESHOLD", 0.0)
    with pytest.warns(NotTightWarning):
        sol, _ = solve(arc_matrix(0))
    assert sol.solver_status is SolverStatus.NOT_TIGHT


def test_dump_triples(tmp_path):
    e, _ = embed(coax_matrix(0))
    path = tmp_path / "t.csv"
    dump_triples(e, path)
    rows = list(csv.DictReader(open(path)))
    assert {int(r["matrix"]) for r in rows} == {0, 1, 2, 3}
    rebuilt = np.zeros((3, 3))
    for r in rows:
        if r["matrix"] == "0":
            rebuilt[int(r["row"]), int(r["col"])] = float(r["value"])
    rebuilt = rebuilt + np.triu(rebuilt, 1).T
    assert np.allclose(rebuilt, e.Q0, rtol=1e-15, atol=0)
