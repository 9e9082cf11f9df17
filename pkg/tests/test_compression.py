import numpy as np
import pytest
import scipy.integrate
import scipy.linalg as sla

import snaplqr as sl
from snaplqr.compression import ProjectionMatrix

from _oracles import ctrb, random_stable_system


def _decay_record(rng, n=4, m=1, T=4.0, N=20, substeps=12, noise=True, seed=5):
    A, B = random_stable_system(rng, n, m)
    sys = sl.LtiSystem(A=A, B=B)
    sig = None
    if noise:
        sig = sl.exploration_noise(8, 0.8, (0.3, 5.0), (0.0, T), seed=seed,
                                   num_inputs=m)
    rec = sl.simulate(sys, sig, rng.standard_normal(n),
                      np.linspace(0.0, T, N + 1), substeps=substeps)
    return sys, rec


# ---------------------------------------------------------------- projections
def test_rank_one_snapshots():
    X = np.outer([1.0, 0.0, 0.0], [2.0, -1.0, 0.5])
    proj = sl.fit_projection(X, 1)
    assert np.allclose(np.abs(proj.P), [[1.0, 0.0, 0.0]], atol=1e-12)
    assert np.linalg.norm(X - proj.P.T @ (proj.P @ X)) < 1e-12


def test_svd_tail_energy_identity(rng):
    X = rng.standard_normal((6, 40))
    proj = sl.fit_projection(X, 3)
    resid = np.sum((X - proj.P.T @ (proj.P @ X)) ** 2)
    s = sla.svd(X, compute_uv=False)  # independent full decomposition
    assert resid == pytest.approx(np.sum(s[3:] ** 2), rel=1e-10)


def test_fit_projection_warns_beyond_rank():
    X = np.outer([1.0, 2.0, 0.0], np.arange(1.0, 6.0))
    with pytest.warns(UserWarning, match="numerical rank"):
        sl.fit_projection(X, 2)


def test_projection_pools_records(rng):
    _, rec1 = _decay_record(rng, seed=1)
    _, rec2 = _decay_record(rng, seed=2)
    pooled = sl.fit_projection([rec1, rec2], 2)
    X = np.hstack([rec1.coarse_states()[:, :-1], rec2.coarse_states()[:, :-1]])
    direct = sl.fit_projection(X, 2)
    assert np.allclose(pooled.P, direct.P, atol=1e-12)


def test_projection_validation():
    with pytest.raises(ValueError, match="orthonormal"):
        ProjectionMatrix(P=np.array([[1.0, 1.0]]))
    with pytest.raises(ValueError, match="annihilate"):
        ProjectionMatrix(P=np.array([[1.0, 0.0]]), deflation_vec=[1.0, 0.0])


def test_projection_json_roundtrip(tmp_path, rng):
    _, rec = _decay_record(rng)
    proj = sl.deflate_semistable(rec, np.ones(4), 2)
    path = tmp_path / "proj.json"
    proj.to_json(path)
    back = ProjectionMatrix.from_json(path)
    assert np.allclose(back.P, proj.P)
    assert np.allclose(back.deflation_vec, proj.deflation_vec)
    assert np.allclose(back.singular_values, proj.singular_values)


# ------------------------------------------------------------------ gramians
def test_gramian_constant_trajectory_is_zero():
    t = np.linspace(0.0, 2.0, 21)
    states = np.tile([[1.0], [2.0]], (1, 21))
    rec = sl.SnapshotRecord(coarse_times=t[::5], fine_times=t, states=states,
                            inputs=np.zeros((1, 21)), x0=[1.0, 2.0])
    gram = sl.empirical_gramian([rec])
    assert np.abs(gram.matrix).max() < 1e-12


def test_gramian_scalar_closed_form():
    a, b = 1.0, 2.0
    T = 20.0 / a
    sys = sl.LtiSystem(A=[[-a]], B=[[b]])
    recs = sl.impulse_responses(sys, [[b]], horizon=T, fine_step=1e-3)
    gram = sl.empirical_gramian(recs)
    xbar = (b / (a * T)) * (1.0 - np.exp(-a * T))
    val, _ = scipy.integrate.quad(lambda t: (b * np.exp(-a * t) - xbar) ** 2, 0.0, T)
    assert gram.matrix[0, 0] == pytest.approx(val, rel=1e-6)


def test_gramian_matches_lyapunov_solution(rng):
    A, B = random_stable_system(rng, 5, 2, margin=0.5)
    sys = sl.LtiSystem(A=A, B=B)
    # the running-mean correction decays like 1/(|Re lambda_slow| T), so the
    # horizon must cover ~150 slow time constants to land below 2% relative
    horizon = 150.0 / np.abs(np.linalg.eigvals(A).real.max())
    recs = sl.impulse_responses(sys, list(B.T), horizon=horizon, fine_step=0.01)
    gram = sl.empirical_gramian(recs)
    exact = sla.solve_continuous_lyapunov(A, -B @ B.T)
    rel = np.linalg.norm(gram.matrix - exact) / np.linalg.norm(exact)
    assert rel < 0.02


def test_gramian_grid_mismatch(rng):
    sys = sl.LtiSystem(A=[[-1.0]], B=[[1.0]])
    r1 = sl.impulse_responses(sys, [[1.0]], horizon=1.0, fine_step=0.01)[0]
    r2 = sl.impulse_responses(sys, [[1.0]], horizon=2.0, fine_step=0.01)[0]
    with pytest.raises(ValueError, match="time grid"):
        sl.empirical_gramian([r1, r2])


def test_projection_from_diag_gramian():
    g = sl.Gramian(matrix=np.diag([3.0, 2.0, 0.0]), horizon=1.0)
    proj = sl.projection_from_gramian(g, n_hat=2)
    span = proj.P.T @ proj.P
    assert np.allclose(span, np.diag([1.0, 1.0, 0.0]), atol=1e-12)


def test_gramian_projection_recovers_reachable_subspace(rng):
    from _oracles import reachable_block_system

    A, B, _ = reachable_block_system(rng, n=7, r=3, m=2)
    exact = sla.solve_continuous_lyapunov(A, -B @ B.T)
    gram = sl.Gramian(matrix=0.5 * (exact + exact.T), horizon=np.inf)
    proj = sl.projection_from_gramian(gram, n_hat=3)
    angles = sla.subspace_angles(proj.P.T, ctrb(A, B))
    assert angles.max() < 1e-6


def test_gramian_projection_empirical_angles(rng):
    from _oracles import reachable_block_system

    A, B, _ = reachable_block_system(rng, n=6, r=3, m=2)
    sys = sl.LtiSystem(A=A, B=B)
    recs = sl.impulse_responses(sys, list(B.T), horizon=60.0, fine_step=0.01)
    gram = sl.empirical_gramian(recs)
    proj = sl.projection_from_gramian(gram, n_hat=3)
    angles = sla.subspace_angles(proj.P.T, ctrb(A, B))
    assert angles.max() < 1e-4


def test_disturbance_gramian_captures_fresh_run(rng):
    from _oracles import reachable_block_system

    A, B, _ = reachable_block_system(rng, n=6, r=3, m=2)
    sys = sl.LtiSystem(A=A, B=B)
    d1 = np.zeros(6)
    d1[:3] = rng.standard_normal(3)
    recs_u = sl.impulse_responses(sys, list(B.T), horizon=40.0, fine_step=0.01)
    recs_x = sl.impulse_responses(sys, [d1], horizon=40.0, fine_step=0.01)
    proj = sl.projection_from_gramian(
        sl.empirical_gramian(recs_u), sl.empirical_gramian(recs_x), n_hat=3
    )
    fresh = sl.simulate(sys, None, d1, np.linspace(0.0, 5.0, 26))
    resid = fresh.states - proj.P.T @ (proj.P @ fresh.states)
    assert np.abs(resid).max() < 1e-6


def test_gramian_requires_zero_input(rng):
    _, rec = _decay_record(rng, noise=True)
    with pytest.raises(ValueError, match="zero-input"):
        sl.empirical_gramian([rec])


# ----------------------------------------------------------------- deflation
def test_deflation_annihilates_ones(rng):
    adj = rng.random((5, 5))
    adj = np.triu(adj, 1)
    adj = adj + adj.T
    L = np.diag(adj.sum(1)) - adj
    sys = sl.LtiSystem(A=-L, B=np.eye(5)[:, :1], semistable_eigvec=np.ones(5))
    sig = sl.exploration_noise(6, 0.5, (0.2, 3.0), (0.0, 4.0), seed=3)
    rec = sl.simulate(sys, sig, rng.standard_normal(5), np.linspace(0.0, 4.0, 21))
    proj = sl.deflate_semistable(rec, np.ones(5), 3)
    assert np.abs(proj.P @ np.ones(5)).max() < 1e-12
    assert np.abs(proj.P @ proj.P.T - np.eye(3)).max() < 1e-12


def test_deflation_two_state():
    t = np.linspace(0.0, 1.0, 11)
    states = np.vstack([np.zeros(11), np.cos(t)])
    rec = sl.SnapshotRecord(coarse_times=t[::5], fine_times=t, states=states,
                            inputs=np.zeros((1, 11)), x0=states[:, 0])
    proj = sl.deflate_semistable(rec, [1.0, 0.0], 1)
    assert np.allclose(np.abs(proj.P), [[0.0, 1.0]], atol=1e-12)


def test_deflation_dimension_limit(rng):
    _, rec = _decay_record(rng)
    with pytest.raises(ValueError, match="n-1"):
        sl.deflate_semistable(rec, np.ones(4), 4)


def test_complement_basis_properties(rng):
    v = rng.standard_normal(6)
    Vbar = sl.complement_basis(v)
    assert Vbar.shape == (5, 6)
    assert np.abs(Vbar @ v).max() < 1e-12 * np.linalg.norm(v)
    assert np.abs(Vbar @ Vbar.T - np.eye(5)).max() < 1e-12


# ------------------------------------------------------------- data matrices
def test_scalar_data_matrix_entries():
    sys = sl.LtiSystem(A=[[-1.0]], B=[[0.0]])
    rec = sl.simulate(sys, None, [1.0], [0.0, 1.0], substeps=10)
    data = sl.build_data_matrices(rec)
    # phi is a pure snapshot difference, no quadrature involved
    assert data.phi[0, 0] == pytest.approx(np.exp(-2.0) - 1.0, abs=1e-6)
    # sigma matches an independent trapezoid of the closed form on the same grid
    t = rec.fine_times
    oracle = np.trapezoid(np.exp(-2.0 * t), t)
    assert data.sigma[0, 0] == pytest.approx(oracle, abs=1e-4)
    # the closed-form value differs only by the trapezoid bias at h = 0.1
    assert data.sigma[0, 0] == pytest.approx((1.0 - np.exp(-2.0)) / 2.0, abs=2e-3)


def test_rho_zero_without_input(rng):
    _, rec = _decay_record(rng, noise=False)
    data = sl.build_data_matrices(rec)
    assert np.all(data.rho == 0.0)


def test_identity_projection_equals_raw(rng):
    _, rec = _decay_record(rng)
    raw = sl.build_data_matrices(rec)
    eye = sl.build_data_matrices(rec, ProjectionMatrix(P=np.eye(4)))
    assert np.array_equal(raw.phi, eye.phi)
    assert np.array_equal(raw.rho, eye.rho)
    assert np.array_equal(raw.sigma, eye.sigma)


def test_compressed_equals_kronecker_product(rng):
    _, rec = _decay_record(rng, n=4, m=2, seed=9)
    proj = sl.fit_projection(rec, 2)
    raw = sl.build_data_matrices(rec)
    comp = sl.build_data_matrices(rec, proj)
    P = proj.P
    assert np.allclose(comp.phi, raw.phi @ np.kron(P.T, P.T), atol=1e-10)
    assert np.allclose(comp.sigma, raw.sigma @ np.kron(P.T, P.T), atol=1e-10)
    assert np.allclose(comp.rho, raw.rho @ np.kron(P.T, np.eye(2)), atol=1e-10)


def test_sigma_rows_are_symmetric_blocks(rng):
    _, rec = _decay_record(rng)
    data = sl.build_data_matrices(rec)
    blocks = data.sigma_blocks()
    assert np.allclose(blocks, blocks.transpose(0, 2, 1), atol=1e-12)


# ---------------------------------------------------------------- eps_hat
def test_eps_hat_zero_at_full_rank(rng):
    _, rec = _decay_record(rng)
    proj = sl.fit_projection(rec, 4)
    assert sl.epsilon_hat(rec, proj) < 1e-10


def test_eps_hat_hand_computed():
    X = np.array([[2.0, 0.0], [0.0, 1.0]])
    proj = sl.fit_projection(X, 1)
    assert sl.epsilon_hat(X, proj) == pytest.approx(1.0, abs=1e-12)


def test_eps_hat_monotone(rng):
    _, rec = _decay_record(rng, n=5, N=30)
    vals = [sl.epsilon_hat(rec, sl.fit_projection(rec, k)) for k in range(1, 6)]
    assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 1e-10


def test_eps_hat_deflated_coordinates(rng):
    _, rec = _decay_record(rng, n=5, N=30)
    proj = sl.deflate_semistable(rec, np.ones(5), 4)
    # full deflated dimension keeps every deflated snapshot
    assert sl.epsilon_hat(rec, proj) < 1e-10
