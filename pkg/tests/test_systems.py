import json

import numpy as np
import pytest
import scipy.linalg as sla

import snaplqr as sl
from snaplqr.exceptions import SimulationError


class ConstantSignal:
    """Unit step on every channel, for integrator sanity checks."""

    def __init__(self, num_inputs=1, value=1.0):
        self.num_inputs = num_inputs
        self.value = value

    def __call__(self, t):
        t_arr = np.atleast_1d(np.asarray(t, float))
        u = np.full((self.num_inputs, t_arr.size), self.value)
        return u[:, 0] if np.ndim(t) == 0 else u


def test_scalar_decay():
    sys = sl.LtiSystem(A=[[-1.0]], B=[[0.0]])
    rec = sl.simulate(sys, None, [1.0], np.linspace(0.0, 1.0, 11))
    assert rec.states[0, -1] == pytest.approx(np.exp(-1.0), abs=1e-6)


def test_pure_integrator_unit_step():
    sys = sl.LtiSystem(A=[[0.0]], B=[[1.0]], semistable_eigvec=[1.0])
    rec = sl.simulate(sys, ConstantSignal(), [0.0], np.linspace(0.0, 1.0, 11))
    assert rec.states[0, -1] == pytest.approx(1.0, abs=1e-6)


def test_two_state_chain_matches_expm():
    A = np.array([[-1.0, 0.0], [1.0, -1.0]])
    sys = sl.LtiSystem(A=A, B=[[1.0], [0.0]])
    [rec] = sl.impulse_responses(sys, [sys.B[:, 0]], horizon=2.0, fine_step=0.002)
    for idx in rec.coarse_index:
        t = rec.fine_times[idx]
        ref = sla.expm(A * t) @ sys.B[:, 0]
        assert np.allclose(rec.states[:, idx], ref, atol=1e-6)


def test_exploration_noise_paper_configuration():
    sig = sl.exploration_noise(400, 0.05, (-20.0, 20.0), (0.0, 1.0), seed=0,
                               num_inputs=2)
    assert sig.frequencies.shape == (2, 400)
    assert np.all(np.abs(sig.frequencies) <= 20.0)
    u = sig(0.5)
    assert u.shape == (2,)
    assert np.all(sig(1.5) == 0.0)  # outside the window


def test_single_sinusoid_peak():
    w1 = 3.0
    sig = sl.SignalGenerator(amplitude=1.0, frequencies=[[w1]], window=(0.0, 10.0))
    assert sig(np.pi / (2 * w1))[0] == pytest.approx(1.0, abs=1e-12)


def test_noise_determinism():
    a = sl.exploration_noise(50, 0.1, (-5.0, 5.0), (0.0, 1.0), seed=42, num_inputs=2)
    b = sl.exploration_noise(50, 0.1, (-5.0, 5.0), (0.0, 1.0), seed=42, num_inputs=2)
    assert np.array_equal(a.frequencies, b.frequencies)


def test_noise_validation():
    with pytest.raises(ValueError):
        sl.exploration_noise(0, 1.0, (0.0, 1.0), (0.0, 1.0), seed=0)
    with pytest.raises(ValueError):
        sl.exploration_noise(5, 1.0, (2.0, 1.0), (0.0, 1.0), seed=0)
    with pytest.raises(ValueError):
        sl.exploration_noise(5, 1.0, (0.0, 1.0), (1.0, 1.0), seed=0)  # empty window


def test_scalar_impulse_response():
    sys = sl.LtiSystem(A=[[-1.0]], B=[[1.0]])
    [rec] = sl.impulse_responses(sys, [[1.0]], horizon=1.0, fine_step=0.01)
    assert rec.states[0, -1] == pytest.approx(np.exp(-rec.fine_times[-1]), abs=1e-8)


def test_impulse_responses_share_grid(rng):
    from _oracles import random_stable_system

    A, B = random_stable_system(rng, 4, 2)
    sys = sl.LtiSystem(A=A, B=B)
    recs = sl.impulse_responses(sys, list(B.T), horizon=3.0, fine_step=0.01)
    assert len(recs) == 2
    assert np.array_equal(recs[0].fine_times, recs[1].fine_times)
    assert np.all(recs[0].inputs == 0.0)


def test_superposition(rng):
    from _oracles import random_stable_system

    A, B = random_stable_system(rng, 4, 2)
    sys = sl.LtiSystem(A=A, B=B)
    coarse = np.linspace(0.0, 3.0, 16)
    f1 = rng.uniform(0.5, 4.0, (2, 6))
    f2 = rng.uniform(0.5, 4.0, (2, 6))
    mk = lambda f: sl.SignalGenerator(amplitude=0.7, frequencies=f,
                                      window=(0.0, 3.0), num_inputs=2)
    both = sl.SignalGenerator(amplitude=0.7, frequencies=np.hstack([f1, f2]),
                              window=(0.0, 3.0), num_inputs=2)
    x_sum = (sl.simulate(sys, mk(f1), np.zeros(4), coarse).states
             + sl.simulate(sys, mk(f2), np.zeros(4), coarse).states)
    x_both = sl.simulate(sys, both, np.zeros(4), coarse).states
    assert np.allclose(x_sum, x_both, atol=1e-8)


def test_integrator_fourth_order(rng):
    from _oracles import random_stable_system

    A, _ = random_stable_system(rng, 3, 1)
    sys = sl.LtiSystem(A=A, B=np.zeros((3, 1)))
    x0 = rng.standard_normal(3)
    ref = sla.expm(A * 1.0) @ x0
    coarse = np.linspace(0.0, 1.0, 3)
    err = []
    for sub in (8, 16):
        rec = sl.simulate(sys, None, x0, coarse, substeps=sub)
        err.append(np.linalg.norm(rec.states[:, -1] - ref))
    ratio = err[0] / err[1]
    assert 10.0 < ratio < 24.0  # halving h cuts the error ~16x for RK4


def test_eventual_monotone_decay(rng):
    from _oracles import random_stable_system

    A, B = random_stable_system(rng, 5, 1)
    sys = sl.LtiSystem(A=A, B=B)
    rec = sl.simulate(sys, None, rng.standard_normal(5), np.linspace(0.0, 20.0, 201))
    norms = np.linalg.norm(rec.states, axis=0)
    tail = norms[-40:]
    assert np.all(np.diff(tail) < 0)
    assert tail[-1] < 1e-2 * norms[0]


def test_record_validation(rng):
    t = np.linspace(0.0, 1.0, 11)
    states = np.zeros((2, 11))
    with pytest.raises(ValueError, match="x0"):
        sl.SnapshotRecord(coarse_times=[0.0, 1.0], fine_times=t, states=states,
                          inputs=np.zeros((1, 11)), x0=[1.0, 0.0])
    with pytest.raises(ValueError, match="coarse"):
        sl.SnapshotRecord(coarse_times=[0.0, 0.55], fine_times=t, states=states,
                          inputs=np.zeros((1, 11)), x0=[0.0, 0.0])


def test_system_validation():
    with pytest.raises(ValueError, match="square"):
        sl.LtiSystem(A=[[1.0, 0.0]], B=[[1.0]])
    with pytest.raises(ValueError, match="rows"):
        sl.LtiSystem(A=[[-1.0]], B=[[1.0], [0.0]])
    with pytest.raises(ValueError, match="Hurwitz"):
        sl.LtiSystem(A=[[1.0]], B=[[1.0]])
    with pytest.raises(ValueError, match="kernel"):
        sl.LtiSystem(A=[[-1.0]], B=[[1.0]], semistable_eigvec=[1.0])
    # two zero eigenvalues are rejected even with a valid kernel vector
    with pytest.raises(ValueError, match="exactly one"):
        sl.LtiSystem(A=np.zeros((2, 2)), B=np.eye(2), semistable_eigvec=[1.0, 0.0])


def test_simulation_blowup_detected():
    # stable system but a step size far outside the RK4 stability region
    sys = sl.LtiSystem(A=[[-100.0]], B=[[0.0]])
    with pytest.raises(SimulationError):
        sl.simulate(sys, None, [1.0], np.linspace(0.0, 100.0, 101), substeps=1)


def test_signal_dimension_mismatch():
    sys = sl.LtiSystem(A=[[-1.0]], B=[[1.0]])
    sig = sl.exploration_noise(3, 1.0, (0.1, 1.0), (0.0, 1.0), seed=0, num_inputs=2)
    with pytest.raises(ValueError, match="channels"):
        sl.simulate(sys, sig, [0.0], [0.0, 1.0])


def test_trajectory_csv(tmp_path, rng):
    from _oracles import random_stable_system

    A, B = random_stable_system(rng, 2, 1)
    sys = sl.LtiSystem(A=A, B=B)
    sig = sl.exploration_noise(3, 0.5, (0.5, 2.0), (0.0, 1.0), seed=1)
    rec = sl.simulate(sys, sig, [1.0, 0.0], np.linspace(0.0, 1.0, 6), substeps=4)
    path = tmp_path / "traj.csv"
    sl.save_trajectory_csv(rec, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "t,x1,x2,u1"
    assert len(lines) == 1 + rec.fine_times.size
    # 17-significant-digit round trip
    sample = np.array([float(v) for v in lines[3].split(",")])
    i = 2
    assert sample[0] == rec.fine_times[i]
    assert np.array_equal(sample[1:3], rec.states[:, i])


def test_system_json_roundtrip(tmp_path):
    sys = sl.LtiSystem(A=[[0.0]], B=[[2.0]], semistable_eigvec=[1.0])
    path = tmp_path / "model.json"
    sys.to_json(path)
    doc = json.loads(path.read_text())
    assert doc["n"] == 1 and doc["m"] == 1 and "v" in doc
    back = sl.LtiSystem.from_json(path)
    assert np.array_equal(back.A, sys.A)
    assert np.array_equal(back.B, sys.B)
    assert np.array_equal(back.semistable_eigvec, sys.semistable_eigvec)


def test_refine_grid():
    fine = sl.refine_grid([0.0, 0.5, 1.0], substeps=4)
    assert fine.size == 9
    assert np.allclose(fine[::4], [0.0, 0.5, 1.0])
    with pytest.raises(ValueError):
        sl.refine_grid([0.0], substeps=4)
