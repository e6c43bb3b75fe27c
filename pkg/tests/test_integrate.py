import numpy as np
import pytest
from scipy.integrate import DOP853, solve_ivp

from bhchain import _dop853
from bhchain.integrate import IntegratorConfig, Mode, Status, integrate_orbit, log_schedule
from bhchain.model import ActionAngleState, ChainParams, PQState, action_angle_to_pq, eom_pq


def state_from_actions(I, phi=None):
    I = np.asarray(I, dtype=float)
    return action_angle_to_pq(ActionAngleState(I, np.zeros(I.size) if phi is None else phi))


class TestLogSchedule:
    def test_decades(self):
        np.testing.assert_allclose(log_schedule(1, 100, 1), [1, 10, 100])

    def test_ten_per_decade(self):
        t = log_schedule(1, 10, 10)
        assert t.size == 11
        np.testing.assert_allclose(t[1:] / t[:-1], 10 ** 0.1)

    def test_count(self):
        assert log_schedule(1e-1, 1e5, 20).size == 121

    def test_appends_end(self):
        t = log_schedule(1, 50, 1)
        assert t[-1] == 50 and np.all(np.diff(t) > 0)

    @pytest.mark.parametrize("args", [(0, 1, 1), (2, 1, 1), (1, 10, 0)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            log_schedule(*args)


class TestConfig:
    def test_defaults(self):
        c = IntegratorConfig(t_end=5.0)
        assert c.rel_tol == 1e-15 and c.constraint_tol == 0.01 and c.mode is Mode.UNCONSTRAINED
        np.testing.assert_array_equal(c.sample_times, [0, 5])

    @pytest.mark.parametrize("kw", [dict(rel_tol=0), dict(constraint_tol=1.5),
                                    dict(sample_times=[0, 2, 1]), dict(sample_times=[0, 20])])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            IntegratorConfig(t_end=10.0, **kw)


def test_kernel_matches_scipy_dop853():
    """Same tableau and controller: identical step counts and matching output."""
    p = ChainParams(L=5, U=3.0, mu=0.2, J=1.0)
    s = state_from_actions([0.1, 0.3, 0.2, 0.25, 0.15], [0.1, 1.0, 2.0, 3.0, 4.0])
    y0 = s.to_vector()
    T = 20.0
    ts = np.linspace(0, T, 41)

    def f(t, y):
        dP, dQ = eom_pq(PQState.from_vector(y), p)
        return np.concatenate([dP, dQ])

    ref = solve_ivp(f, (0, T), y0, method="DOP853", rtol=1e-9, atol=1e-9, t_eval=ts)
    status, t, y, samples, ns, nacc, nrej, _, _ = _dop853.integrate(
        y0, 0.0, T, ts, 1e-9, np.full(y0.size, 1e-9), 0.0, p.J, p.U, p.mu, False, p.L, 0,
        p.norm, -1.0, False, 10 ** 7)
    assert status == _dop853.COMPLETED and ns == ts.size
    stepper = DOP853(f, 0.0, y0, T, rtol=1e-9, atol=1e-9)
    n_steps = 0
    while stepper.status == "running":
        stepper.step()
        n_steps += 1
    assert nacc == n_steps
    np.testing.assert_allclose(samples, ref.y.T, atol=1e-10)


class TestIntegrateOrbit:
    def test_decoupled_actions_frozen(self):
        p = ChainParams(L=4, U=3.0, mu=0.5, J=0.0)
        s = state_from_actions([0.1, 0.2, 0.3, 0.4], [0.3, 1.0, 2.0, 3.0])
        out = integrate_orbit(s, p, IntegratorConfig(t_end=1e3, sample_times=log_schedule(1e-2, 1e3, 5)))
        assert out.completed
        I = out.trajectory.actions
        np.testing.assert_allclose(I, np.broadcast_to(I[0], I.shape), rtol=1e-12, atol=0)

    def test_decoupled_energy_frozen(self):
        # mu = 0 keeps H away from zero so the relative measure is well conditioned
        p = ChainParams(L=4, U=3.0, mu=0.0, J=0.0)
        s = state_from_actions([0.1, 0.2, 0.3, 0.4], [0.3, 1.0, 2.0, 3.0])
        out = integrate_orbit(s, p, IntegratorConfig(t_end=1e3, sample_times=log_schedule(1e-2, 1e3, 5)))
        e = out.trajectory.energy
        assert np.max(np.abs(e / e[0] - 1)) <= 1e-12

    def test_time_reversal_regular_orbit(self):
        p = ChainParams(L=3, U=2.0, mu=0.1, J=0.0)
        s = state_from_actions([0.2, 0.3, 0.5], [0.5, 1.5, 2.5])
        fwd = integrate_orbit(s, p, IntegratorConfig(t_end=50.0))
        back = integrate_orbit(fwd.trajectory.state(-1), p, IntegratorConfig(t_end=-50.0, sample_times=[0.0, -50.0]))
        np.testing.assert_allclose(back.trajectory.states[-1], s.to_vector(), atol=1e-10)

    def test_energy_drift_default_tolerances(self):
        p = ChainParams(L=10, U=25.0, mu=0.05)
        I = np.full(10, 1e-12)
        I[4] = 1.0
        out = integrate_orbit(state_from_actions(I / I.sum()), p,
                              IntegratorConfig(t_end=1e4, sample_times=log_schedule(1e-2, 1e4, 10)))
        assert out.status is Status.COMPLETED
        e, c = out.trajectory.energy, out.trajectory.constraint
        assert np.max(np.abs(e / e[0] - 1)) <= 1e-8
        assert np.max(np.abs(c - 1)) <= 0.01

    def test_tolerance_refinement(self):
        p = ChainParams(L=10, U=25.0, mu=0.05)
        I = np.full(10, 1e-12)
        I[4] = 1.0
        s = state_from_actions(I / I.sum())
        ts = log_schedule(1e-2, 1e3, 10)
        a = integrate_orbit(s, p, IntegratorConfig(t_end=1e3, sample_times=ts, rel_tol=1e-12, abs_tol=1e-12))
        b = integrate_orbit(s, p, IntegratorConfig(t_end=1e3, sample_times=ts, rel_tol=5e-13, abs_tol=5e-13))
        np.testing.assert_allclose(a.trajectory.actions, b.trajectory.actions, atol=1e-6)

    def test_samples_exact_and_first_state(self):
        p = ChainParams(L=4, U=1.0)
        s = state_from_actions([0.4, 0.3, 0.2, 0.1], [0, 1, 2, 3])
        ts = np.array([0.0, 0.3, 1.7, 2.0])
        tr = integrate_orbit(s, p, IntegratorConfig(t_end=2.0, sample_times=ts)).trajectory
        np.testing.assert_array_equal(tr.times, ts)
        np.testing.assert_array_equal(tr.states[0], s.to_vector())

    def test_deterministic(self):
        p = ChainParams(L=6, U=4.0, mu=0.1)
        s = state_from_actions(np.full(6, 1 / 6), np.arange(6.0))
        cfg = IntegratorConfig(t_end=30.0, sample_times=np.linspace(0, 30, 31), rel_tol=1e-10, abs_tol=1e-10)
        a = integrate_orbit(s, p, cfg).trajectory.states
        b = integrate_orbit(s, p, cfg).trajectory.states
        assert a.tobytes() == b.tobytes()

    def test_constraint_breach_truncates(self):
        p = ChainParams(L=6, U=10.0, mu=0.1)
        s = state_from_actions(np.full(6, 1 / 6), np.arange(6.0) ** 2)
        cfg = IntegratorConfig(t_end=200.0, sample_times=np.linspace(0, 200, 201), rel_tol=1e-3, abs_tol=1e-3,
                               constraint_tol=1e-6)
        out = integrate_orbit(s, p, cfg)
        assert out.status is Status.CONSTRAINT_BREACH
        assert len(out.trajectory) < 201
        assert out.t_stop < 200.0
        assert np.all(np.abs(out.trajectory.constraint - 1) <= 1e-6)

    def test_projected_mode(self):
        p = ChainParams(L=6, U=10.0, mu=0.1)
        s = state_from_actions(np.full(6, 1 / 6), np.arange(6.0) ** 2)
        cfg = IntegratorConfig(t_end=200.0, sample_times=np.linspace(0, 200, 201), rel_tol=1e-3, abs_tol=1e-3,
                               constraint_tol=1e-6, mode="projected")
        out = integrate_orbit(s, p, cfg)
        assert out.completed and len(out.trajectory) == 201
        np.testing.assert_allclose(out.trajectory.constraint, 1.0, atol=1e-13)
        assert out.stats.max_constraint_violation > 0

    def test_initial_violation_rejected(self):
        with pytest.raises(ValueError):
            integrate_orbit(state_from_actions([2.0, 0.0]), ChainParams(L=2, U=1), IntegratorConfig(t_end=1.0))
