import math

import numpy as np
import pytest

from doasim.control import ControllerConfig
from doasim.errors import InvalidArgumentError, NumericBlowupError
from doasim.pkpd import PlantState, bis_of, step_plant
from doasim.simloop import (Disturbance, SimConfig, compute_metrics, cost_within, mean_metrics, run_cohort,
                            run_open_loop, run_sim)
from doasim.woa import WoaConfig, tune_controller

SHORT = SimConfig(horizon=10.0)


def synthetic(fn, horizon=10.0, dt=0.01):
    t = np.arange(round(horizon / dt) + 1) * dt
    return np.column_stack([t, fn(t)])


@pytest.fixture(scope="module")
def tuned_fopid(patient1):
    # a small budget is enough to land in a sensible region
    res = tune_controller("fopid", [patient1], SimConfig(), WoaConfig(8, 8, seed=3))
    return res.config


class TestRunSim:
    def test_zero_gains_stay_awake(self, patient1):
        rep = run_sim(patient1, ControllerConfig("pid"), SimConfig())
        assert np.all(rep.u == 0) and np.all(rep.bis == 100.0)
        assert len(rep.t) == 3001 and rep.series.shape == (3001, 4)

    def test_open_loop_equals_plant_integration(self, patient1):
        sim = SimConfig(horizon=5.0)
        rep = run_open_loop(patient1, 7.5, sim)
        s = PlantState()
        ce = [0.0]
        for _ in range(sim.n_steps):
            s = step_plant(s, patient1.pk, patient1.pd, 7.5, sim.dt)
            ce.append(s.ce)
        assert np.max(np.abs(rep.ce - np.array(ce))) < 1e-12
        assert np.allclose(rep.bis, bis_of(np.array(ce), patient1.pd), rtol=1e-12)

    def test_deterministic(self, patient1):
        cfg = ControllerConfig("fofpid", gain_ranges=(2, 0.5, 0.5), alpha=0.9, beta=0.5)
        a, b = run_sim(patient1, cfg, SHORT), run_sim(patient1, cfg, SHORT)
        assert np.array_equal(a.series, b.series) and a.metrics == b.metrics

    def test_dt_mismatch(self, patient1):
        with pytest.raises(InvalidArgumentError):
            run_sim(patient1, ControllerConfig("pid", kp=1, dt=0.02), SHORT)

    def test_disturbance_window(self, patient1):
        sim = SimConfig(horizon=10.0, disturbance=Disturbance(onset=4.0, magnitude=15.0, duration=2.0))
        rep = run_sim(patient1, ControllerConfig("pid"), sim)
        hit = (rep.t >= 4.0 - 1e-9) & (rep.t < 6.0 - 1e-9)
        assert np.all(rep.bis[hit] == 115.0) and np.all(rep.bis[~hit] == 100.0)

    def test_disturbance_is_rejected(self, patient1, tuned_fopid):
        dist = Disturbance(onset=15.0, magnitude=10.0, duration=5.0)
        rep = run_sim(patient1, tuned_fopid, SimConfig(disturbance=dist))
        during = (rep.t >= 15.0) & (rep.t < 20.0)
        quiet = run_sim(patient1, tuned_fopid, SimConfig())
        # the controller pushes more drug while the stimulus lasts
        assert rep.u[during].mean() > quiet.u[during].mean()

    def test_blowup_names_step(self, patient1):
        cfg = ControllerConfig("pid", kp=1e308, kd=1e308)
        with pytest.raises(NumericBlowupError) as ei:
            run_sim(patient1, cfg, SHORT)
        assert ei.value.step is not None and ei.value.patient_id == patient1.id

    def test_tuned_fopid_settles_patient1(self, patient1, tuned_fopid):
        m = run_sim(patient1, tuned_fopid, SimConfig()).metrics
        assert m.settled and m.settling_time < 5.0 and m.in_band_after_settling

    def test_dt_robustness(self, patient1, tuned_fopid):
        coarse = run_sim(patient1, tuned_fopid, SimConfig()).metrics.iae
        fine = run_sim(patient1, tuned_fopid.with_dt(0.005), SimConfig(dt=0.005)).metrics.iae
        assert abs(fine - coarse) / coarse < 0.005


class TestMetrics:
    def test_constant_error(self):
        m = compute_metrics(synthetic(lambda t: np.full_like(t, 51.0)), SHORT)
        assert m.iae == pytest.approx(10.0, rel=0.01)
        assert m.itae == pytest.approx(50.0, rel=0.01)
        assert m.cost == m.iae + m.itae

    def test_left_rectangle_exact(self):
        m = compute_metrics(synthetic(lambda t: np.full_like(t, 49.0)), SHORT)
        n = 1000
        assert m.iae == pytest.approx(1.0 * n * 0.01, rel=1e-12)
        assert m.itae == pytest.approx(0.01 * 0.01 * n * (n - 1) / 2, rel=1e-12)

    def test_trapezoid_cross_check(self):
        s = synthetic(lambda t: 50 + 30 * np.exp(-0.7 * t) * np.cos(2 * t))
        m = compute_metrics(s, SHORT)
        t, err = s[:, 0], np.abs(s[:, 1] - 50)
        # left rectangle = trapezoid + dt/2 * (f(first) - f(last))
        for got, f in ((m.iae, err), (m.itae, t * err)):
            assert got == pytest.approx(np.trapezoid(f, t) + 0.005 * (f[0] - f[-1]), rel=1e-12)

    def test_perfect_regulation(self):
        m = compute_metrics(synthetic(lambda t: np.full_like(t, 50.0)), SHORT)
        assert m.settling_time == 0 and m.steady_state_error == 0 and m.cost == 0

    def test_exponential_settling(self):
        m = compute_metrics(synthetic(lambda t: 50 + 50 * np.exp(-2 * t)), SHORT)
        assert abs(m.settling_time - math.log(10) / 2) <= 0.01

    def test_unsettled_is_nan(self):
        m = compute_metrics(synthetic(lambda t: 50 + 10 * np.sin(t)), SHORT)
        assert math.isnan(m.settling_time) and not m.settled and not m.in_band_after_settling

    def test_steady_state_window(self):
        # error 2 only during the final tenth of the span
        m = compute_metrics(synthetic(lambda t: np.where(t >= 9.0 - 1e-9, 52.0, 50.0)), SHORT)
        assert m.steady_state_error == pytest.approx(2.0)

    def test_settling_monotone_in_tolerance(self):
        s = synthetic(lambda t: 50 + 40 * np.exp(-0.5 * t) * np.cos(3 * t))
        times = [compute_metrics(s, SimConfig(horizon=10.0, settle_tol=tol)).settling_time for tol in (1, 2, 5, 9)]
        assert all(a >= b for a, b in zip(times, times[1:]))

    def test_band_extremes(self):
        m = compute_metrics(synthetic(lambda t: 50 + 20 * np.cos(t)), SHORT)
        assert m.overshoot_bis_min == pytest.approx(30.0, abs=1e-3) and m.bis_max == 70.0

    def test_empty_series(self):
        with pytest.raises(InvalidArgumentError):
            compute_metrics(np.zeros((0, 2)), SHORT)


class TestSimConfig:
    @pytest.mark.parametrize("kw", [dict(horizon=0), dict(dt=-1), dict(band=(50, 60)), dict(bis_target=70),
                                    dict(settle_tol=0)])
    def test_invalid(self, kw):
        with pytest.raises(InvalidArgumentError):
            SimConfig(**kw)

    def test_horizon_multiple_of_dt(self):
        with pytest.raises(InvalidArgumentError):
            SimConfig(horizon=1.005, dt=0.01).n_steps

    def test_disturbance_validation(self):
        with pytest.raises(InvalidArgumentError):
            Disturbance(onset=1, magnitude=5, duration=0)


class TestCohort:
    def test_single_patient_mean(self, patient1):
        res = run_cohort([patient1], ControllerConfig("pid", kp=0.5, ki=0.2), SHORT)
        m = res.reports[0].metrics
        assert res.means == m.as_dict() or all(
            (math.isnan(a) and math.isnan(b)) or a == b for a, b in zip(res.means.values(), m.as_dict().values()))

    def test_duplicates_identical(self, patient1):
        res = run_cohort([patient1, patient1], ControllerConfig("fopid", kp=0.5, ki=0.2, alpha=0.8), SHORT)
        a, b = res.reports
        assert np.array_equal(a.series, b.series) and a.metrics == b.metrics

    def test_partial_failure(self, patients):
        cfg = ControllerConfig("pid", kp=1e308, kd=1e308)
        res = run_cohort(patients[:2], cfg, SHORT)
        assert not res.ok and set(res.errors) == {1, 2} and res.reports == []

    def test_empty(self):
        with pytest.raises(InvalidArgumentError):
            run_cohort([], ControllerConfig("pid"), SHORT)

    def test_mean_of_nothing(self):
        assert all(math.isnan(v) for v in mean_metrics([]).values())


class TestCostWithin:
    def test_unbounded_matches_metrics(self, patient1):
        cfg = ControllerConfig("fopid", kp=0.5, ki=0.2, alpha=0.8)
        cost, done = cost_within(patient1, cfg, SimConfig())
        assert done and cost == run_sim(patient1, cfg, SimConfig()).metrics.cost

    def test_stops_above_budget(self, patient1):
        cfg = ControllerConfig("pid")
        full = run_sim(patient1, cfg, SimConfig()).metrics.cost
        cost, done = cost_within(patient1, cfg, SimConfig(), budget=full / 2)
        assert not done and cost == full / 2

    def test_budget_just_above_completes(self, patient1):
        cfg = ControllerConfig("pid", kp=0.3)
        full = run_sim(patient1, cfg, SimConfig()).metrics.cost
        cost, done = cost_within(patient1, cfg, SimConfig(), budget=full * (1 + 1e-9))
        assert done and cost == full
