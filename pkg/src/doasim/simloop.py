"""Closed-loop simulation (plant + controller) and performance metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._jit import njit
from .control import ControllerConfig, _control_kernel, kernel_args, reset_controller
from .errors import InvalidArgumentError, NumericBlowupError
from .pkpd import CLAMP_FLAG_LEVEL, PatientProfile, _bis, _rk4_step

OPEN_LOOP = -1

METRIC_NAMES = ("settling_time", "steady_state_error", "iae", "itae", "cost",
                "overshoot_bis_min", "bis_max")


@dataclass(frozen=True)
class Disturbance:
    """Additive step on the measured BIS over ``[onset, onset + duration)``."""

    onset: float
    magnitude: float
    duration: float

    def __post_init__(self):
        if not (self.onset >= 0 and self.duration > 0 and math.isfinite(self.magnitude)):
            raise InvalidArgumentError("disturbance needs onset >= 0, duration > 0, finite magnitude")


@dataclass(frozen=True)
class SimConfig:
    horizon: float = 30.0
    dt: float = 0.01
    bis_target: float = 50.0
    band: tuple[float, float] = (40.0, 60.0)
    settle_tol: float = 5.0
    disturbance: Disturbance | None = None

    def __post_init__(self):
        if not (self.horizon > 0 and self.dt > 0):
            raise InvalidArgumentError("horizon and dt must be > 0")
        lo, hi = self.band
        if not lo < self.bis_target < hi:
            raise InvalidArgumentError(f"need band_low < target < band_high, got {self.band} / {self.bis_target}")
        if not self.settle_tol > 0:
            raise InvalidArgumentError("settle_tol must be > 0")
        object.__setattr__(self, "band", (float(lo), float(hi)))

    @property
    def n_steps(self) -> int:
        n = round(self.horizon / self.dt)
        if abs(n * self.dt - self.horizon) > 1e-9 * self.horizon:
            raise InvalidArgumentError(f"horizon {self.horizon} is not a multiple of dt {self.dt}")
        return n


@dataclass(frozen=True)
class Metrics:
    settling_time: float  # nan when the run never settles
    steady_state_error: float
    iae: float
    itae: float
    cost: float
    overshoot_bis_min: float
    bis_max: float
    settled: bool
    in_band_after_settling: bool

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in METRIC_NAMES}


@dataclass
class SimReport:
    patient_id: int
    t: np.ndarray
    bis: np.ndarray
    u: np.ndarray
    ce: np.ndarray
    metrics: Metrics
    max_clamp: float = 0.0

    @property
    def series(self) -> np.ndarray:
        """``(N, 4)`` array of ``t, bis, u, ce``."""
        return np.column_stack([self.t, self.bis, self.u, self.ce])

    @property
    def clamp_flagged(self) -> bool:
        return self.max_clamp > CLAMP_FLAG_LEVEL


@njit
def _closed_loop(n, dt, target, dist, rates, ke0, ec50, gamma, bis0, variant, u_const, budget,
                 cp, fst, ibuf, iwrev, iptr, dbuf, dwrev, dptr, in1, in2, out_mu, grid, rules):
    t = np.zeros(n + 1)
    bis = np.zeros(n + 1)
    u = np.zeros(n + 1)
    ce = np.zeros(n + 1)
    x1 = 0.0
    x2 = 0.0
    x3 = 0.0
    c = 0.0
    max_clamp = 0.0
    acc = 0.0  # running iae + itae, only used for early exit
    for k in range(n + 1):
        tk = k * dt
        b = _bis(c, ec50, gamma, bis0)
        if dist[0] != 0.0 and dist[1] <= tk < dist[1] + dist[3]:
            b += dist[2]
        if variant == OPEN_LOOP:
            uk = u_const
        else:
            uk = _control_kernel(variant, cp, fst, ibuf, iwrev, iptr, dbuf, dwrev, dptr,
                                 in1, in2, out_mu, grid, rules, b - target)[0]
        t[k] = tk
        bis[k] = b
        ce[k] = c
        if not np.isfinite(uk):
            return t, bis, u, ce, 1, k, max_clamp
        u[k] = uk
        if k < n:
            acc += abs(b - target) * dt * (1.0 + tk)
            if acc > budget:
                return t, bis, u, ce, 3, k, max_clamp
            x1, x2, x3, c, clamp = _rk4_step(x1, x2, x3, c, rates, ke0, uk, dt)
            if clamp > max_clamp:
                max_clamp = clamp
            if not (np.isfinite(x1) and np.isfinite(x2) and np.isfinite(x3) and np.isfinite(c)):
                return t, bis, u, ce, 2, k, max_clamp
    return t, bis, u, ce, 0, -1, max_clamp


def _dist_array(sim: SimConfig) -> np.ndarray:
    d = sim.disturbance
    if d is None:
        return np.zeros(4)
    return np.array([1.0, d.onset, d.magnitude, d.duration])


def _simulate(patient: PatientProfile, ctrl: ControllerConfig | None, sim: SimConfig,
              u_const: float = 0.0, budget: float = math.inf) -> SimReport | float:
    pd = patient.pd
    n = sim.n_steps
    if ctrl is None:
        cfg = ControllerConfig("pid", dt=sim.dt)
        variant = OPEN_LOOP
    else:
        if abs(ctrl.dt - sim.dt) > 1e-15:
            raise InvalidArgumentError(f"controller dt {ctrl.dt} != simulation dt {sim.dt}")
        cfg = ctrl
        variant = ctrl.code
    cp = cfg.packed()
    st = reset_controller(cfg)
    fst = np.zeros(3)
    t, bis, u, ce, status, fail, max_clamp = _closed_loop(
        n, sim.dt, sim.bis_target, _dist_array(sim), patient.pk.rates(), pd.ke0, pd.ec50, pd.gamma, pd.bis0,
        variant, float(u_const), float(budget), cp, fst, *kernel_args(cfg, st))
    if status == 3:
        return float(budget)
    if status != 0:
        what = "controller output" if status == 1 else "plant state"
        raise NumericBlowupError(
            f"patient {patient.id}: {what} became non-finite at step {fail} (t={fail * sim.dt:g} min)",
            t=fail * sim.dt, step=int(fail), patient_id=patient.id,
            state=(float(bis[fail]), float(ce[fail])))
    metrics = compute_metrics(np.column_stack([t, bis]), sim)
    return SimReport(patient.id, t, bis, u, ce, metrics, float(max_clamp))


def run_sim(patient: PatientProfile, ctrl: ControllerConfig, sim: SimConfig) -> SimReport:
    """Simulate one patient under closed-loop control for ``sim.horizon`` minutes.

    Per step: measure BIS (plus any disturbance), compute the command, hold
    it over ``dt`` and integrate the plant with RK4.
    """
    return _simulate(patient, ctrl, sim)


def run_open_loop(patient: PatientProfile, u_rate: float, sim: SimConfig) -> SimReport:
    """Same loop as :func:`run_sim` with the controller replaced by a fixed infusion."""
    if not (math.isfinite(u_rate) and u_rate >= 0):
        raise InvalidArgumentError(f"infusion rate must be >= 0, got {u_rate!r}")
    return _simulate(patient, None, sim, u_rate)


def cost_within(patient: PatientProfile, ctrl: ControllerConfig, sim: SimConfig,
                budget: float = math.inf) -> tuple[float, bool]:
    """``(cost, True)`` for a completed run, or ``(budget, False)`` once the
    running ``iae + itae`` exceeds ``budget`` (the simulation stops early).

    The early-exit sum is accumulated in a different order than
    :func:`compute_metrics`, so callers should leave some slack in ``budget``.
    """
    rep = _simulate(patient, ctrl, sim, budget=budget)
    if isinstance(rep, float):
        return rep, False
    return rep.metrics.cost, True


def compute_metrics(series, sim: SimConfig) -> Metrics:
    """Metrics from a uniformly sampled ``(t, bis, ...)`` series.

    IAE/ITAE use the left rectangular rule.  Settling time is the first
    sample after which ``|bis - target| <= settle_tol`` for the rest of the
    series; steady-state error is the mean absolute error over the final
    10 % of the time span.
    """
    arr = np.asarray(series, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] < 2:
        raise InvalidArgumentError("series must be a non-empty (N, >=2) array of (t, bis, ...)")
    t, bis = arr[:, 0], arr[:, 1]
    n = len(t)
    err = np.abs(bis - sim.bis_target)
    if n > 1:
        dt = (t[-1] - t[0]) / (n - 1)
        iae = float(np.sum(err[:-1]) * dt)
        itae = float(np.sum(t[:-1] * err[:-1]) * dt)
    else:
        iae = itae = 0.0

    outside = np.flatnonzero(err > sim.settle_tol)
    if outside.size == 0:
        settle_idx = 0
    elif outside[-1] == n - 1:
        settle_idx = -1
    else:
        settle_idx = int(outside[-1]) + 1
    settled = settle_idx >= 0
    settling_time = float(t[settle_idx]) if settled else math.nan
    lo, hi = sim.band
    in_band = bool(settled and np.all((bis[settle_idx:] >= lo) & (bis[settle_idx:] <= hi)))

    span = t[-1] - t[0]
    tail = err[t >= t[-1] - 0.1 * span - 1e-9 * max(span, 1.0)]
    return Metrics(
        settling_time=settling_time,
        steady_state_error=float(np.mean(tail)),
        iae=iae,
        itae=itae,
        cost=iae + itae,
        overshoot_bis_min=float(np.min(bis)),
        bis_max=float(np.max(bis)),
        settled=settled,
        in_band_after_settling=in_band,
    )


@dataclass
class CohortResult:
    reports: list[SimReport]
    errors: dict[int, str] = field(default_factory=dict)

    @property
    def means(self) -> dict[str, float]:
        return mean_metrics([r.metrics for r in self.reports])

    @property
    def ok(self) -> bool:
        return not self.errors


def mean_metrics(metrics: Sequence[Metrics]) -> dict[str, float]:
    if not metrics:
        return {name: math.nan for name in METRIC_NAMES}
    return {name: float(sum(getattr(m, name) for m in metrics) / len(metrics)) for name in METRIC_NAMES}


def run_cohort(patients: Sequence[PatientProfile], ctrl: ControllerConfig, sim: SimConfig) -> CohortResult:
    """Run every patient; failures are recorded per patient instead of aborting."""
    if not patients:
        raise InvalidArgumentError("cohort needs at least one patient")
    reports, errors = [], {}
    for p in patients:
        try:
            reports.append(run_sim(p, ctrl, sim))
        except NumericBlowupError as exc:
            errors[p.id] = str(exc)
    return CohortResult(reports, errors)
