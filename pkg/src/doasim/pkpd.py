"""Propofol PK/PD plant: three-compartment mass balance, effect-site lag and
sigmoid BIS response.

Units throughout: minutes, mg, litres, mg/L.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal

import numpy as np

from ._jit import njit
from .errors import DegenerateProfileError, InvalidArgumentError, NumericBlowupError

Sex = Literal["male", "female"]

# Literature-style nominal PD values; the cohort experiment has no published
# per-patient PD parameters, so these are defaults rather than ground truth.
DEFAULT_KE0 = 0.456
DEFAULT_EC50 = 2.65
DEFAULT_GAMMA = 2.0
DEFAULT_BIS0 = 100.0

# Threshold above which a post-step clamp is reported as suspicious.
CLAMP_FLAG_LEVEL = 1e-9


@dataclass(frozen=True)
class PdParams:
    ke0: float = DEFAULT_KE0
    ec50: float = DEFAULT_EC50
    gamma: float = DEFAULT_GAMMA
    bis0: float = DEFAULT_BIS0

    def __post_init__(self):
        for name in ("ke0", "ec50", "gamma", "bis0"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise InvalidArgumentError(f"PdParams.{name} must be a positive finite number, got {v!r}")
        if self.gamma < 1:
            raise InvalidArgumentError(f"PdParams.gamma must be >= 1, got {self.gamma!r}")
        if self.bis0 > 100:
            raise InvalidArgumentError(f"PdParams.bis0 must be <= 100, got {self.bis0!r}")


@dataclass(frozen=True)
class PkCoefficients:
    v1: float
    v2: float
    v3: float
    cl1: float
    cl2: float
    cl3: float
    k10: float
    k12: float
    k13: float
    k21: float
    k31: float
    lbm: float

    def rates(self) -> np.ndarray:
        """Packed ``[k10, k12, k13, k21, k31, v1]`` for the kernels."""
        return np.array([self.k10, self.k12, self.k13, self.k21, self.k31, self.v1], dtype=np.float64)


@dataclass(frozen=True)
class PatientProfile:
    id: int
    age: float
    weight: float
    height: float
    sex: Sex
    pd: PdParams = field(default_factory=PdParams)

    def __post_init__(self):
        for name in ("age", "weight", "height"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise InvalidArgumentError(f"patient {self.id}: {name} must be > 0, got {v!r}")
        if self.sex not in ("male", "female"):
            raise InvalidArgumentError(f"patient {self.id}: sex must be 'male' or 'female', got {self.sex!r}")
        # validates v2 / clearances eagerly and caches the result
        _ = self.pk

    @cached_property
    def pk(self) -> PkCoefficients:
        return compute_pk(self)


def compute_lbm(weight: float, height: float, sex: Sex) -> float:
    """Lean body mass in kg (James formula)."""
    if not (weight > 0 and height > 0):
        raise InvalidArgumentError(f"weight and height must be > 0, got {weight!r}, {height!r}")
    ratio = (weight * weight) / (height * height)
    if sex == "male":
        lbm = 1.1 * weight - 128.0 * ratio
    elif sex == "female":
        lbm = 1.07 * weight - 148.0 * ratio
    else:
        raise InvalidArgumentError(f"sex must be 'male' or 'female', got {sex!r}")
    if not lbm > 0:
        raise DegenerateProfileError("lbm", lbm)
    return lbm


def compute_pk(profile: PatientProfile) -> PkCoefficients:
    lbm = compute_lbm(profile.weight, profile.height, profile.sex)
    age = profile.age
    v1 = 4.27
    v2 = 18.9 - 0.391 * (age - 53)
    v3 = 238.0
    cl1 = 1.89 + 0.0456 * (profile.weight - 77) + 0.0264 * (profile.height - 177) - 0.0681 * (lbm - 59)
    cl2 = 1.29 - 0.024 * (age - 53)
    cl3 = 0.836
    for name, value in (("v2", v2), ("cl1", cl1), ("cl2", cl2)):
        if not value > 0:
            raise DegenerateProfileError(name, value)
    return PkCoefficients(
        v1=v1, v2=v2, v3=v3, cl1=cl1, cl2=cl2, cl3=cl3,
        k10=cl1 / v1, k12=cl2 / v1, k13=cl3 / v1,
        k21=cl2 / v2, k31=cl3 / v3,
        lbm=lbm,
    )


@dataclass(frozen=True)
class PlantState:
    """Compartment masses (mg), effect-site concentration (mg/L) and time (min).

    ``clamp`` is the total magnitude removed by the non-negativity clamp on
    the step that produced this state.
    """

    x1: float = 0.0
    x2: float = 0.0
    x3: float = 0.0
    ce: float = 0.0
    t: float = 0.0
    clamp: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.x2, self.x3, self.ce], dtype=np.float64)


# --------------------------------------------------------------------------
# kernels

@njit
def _derivs(x1, x2, x3, ce, rates, ke0, u):
    k10, k12, k13, k21, k31, v1 = rates[0], rates[1], rates[2], rates[3], rates[4], rates[5]
    dx1 = -(k10 + k12 + k13) * x1 + k21 * x2 + k31 * x3 + u
    dx2 = k12 * x1 - k21 * x2
    dx3 = k13 * x1 - k31 * x3
    dce = ke0 * (x1 / v1 - ce)
    return dx1, dx2, dx3, dce


@njit
def _rk4_step(x1, x2, x3, ce, rates, ke0, u, dt):
    a1, a2, a3, a4 = _derivs(x1, x2, x3, ce, rates, ke0, u)
    h = 0.5 * dt
    b1, b2, b3, b4 = _derivs(x1 + h * a1, x2 + h * a2, x3 + h * a3, ce + h * a4, rates, ke0, u)
    c1, c2, c3, c4 = _derivs(x1 + h * b1, x2 + h * b2, x3 + h * b3, ce + h * b4, rates, ke0, u)
    d1, d2, d3, d4 = _derivs(x1 + dt * c1, x2 + dt * c2, x3 + dt * c3, ce + dt * c4, rates, ke0, u)
    s = dt / 6.0
    n1 = x1 + s * (a1 + 2.0 * b1 + 2.0 * c1 + d1)
    n2 = x2 + s * (a2 + 2.0 * b2 + 2.0 * c2 + d2)
    n3 = x3 + s * (a3 + 2.0 * b3 + 2.0 * c3 + d3)
    n4 = ce + s * (a4 + 2.0 * b4 + 2.0 * c4 + d4)
    clamp = 0.0
    if n1 < 0.0:
        clamp -= n1
        n1 = 0.0
    if n2 < 0.0:
        clamp -= n2
        n2 = 0.0
    if n3 < 0.0:
        clamp -= n3
        n3 = 0.0
    if n4 < 0.0:
        clamp -= n4
        n4 = 0.0
    return n1, n2, n3, n4, clamp


@njit
def _bis(ce, ec50, gamma, bis0):
    # bis0 * ec50^g / (ce^g + ec50^g), arranged so ce = 0 gives bis0 exactly
    return bis0 / (1.0 + (ce / ec50) ** gamma)


# --------------------------------------------------------------------------
# public operations

def plant_derivatives(state: PlantState, coeffs: PkCoefficients, pd: PdParams, u: float) -> np.ndarray:
    """Right-hand side ``(dx1, dx2, dx3, dce)`` at ``state`` under infusion ``u`` (mg/min)."""
    if u < 0:
        raise InvalidArgumentError(f"infusion rate must be >= 0, got {u!r}")
    return np.array(_derivs(state.x1, state.x2, state.x3, state.ce, coeffs.rates(), pd.ke0, float(u)))


def step_plant(state: PlantState, coeffs: PkCoefficients, pd: PdParams, u: float, dt: float) -> PlantState:
    """Advance the plant by one classical RK4 step with ``u`` held constant."""
    if not dt > 0:
        raise InvalidArgumentError(f"dt must be > 0, got {dt!r}")
    if u < 0:
        raise InvalidArgumentError(f"infusion rate must be >= 0, got {u!r}")
    n1, n2, n3, n4, clamp = _rk4_step(state.x1, state.x2, state.x3, state.ce,
                                      coeffs.rates(), pd.ke0, float(u), float(dt))
    t = state.t + dt
    if not all(math.isfinite(v) for v in (n1, n2, n3, n4)):
        raise NumericBlowupError(f"plant state became non-finite at t={t:g} min",
                                 t=t, state=(n1, n2, n3, n4))
    return PlantState(n1, n2, n3, n4, t, clamp)


def bis_of(ce, pd: PdParams):
    """BIS from effect-site concentration; accepts scalars or arrays."""
    if np.any(np.asarray(ce) < 0):
        raise InvalidArgumentError("effect-site concentration must be >= 0")
    if np.ndim(ce) == 0:
        return float(_bis(float(ce), pd.ec50, pd.gamma, pd.bis0))
    ce = np.asarray(ce, dtype=np.float64)
    return pd.bis0 / (1.0 + (ce / pd.ec50) ** pd.gamma)


TABLE1_PATIENTS: tuple[PatientProfile, ...] = (
    PatientProfile(1, 30, 70, 170, "male"),
    PatientProfile(2, 45, 80, 175, "male"),
    PatientProfile(3, 60, 65, 165, "female"),
    PatientProfile(4, 25, 55, 160, "female"),
    PatientProfile(5, 50, 90, 180, "male"),
    PatientProfile(6, 35, 60, 168, "female"),
    PatientProfile(7, 55, 75, 172, "male"),
    PatientProfile(8, 40, 68, 170, "female"),
)
