"""PID, fractional PID and fuzzy fractional PID control laws.

Sign convention: the controller works on ``e = measured - target`` so that a
patient who is too awake (BIS above target) produces a positive error and a
positive infusion command.  Output is clamped to ``[0, u_max]``; with
anti-windup on, the integral history takes a zero sample instead of ``e``
whenever the unclamped command is saturated in the direction the error is
pushing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from ._jit import njit
from .errors import InvalidArgumentError, NumericBlowupError
from .fracops import DEFAULT_MEMORY_LEN, DERIVATIVE, INTEGRAL, FracOperator, _gl_eval, _gl_push, _gl_set_newest
from .fuzzy import MF_VECTOR_LEN, FuzzyScheduler, RuleBase, _infer, decode_mf, encode_mf

VARIANTS = ("pid", "fopid", "fofpid")
PID, FOPID, FOFPID = 0, 1, 2
VARIANT_CODE = {"pid": PID, "fopid": FOPID, "fofpid": FOFPID}

DEFAULT_U_MAX = 200.0
DEFAULT_E_SCALE = 50.0   # BIS units mapped to |e_norm| = 1
DEFAULT_DE_SCALE = 25.0  # BIS/min mapped to |de_norm| = 1

# layout of the packed float parameter vector handed to the kernel
_KP, _KI, _KD, _KPM, _KIM, _KDM, _UMAX, _DT, _SI, _SD, _AW, _ES, _DES = range(13)
# layout of the float state vector
_PREV_E, _PREV_U, _RUN_SUM = range(3)

# Search-vector layout per variant; bounds are keyed by these names.
PARAM_NAMES = {
    "pid": ("kp", "ki", "kd"),
    "fopid": ("kp", "ki", "kd", "alpha", "beta"),
    "fofpid": ("kp_max", "ki_max", "kd_max", "alpha", "beta")
    + tuple(f"mf_{s}{k}" for s in ("e", "d", "o") for k in (1, 2, 3)),
}

DEFAULT_BOUNDS = {
    "pid": {"kp": (0.0, 5.0), "ki": (0.0, 2.0), "kd": (0.0, 2.0)},
    "fopid": {"kp": (0.0, 5.0), "ki": (0.0, 2.0), "kd": (0.0, 2.0),
              "alpha": (0.1, 1.5), "beta": (0.1, 1.5)},
    "fofpid": {"kp_max": (0.0, 20.0), "ki_max": (0.0, 8.0), "kd_max": (0.0, 8.0),
               "alpha": (0.1, 1.5), "beta": (0.1, 1.5),
               "mf_input": (-0.5, 0.5), "mf_output": (-0.25, 0.25)},
}


@njit
def _control_kernel(variant, cp, fst, ibuf, iwrev, iptr, dbuf, dwrev, dptr,
                    in1, in2, out_mu, grid, rules, e):
    """One controller update.  Mutates the state arrays in place.

    Returns ``(u, u_raw, kp, ki, kd)`` with the gains actually used.
    """
    dt = cp[_DT]
    rate = (e - fst[_PREV_E]) / dt
    if variant == FOFPID:
        g = _infer(e / cp[_ES], rate / cp[_DES], in1, in2, out_mu, grid, rules)
        kp = g[0] * cp[_KPM]
        ki = g[1] * cp[_KIM]
        kd = g[2] * cp[_KDM]
    else:
        kp = cp[_KP]
        ki = cp[_KI]
        kd = cp[_KD]

    if variant == PID:
        d_term = rate
        s_new = fst[_RUN_SUM] + e
        i_term = dt * s_new
    else:
        _gl_push(dbuf, dptr, e)
        d_term = cp[_SD] * _gl_eval(dwrev, dbuf, dptr)
        _gl_push(ibuf, iptr, e)
        i_term = cp[_SI] * _gl_eval(iwrev, ibuf, iptr)
        s_new = 0.0

    u_max = cp[_UMAX]
    u_raw = kp * e + ki * i_term + kd * d_term
    if cp[_AW] != 0.0 and ((u_raw > u_max and e > 0.0) or (u_raw < 0.0 and e < 0.0)):
        if variant == PID:
            s_new = fst[_RUN_SUM]
            i_term = dt * s_new
        else:
            _gl_set_newest(ibuf, iptr, 0.0)
            i_term = cp[_SI] * _gl_eval(iwrev, ibuf, iptr)
        u_raw = kp * e + ki * i_term + kd * d_term

    if variant == PID:
        fst[_RUN_SUM] = s_new
    fst[_PREV_E] = e
    if not np.isfinite(u_raw):
        fst[_PREV_U] = np.nan
        return np.nan, u_raw, kp, ki, kd
    u = min(max(u_raw, 0.0), u_max)
    fst[_PREV_U] = u
    return u, u_raw, kp, ki, kd


@dataclass(frozen=True)
class ControllerConfig:
    variant: str
    kp: float = 0.0
    ki: float = 0.0
    kd: float = 0.0
    alpha: float = 1.0
    beta: float = 1.0
    gain_ranges: tuple[float, float, float] | None = None
    mf_vector: tuple[float, ...] | None = None
    rules: RuleBase | None = None
    u_max: float = DEFAULT_U_MAX
    dt: float = 0.01
    memory_len: int = DEFAULT_MEMORY_LEN
    anti_windup: bool = True
    e_scale: float = DEFAULT_E_SCALE
    de_scale: float = DEFAULT_DE_SCALE

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidArgumentError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        for name in ("kp", "ki", "kd"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise InvalidArgumentError(f"{name} must be a finite gain >= 0, got {v!r}")
        if self.variant != "pid":
            for name in ("alpha", "beta"):
                v = getattr(self, name)
                if not 0 < v < 2:
                    raise InvalidArgumentError(f"{name} must lie in (0, 2), got {v!r}")
        if not (math.isfinite(self.u_max) and self.u_max > 0):
            raise InvalidArgumentError(f"u_max must be > 0, got {self.u_max!r}")
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise InvalidArgumentError(f"dt must be > 0, got {self.dt!r}")
        if self.memory_len < 1:
            raise InvalidArgumentError(f"memory_len must be >= 1, got {self.memory_len!r}")
        if not (self.e_scale > 0 and self.de_scale > 0):
            raise InvalidArgumentError("fuzzy input scales must be > 0")
        if self.variant == "fofpid":
            if self.gain_ranges is None or len(self.gain_ranges) != 3:
                raise InvalidArgumentError("fofpid needs gain_ranges = (kp_max, ki_max, kd_max)")
            gr = tuple(float(g) for g in self.gain_ranges)
            if not all(math.isfinite(g) and g >= 0 for g in gr):
                raise InvalidArgumentError(f"gain_ranges must be finite and >= 0, got {gr}")
            object.__setattr__(self, "gain_ranges", gr)
            mf = self.mf_vector if self.mf_vector is not None else (0.0,) * MF_VECTOR_LEN
            if len(mf) != MF_VECTOR_LEN:
                raise InvalidArgumentError(f"mf_vector must have {MF_VECTOR_LEN} entries")
            object.__setattr__(self, "mf_vector", tuple(float(v) for v in mf))
            if self.rules is None:
                object.__setattr__(self, "rules", RuleBase.default())

    @property
    def code(self) -> int:
        return VARIANT_CODE[self.variant]

    def packed(self) -> np.ndarray:
        kpm, kim, kdm = self.gain_ranges if self.gain_ranges is not None else (0.0, 0.0, 0.0)
        cp = np.zeros(13)
        cp[_KP], cp[_KI], cp[_KD] = self.kp, self.ki, self.kd
        cp[_KPM], cp[_KIM], cp[_KDM] = kpm, kim, kdm
        cp[_UMAX] = self.u_max
        cp[_DT] = self.dt
        cp[_SI] = self.dt ** self.alpha
        cp[_SD] = self.dt ** (-self.beta)
        cp[_AW] = 1.0 if self.anti_windup else 0.0
        cp[_ES], cp[_DES] = self.e_scale, self.de_scale
        return cp

    def scheduler(self) -> FuzzyScheduler | None:
        if self.variant != "fofpid":
            return None
        return FuzzyScheduler(encode_mf(self.mf_vector), self.rules)

    def with_dt(self, dt: float) -> "ControllerConfig":
        """Same controller at another sample time.

        ``memory_len`` is rescaled so the fractional memory spans the same
        number of minutes; a fixed sample count would silently shorten the
        window and drop part of the integral tail.
        """
        mem = max(1, round(self.memory_len * self.dt / dt))
        return replace(self, dt=dt, memory_len=mem)


_EMPTY_F = np.zeros(5)
_EMPTY_MU = np.zeros((5, 1))
_EMPTY_RULES = np.full((3, 5, 5), 2, dtype=np.int64)


@dataclass
class ControllerState:
    frac_int: FracOperator | None
    frac_der: FracOperator | None
    prev_error: float = 0.0
    prev_u: float = 0.0
    running_sum: float = 0.0
    # scheduled gains from the last step, for inspection
    last_gains: tuple[float, float, float] = (0.0, 0.0, 0.0)
    _fuzzy: FuzzyScheduler | None = field(default=None, repr=False)


def reset_controller(cfg: ControllerConfig) -> ControllerState:
    """Fresh controller state: empty operator histories, zero previous error and output."""
    if cfg.variant == "pid":
        fi = fd = None
    else:
        fi = FracOperator(cfg.alpha, INTEGRAL, cfg.dt, cfg.memory_len)
        fd = FracOperator(cfg.beta, DERIVATIVE, cfg.dt, cfg.memory_len)
    return ControllerState(fi, fd, _fuzzy=cfg.scheduler())


def kernel_args(cfg: ControllerConfig, st: ControllerState):
    """Arrays passed to :func:`_control_kernel` (shares buffers with ``st``)."""
    if st.frac_int is not None:
        ibuf, iwrev, iptr = st.frac_int._buf, st.frac_int._wrev, st.frac_int._ptr
        dbuf, dwrev, dptr = st.frac_der._buf, st.frac_der._wrev, st.frac_der._ptr
    else:
        ibuf = dbuf = np.zeros(2)
        iwrev = dwrev = np.zeros(1)
        iptr = np.array([0, 0], dtype=np.int64)
        dptr = np.array([0, 0], dtype=np.int64)
    fz = st._fuzzy
    if fz is not None:
        fuzzy = (fz.in1, fz.in2, fz.out_mu, fz.grid, fz.rule_idx)
    else:
        fuzzy = (_EMPTY_F, _EMPTY_F, _EMPTY_MU, np.zeros(1), _EMPTY_RULES)
    return (ibuf, iwrev, iptr, dbuf, dwrev, dptr) + fuzzy


def control_step(cfg: ControllerConfig, st: ControllerState, bis_measured: float,
                 bis_target: float) -> tuple[float, ControllerState]:
    """Compute the infusion command (mg/min) for one sample and advance ``st``."""
    if not (math.isfinite(bis_measured) and math.isfinite(bis_target)):
        raise InvalidArgumentError("BIS values must be finite")
    e = float(bis_measured) - float(bis_target)
    fst = np.array([st.prev_error, st.prev_u, st.running_sum])
    u, u_raw, kp, ki, kd = _control_kernel(cfg.code, cfg.packed(), fst, *kernel_args(cfg, st), e)
    st.prev_error, st.prev_u, st.running_sum = float(fst[0]), float(fst[1]), float(fst[2])
    st.last_gains = (float(kp), float(ki), float(kd))
    if not math.isfinite(u_raw):
        raise NumericBlowupError(f"controller output became non-finite (u_raw={u_raw!r})")
    return float(u), st


class Controller:
    """Convenience wrapper bundling a config with its running state."""

    def __init__(self, cfg: ControllerConfig):
        self.cfg = cfg
        self.state = reset_controller(cfg)

    def __call__(self, bis_measured: float, bis_target: float = 50.0) -> float:
        u, self.state = control_step(self.cfg, self.state, bis_measured, bis_target)
        return u

    def reset(self) -> "Controller":
        self.state = reset_controller(self.cfg)
        return self


# --------------------------------------------------------------------------
# search-space decoding

def search_dim(variant: str) -> int:
    if variant not in PARAM_NAMES:
        raise InvalidArgumentError(f"unknown variant {variant!r}")
    return len(PARAM_NAMES[variant])


def _bound(bounds: Mapping[str, Sequence[float]], name: str) -> tuple[float, float]:
    if name.startswith("mf_"):
        key = "mf_output" if name.startswith("mf_o") else "mf_input"
        lo, hi = bounds[key]
    else:
        lo, hi = bounds[name]
    return float(lo), float(hi)


def decode_agent(vector: Sequence[float], variant: str, bounds: Mapping[str, Sequence[float]] | None = None,
                 base: ControllerConfig | None = None) -> ControllerConfig:
    """Map agent coordinates in ``[0, 1]^n`` affinely onto the parameter box.

    ``base`` supplies everything that is not searched (u_max, dt, rules...).
    Coordinates outside ``[0, 1]`` are clipped.
    """
    names = PARAM_NAMES.get(variant)
    if names is None:
        raise InvalidArgumentError(f"unknown variant {variant!r}")
    v = np.asarray(vector, dtype=float)
    if v.shape != (len(names),):
        raise InvalidArgumentError(f"{variant} agent vector must have {len(names)} entries, got shape {v.shape}")
    bounds = DEFAULT_BOUNDS[variant] if bounds is None else bounds
    v = np.clip(v, 0.0, 1.0)
    values = {}
    for k, name in enumerate(names):
        lo, hi = _bound(bounds, name)
        values[name] = float(lo + v[k] * (hi - lo))

    common = {}
    if base is not None:
        common = dict(u_max=base.u_max, dt=base.dt, memory_len=base.memory_len,
                      anti_windup=base.anti_windup, e_scale=base.e_scale, de_scale=base.de_scale)
    if variant == "pid":
        return ControllerConfig("pid", kp=values["kp"], ki=values["ki"], kd=values["kd"], **common)
    if variant == "fopid":
        return ControllerConfig("fopid", kp=values["kp"], ki=values["ki"], kd=values["kd"],
                                alpha=values["alpha"], beta=values["beta"], **common)
    gr = (values["kp_max"], values["ki_max"], values["kd_max"])
    mf_raw = [values[n] for n in names[5:]]
    # store the repaired offsets so the saved vector is canonical
    mf = tuple(float(x) for x in decode_mf(encode_mf(mf_raw)))
    rules = base.rules if base is not None and base.rules is not None else None
    return ControllerConfig("fofpid", kp=gr[0] / 2, ki=gr[1] / 2, kd=gr[2] / 2,
                            alpha=values["alpha"], beta=values["beta"],
                            gain_ranges=gr, mf_vector=mf, rules=rules, **common)
