"""Two-input, three-output Mamdani inference for gain scheduling.

Inputs are the normalised error and error rate in [-1, 1]; outputs are gain
multipliers in [0, 1] for K_P, K_I and K_D.  Every variable has five
triangular sets NL, NS, Z, PS, PL whose feet sit on the neighbouring apexes,
with flat shoulders beyond the outermost apexes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from typing import NamedTuple, Sequence

import numpy as np
import yaml

from ._jit import JIT_ENABLED, njit
from .errors import InvalidArgumentError

LABELS = ("NL", "NS", "Z", "PS", "PL")
OUTPUTS = ("kp", "ki", "kd")
MIN_GAP = 0.02
N_CENTROID = 201
MF_VECTOR_LEN = 9

INPUT_DEFAULT = (-1.0, -0.5, 0.0, 0.5, 1.0)
OUTPUT_DEFAULT = (0.0, 0.25, 0.5, 0.75, 1.0)

CENTROID_GRID = np.linspace(0.0, 1.0, N_CENTROID)


# --------------------------------------------------------------------------
# kernels

@njit
def _locate(centers, x):
    """Active pair ``(k, r)``: label k has degree 1 - r and label k + 1 degree r."""
    if x <= centers[0]:
        return 0, 0.0
    if x >= centers[4]:
        return 3, 1.0
    k = 0
    while k < 3 and x > centers[k + 1]:
        k += 1
    return k, (x - centers[k]) / (centers[k + 1] - centers[k])


@njit
def _membership(centers, x):
    mu = np.zeros(5)
    k, r = _locate(centers, x)
    mu[k] = 1.0 - r
    mu[k + 1] += r
    return mu


@njit
def _membership_grid(centers, grid):
    out = np.empty((5, grid.shape[0]))
    for g in range(grid.shape[0]):
        out[:, g] = _membership(centers, grid[g])
    return out


@njit
def _centroid_loops(strength, out_mu, grid):
    # only grid points under an active label can carry mass
    lo = -1
    hi = -1
    for lab in range(5):
        if strength[lab] > 0.0:
            if lo < 0:
                lo = lab
            hi = lab
    if lo < 0:
        return 0.5
    n = grid.shape[0]
    g0 = 0
    while g0 < n and out_mu[lo, g0] == 0.0:
        g0 += 1
    g1 = n - 1
    while g1 > g0 and out_mu[hi, g1] == 0.0:
        g1 -= 1
    num = 0.0
    den = 0.0
    for g in range(g0, g1 + 1):
        m = 0.0
        for lab in range(5):
            s = strength[lab]
            if s > 0.0:
                v = out_mu[lab, g]
                if v > s:
                    v = s
                if v > m:
                    m = v
        num += m * grid[g]
        den += m
    return num / den if den > 0.0 else 0.5


def _centroid_numpy(strength, out_mu, grid):
    agg = np.minimum(out_mu, strength[:, None]).max(axis=0)
    den = agg.sum()
    return float(np.dot(agg, grid) / den) if den > 0.0 else 0.5


# compiled loops beat temporaries under numba; plain numpy wants the vector form
_centroid = _centroid_loops if JIT_ENABLED else _centroid_numpy


@njit
def _infer(e_norm, de_norm, in1, in2, out_mu, grid, rules):
    """Mamdani min/max with centroid defuzzification; returns 3 multipliers."""
    e = min(max(e_norm, -1.0), 1.0)
    de = min(max(de_norm, -1.0), 1.0)
    k1, r1 = _locate(in1, e)
    k2, r2 = _locate(in2, de)
    strength = np.zeros((3, 5))
    for a in range(2):
        w1 = r1 if a == 1 else 1.0 - r1
        if w1 == 0.0:
            continue
        for b in range(2):
            w2 = r2 if b == 1 else 1.0 - r2
            if w2 == 0.0:
                continue
            w = min(w1, w2)
            for o in range(3):
                lab = rules[o, k1 + a, k2 + b]
                if w > strength[o, lab]:
                    strength[o, lab] = w
    gains = np.empty(3)
    for o in range(3):
        gains[o] = _centroid(strength[o], out_mu, grid)
    return gains


# --------------------------------------------------------------------------
# types

@dataclass(frozen=True)
class MembershipSet:
    centers: tuple[float, ...]
    labels: tuple[str, ...] = LABELS

    def __post_init__(self):
        c = tuple(float(v) for v in self.centers)
        if len(c) != 5:
            raise InvalidArgumentError(f"need 5 centers, got {len(c)}")
        if not all(math.isfinite(v) for v in c):
            raise InvalidArgumentError("centers must be finite")
        if any(b <= a for a, b in zip(c, c[1:])):
            raise InvalidArgumentError(f"centers must be strictly increasing, got {c}")
        object.__setattr__(self, "centers", c)

    def array(self) -> np.ndarray:
        return np.array(self.centers, dtype=np.float64)


def membership(mset: MembershipSet, x: float) -> np.ndarray:
    """Degrees of the five labels at ``x`` (saturating outside the outer apexes)."""
    if not math.isfinite(x):
        raise InvalidArgumentError(f"input must be finite, got {x!r}")
    return _membership(mset.array(), float(x))


class FuzzyGains(NamedTuple):
    kp_norm: float
    ki_norm: float
    kd_norm: float


@dataclass(frozen=True)
class RuleBase:
    """Consequent label per (error label, rate label) cell, one table per output."""

    kp: tuple[tuple[str, ...], ...]
    ki: tuple[tuple[str, ...], ...]
    kd: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        for name in OUTPUTS:
            table = getattr(self, name)
            rows = tuple(tuple(str(c) for c in row) for row in table)
            if len(rows) != 5 or any(len(r) != 5 for r in rows):
                raise InvalidArgumentError(f"rule table {name!r} must be 5x5")
            bad = {c for r in rows for c in r if c not in LABELS}
            if bad:
                raise InvalidArgumentError(f"rule table {name!r} uses unknown labels {sorted(bad)}")
            object.__setattr__(self, name, rows)

    def as_array(self) -> np.ndarray:
        idx = {lab: k for k, lab in enumerate(LABELS)}
        return np.array([[[idx[c] for c in row] for row in getattr(self, name)] for name in OUTPUTS],
                        dtype=np.int64)

    def to_dict(self) -> dict:
        return {name: [list(row) for row in getattr(self, name)] for name in OUTPUTS}

    @classmethod
    def from_dict(cls, data: dict) -> "RuleBase":
        return cls(**{name: data[name] for name in OUTPUTS})

    @classmethod
    def uniform(cls, label: str = "Z") -> "RuleBase":
        table = tuple((label,) * 5 for _ in range(5))
        return cls(table, table, table)

    @classmethod
    def default(cls) -> "RuleBase":
        return _default_rules()

    def is_odd_symmetric(self) -> bool:
        a = self.as_array()
        return bool(np.all(a[:, ::-1, ::-1] == 4 - a))


def _default_rules() -> RuleBase:
    text = resources.files("doasim").joinpath("data/default_rules.yaml").read_text()
    return RuleBase.from_dict(yaml.safe_load(text))


@dataclass(frozen=True)
class MfGeometry:
    error: MembershipSet
    rate: MembershipSet
    output: MembershipSet

    @classmethod
    def default(cls) -> "MfGeometry":
        return cls(MembershipSet(INPUT_DEFAULT), MembershipSet(INPUT_DEFAULT), MembershipSet(OUTPUT_DEFAULT))


class FuzzyScheduler:
    """Pre-computed arrays for repeated inference with one geometry/rule base."""

    def __init__(self, geometry: MfGeometry, rules: RuleBase):
        self.geometry = geometry
        self.rules = rules
        self.in1 = geometry.error.array()
        self.in2 = geometry.rate.array()
        self.out_mu = np.ascontiguousarray(_membership_grid(geometry.output.array(), CENTROID_GRID))
        self.grid = CENTROID_GRID
        self.rule_idx = rules.as_array()

    def __call__(self, e_norm: float, de_norm: float) -> FuzzyGains:
        if not (math.isfinite(e_norm) and math.isfinite(de_norm)):
            raise InvalidArgumentError("fuzzy inputs must be finite")
        g = _infer(float(e_norm), float(de_norm), self.in1, self.in2, self.out_mu, self.grid, self.rule_idx)
        return FuzzyGains(float(g[0]), float(g[1]), float(g[2]))


def infer(e_norm: float, de_norm: float, rules: RuleBase, in1: MembershipSet,
          in2: MembershipSet, out: MembershipSet) -> FuzzyGains:
    return FuzzyScheduler(MfGeometry(in1, in2, out), rules)(e_norm, de_norm)


# --------------------------------------------------------------------------
# membership geometry <-> optimisable vector
#
# The vector holds 9 offsets of the interior apexes from the uniform layout:
# [error c1..c3, rate c1..c3, output c1..c3].  Outer apexes stay pinned at
# -1/+1 (inputs) and 0/1 (output).

def _repair_gaps(c: np.ndarray, lo: float, hi: float, gap: float) -> np.ndarray:
    """Push interior points apart to at least ``gap`` inside ``[lo, hi]``."""
    c = np.clip(np.sort(c), lo + gap, hi - gap)
    prev = lo
    for k in range(len(c)):
        c[k] = max(c[k], prev + gap)
        prev = c[k]
    nxt = hi
    for k in range(len(c) - 1, -1, -1):
        c[k] = min(c[k], nxt - gap)
        nxt = c[k]
    return c


def _input_set(offsets: Sequence[float]) -> MembershipSet:
    raw = np.clip(np.asarray(INPUT_DEFAULT[1:4]) + np.asarray(offsets, dtype=float), -1.0, 1.0)
    c1, mid, c3 = np.sort(raw)
    mid = min(max(mid, -1.0 + MIN_GAP), 1.0 - MIN_GAP)
    if mid != 0.0:
        # piecewise-linear renormalisation that moves the middle apex onto zero
        c1 = -1.0 + (c1 + 1.0) / (mid + 1.0)
        c3 = (c3 - mid) / (1.0 - mid)
    c1 = min(max(c1, -1.0 + MIN_GAP), -MIN_GAP)
    c3 = min(max(c3, MIN_GAP), 1.0 - MIN_GAP)
    return MembershipSet((-1.0, c1, 0.0, c3, 1.0))


def _output_set(offsets: Sequence[float]) -> MembershipSet:
    raw = np.asarray(OUTPUT_DEFAULT[1:4]) + np.asarray(offsets, dtype=float)
    c = _repair_gaps(raw, 0.0, 1.0, MIN_GAP)
    return MembershipSet((0.0, *map(float, c), 1.0))


def encode_mf(vector: Sequence[float]) -> MfGeometry:
    """Build (repaired) membership geometry from a 9-element offset vector."""
    v = np.asarray(vector, dtype=float)
    if v.shape != (MF_VECTOR_LEN,):
        raise InvalidArgumentError(f"MF vector must have {MF_VECTOR_LEN} entries, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InvalidArgumentError("MF vector must be finite")
    return MfGeometry(_input_set(v[0:3]), _input_set(v[3:6]), _output_set(v[6:9]))


def decode_mf(geometry: MfGeometry) -> np.ndarray:
    """Inverse of :func:`encode_mf` on repaired geometries."""
    parts = [np.asarray(geometry.error.centers[1:4]) - np.asarray(INPUT_DEFAULT[1:4]),
             np.asarray(geometry.rate.centers[1:4]) - np.asarray(INPUT_DEFAULT[1:4]),
             np.asarray(geometry.output.centers[1:4]) - np.asarray(OUTPUT_DEFAULT[1:4])]
    return np.concatenate(parts)
