"""Whale Optimization Algorithm for bound-constrained minimisation, plus the
controller-tuning driver built on it.

Update rules per agent and iteration (``a`` falls linearly from 2 to 0)::

    A = 2 a r1 - a,  C = 2 r2              (r1, r2 uniform, per dimension)
    p < 0.5, |A| >= 1:  X' = X_rand - A * |C X_rand - X|     exploration
    p < 0.5, |A| <  1:  X' = X*     - A * |C X*     - X|     encircling
    p >= 0.5:           X' = |X* - X| e^(b l) cos(2 pi l) + X*   spiral

``|A|`` is the Euclidean norm, ``l`` is uniform on [-1, 1] and positions are
clamped to the box.  All random numbers for an iteration are drawn before
any objective evaluation, in a fixed order, from ``numpy.random.PCG64``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .control import DEFAULT_BOUNDS, PARAM_NAMES, ControllerConfig, _bound, decode_agent
from .errors import InvalidArgumentError, NumericBlowupError
from .pkpd import PatientProfile
from .simloop import SimConfig, cost_within

ANCHORS = ("random", "best")
BRANCHES = ("exploration", "encircling", "spiral")
RNG_NAME = "numpy.random.PCG64"


@dataclass(frozen=True)
class WoaConfig:
    pop_size: int = 30
    max_iter: int = 100
    spiral_b: float = 1.0
    seed: int = 0
    # Anchor of the exploration move: "random" follows the original algorithm
    # (X_rand), "best" substitutes the incumbent X*.
    exploration_anchor: str = "random"
    dim: int | None = None
    bounds: tuple[tuple[float, float], ...] | None = None
    workers: int = 1

    def __post_init__(self):
        if int(self.pop_size) != self.pop_size or self.pop_size < 2:
            raise InvalidArgumentError(f"pop_size must be an integer >= 2, got {self.pop_size!r}")
        if int(self.max_iter) != self.max_iter or self.max_iter < 0:
            raise InvalidArgumentError(f"max_iter must be an integer >= 0, got {self.max_iter!r}")
        if not math.isfinite(self.spiral_b):
            raise InvalidArgumentError("spiral_b must be finite")
        if self.exploration_anchor not in ANCHORS:
            raise InvalidArgumentError(f"exploration_anchor must be one of {ANCHORS}")
        if self.workers < 1:
            raise InvalidArgumentError("workers must be >= 1")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise InvalidArgumentError("seed must fit in an unsigned 64-bit integer")
        if self.bounds is not None:
            b = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
            if not b:
                raise InvalidArgumentError("bounds must not be empty")
            for k, (lo, hi) in enumerate(b):
                if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                    raise InvalidArgumentError(f"dimension {k}: need finite low < high, got ({lo}, {hi})")
            if self.dim is not None and self.dim != len(b):
                raise InvalidArgumentError(f"dim {self.dim} does not match {len(b)} bounds")
            object.__setattr__(self, "bounds", b)
            object.__setattr__(self, "dim", len(b))
        elif self.dim is not None and self.dim < 1:
            raise InvalidArgumentError("dim must be >= 1")
        object.__setattr__(self, "pop_size", int(self.pop_size))
        object.__setattr__(self, "max_iter", int(self.max_iter))
        object.__setattr__(self, "seed", int(self.seed))

    def box(self) -> tuple[np.ndarray, np.ndarray]:
        if self.bounds is not None:
            b = np.asarray(self.bounds, dtype=np.float64)
            return b[:, 0].copy(), b[:, 1].copy()
        if self.dim is None:
            raise InvalidArgumentError("WoaConfig needs either bounds or dim")
        return np.zeros(self.dim), np.ones(self.dim)


@dataclass
class WoaResult:
    best_position: np.ndarray
    best_fitness: float
    trace: np.ndarray  # best fitness after iteration k, k = 0 is the initial population
    counters: dict[str, int]
    status: str  # "completed", or "unconverged" when no update iteration ran
    evaluations: int = 0

    @property
    def n_iter(self) -> int:
        return len(self.trace) - 1


def a_schedule(t: int | float, max_iter: int) -> float:
    """Linearly decreasing coefficient, ``2`` at ``t = 0`` and ``0`` at ``t = max_iter``."""
    if max_iter <= 0:
        raise InvalidArgumentError("max_iter must be > 0")
    return 2.0 * (1.0 - t / max_iter)


def _evaluate(objective, positions: np.ndarray, pool, bound=None) -> np.ndarray:
    fn = objective if bound is None else (lambda x: objective(x, bound))
    if pool is None:
        vals = [fn(x.copy()) for x in positions]
    else:
        vals = list(pool.map(fn, [x.copy() for x in positions]))
    out = np.empty(len(vals))
    for k, v in enumerate(vals):
        try:
            v = float(v)
        except (TypeError, ValueError):
            v = math.inf
        out[k] = v if math.isfinite(v) else math.inf
    return out


def optimize(cfg: WoaConfig, objective: Callable[..., float], *, bounded: bool = False) -> WoaResult:
    """Minimise ``objective`` over the box in ``cfg``.

    Non-finite objective values count as ``+inf``.  The incumbent is only
    replaced by a strictly better agent, so the trace never increases.

    With ``bounded=True`` the objective is called as ``objective(x, bound)``
    where ``bound`` is the incumbent fitness before the current pass; it may
    then return any value above ``bound`` instead of the exact fitness for
    agents that cannot win.  Only the incumbent steers the search, so the
    trajectory, incumbent and trace are unchanged.
    """
    lo, hi = cfg.box()
    dim, n = lo.size, cfg.pop_size
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    counters = {name: 0 for name in BRANCHES}
    counters["nonfinite"] = 0

    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        X = lo + rng.random((n, dim)) * (hi - lo)
        fit = _evaluate(objective, X, pool, math.inf if bounded else None)
        counters["nonfinite"] += int(np.sum(np.isinf(fit)))
        ib = int(np.argmin(fit))
        best_x, best_f = X[ib].copy(), float(fit[ib])
        trace = [best_f]

        for t in range(cfg.max_iter):
            a = a_schedule(t, cfg.max_iter)
            r1 = rng.random((n, dim))
            r2 = rng.random((n, dim))
            p = rng.random(n)
            ell = rng.uniform(-1.0, 1.0, n)
            pick = rng.integers(0, n, n)

            new = np.empty_like(X)
            for i in range(n):
                A = 2.0 * a * r1[i] - a
                C = 2.0 * r2[i]
                if p[i] < 0.5:
                    if np.linalg.norm(A) >= 1.0:
                        anchor = X[pick[i]] if cfg.exploration_anchor == "random" else best_x
                        counters["exploration"] += 1
                    else:
                        anchor = best_x
                        counters["encircling"] += 1
                    new[i] = anchor - A * np.abs(C * anchor - X[i])
                else:
                    dist = np.abs(best_x - X[i])
                    new[i] = dist * math.exp(cfg.spiral_b * ell[i]) * math.cos(2.0 * math.pi * ell[i]) + best_x
                    counters["spiral"] += 1
            X = np.clip(new, lo, hi)

            fit = _evaluate(objective, X, pool, best_f if bounded else None)
            counters["nonfinite"] += int(np.sum(np.isinf(fit)))
            ib = int(np.argmin(fit))
            if fit[ib] < best_f:
                best_x, best_f = X[ib].copy(), float(fit[ib])
            trace.append(best_f)
    finally:
        if pool is not None:
            pool.shutdown()

    return WoaResult(best_x, best_f, np.asarray(trace), counters,
                     "completed" if cfg.max_iter > 0 else "unconverged",
                     evaluations=n * (cfg.max_iter + 1))


# --------------------------------------------------------------------------
# controller tuning

@dataclass(frozen=True)
class SearchSpace:
    """Agent box for one controller variant.

    Parameters whose bound has ``low == high`` are pinned and excluded from
    the search; the optimiser works on ``[0, 1]`` for every free parameter.
    """

    variant: str
    bounds: Mapping[str, tuple[float, float]]

    def __post_init__(self):
        if self.variant not in PARAM_NAMES:
            raise InvalidArgumentError(f"unknown variant {self.variant!r}")
        for name in self.names:
            lo, hi = _bound(self.bounds, name)
            if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
                raise InvalidArgumentError(f"bound for {name} must satisfy low <= high, got ({lo}, {hi})")

    @property
    def names(self) -> tuple[str, ...]:
        return PARAM_NAMES[self.variant]

    @property
    def free(self) -> tuple[int, ...]:
        out = []
        for k, name in enumerate(self.names):
            lo, hi = _bound(self.bounds, name)
            if hi > lo:
                out.append(k)
        return tuple(out)

    def full_vector(self, free_coords: Sequence[float]) -> np.ndarray:
        v = np.zeros(len(self.names))
        v[list(self.free)] = free_coords
        return v

    def decode(self, free_coords: Sequence[float], base: ControllerConfig | None = None) -> ControllerConfig:
        return decode_agent(self.full_vector(free_coords), self.variant, self.bounds, base)


@dataclass
class TuneResult:
    config: ControllerConfig
    woa: WoaResult
    audit: dict = field(default_factory=dict)


# relative slack so round-off in the early-exit sum never discards a winner
PRUNE_SLACK = 1e-9


def cohort_cost(ctrl: ControllerConfig, patients: Sequence[PatientProfile], sim: SimConfig,
                bound: float = math.inf) -> float:
    """Mean of ``iae + itae`` over the patients; ``inf`` if any run blows up.

    With a finite ``bound`` the evaluation may stop as soon as the mean is
    certain to exceed it, returning a value above ``bound``.
    """
    n = len(patients)
    budget = n * bound * (1.0 + PRUNE_SLACK) if math.isfinite(bound) else math.inf
    total = 0.0
    for p in patients:
        try:
            cost, done = cost_within(p, ctrl, sim, budget - total)
        except NumericBlowupError:
            return math.inf
        if not done:
            return max(budget / n, math.nextafter(bound, math.inf))
        total += cost
    return total / n


def tune_controller(variant: str, patients: Sequence[PatientProfile], sim: SimConfig, cfg: WoaConfig,
                    bounds: Mapping[str, Sequence[float]] | None = None,
                    base: ControllerConfig | None = None, prune: bool = True) -> TuneResult:
    """Tune ``variant`` on the cohort by minimising the mean IAE + ITAE.

    ``prune`` stops simulations of agents that can no longer beat the
    incumbent; the result is identical either way, only faster.
    """
    if not patients:
        raise InvalidArgumentError("tuning needs at least one patient")
    bounds = dict(DEFAULT_BOUNDS[variant] if bounds is None else bounds)
    space = SearchSpace(variant, {k: tuple(v) for k, v in bounds.items()})
    if base is None:
        base = ControllerConfig("pid", dt=sim.dt)
    elif abs(base.dt - sim.dt) > 1e-15:
        base = base.with_dt(sim.dt)

    free = space.free
    if not free:
        raise InvalidArgumentError("every parameter is pinned; nothing to tune")
    wcfg = replace(cfg, dim=None, bounds=((0.0, 1.0),) * len(free))

    def objective(x: np.ndarray, bound: float = math.inf) -> float:
        return cohort_cost(space.decode(x, base), patients, sim, bound)

    res = optimize(wcfg, objective, bounded=prune)
    best = space.decode(res.best_position, base)
    audit = {
        "variant": variant,
        "status": res.status,
        "best_cost": res.best_fitness,
        "seed": cfg.seed,
        "rng": RNG_NAME,
        "pop_size": cfg.pop_size,
        "max_iter": cfg.max_iter,
        "spiral_b": cfg.spiral_b,
        "exploration_anchor": cfg.exploration_anchor,
        "bound_handling": "clamp",
        "bounds": {k: [float(v[0]), float(v[1])] for k, v in bounds.items()},
        "free_parameters": [space.names[k] for k in free],
        "agent_position": [float(v) for v in res.best_position],
        "branch_counts": {k: int(v) for k, v in res.counters.items()},
        "evaluations": res.evaluations,
        "patients": [p.id for p in patients],
        "trace": [float(v) for v in res.trace],
    }
    return TuneResult(best, res, audit)


def woa_config_dict(cfg: WoaConfig) -> dict:
    d = asdict(cfg)
    d.pop("dim")
    d.pop("bounds")
    return d
