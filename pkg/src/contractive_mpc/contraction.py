"""Finite-step contraction: the triple (W, gamma, N) and its certification.

The nonholonomic example admits an explicit three-move contracting sequence:
park ``x1`` at some ``x1*``, push the planar part ``z = (x2, x3)`` along
``(1, x1*)`` with a single ``u2`` move, then bring ``x1`` back to zero.
:func:`appendix_sequence` picks ``(x1*, u2*)`` minimising the resulting
``|z*|``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .model import ContractError, Model, NonholonomicParams, rollout_batch

GRID_POINTS = 257
REFINE_TOL = 1e-10
MAX_REJECTIONS = 10**6


def squared_norm(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return (x * x).sum(axis=-1)


@dataclass(frozen=True)
class ContractionSpec:
    gamma: float
    horizon: int
    w: Callable[[np.ndarray], np.ndarray] = squared_norm

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ContractError("gamma must lie in (0, 1)")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ContractError("horizon must be a positive integer")


@dataclass
class ContractionReport:
    samples: int
    successes: int
    worst_ratio: float
    worst_state: list
    seed: int
    gamma: float
    horizon: int

    def to_dict(self) -> dict:
        return {"schema": 1, **asdict(self)}


def w_min(spec: ContractionSpec, model: Model, x, useq, q: int) -> tuple[float, int]:
    """Smallest ``W`` over the first ``q`` predicted states and its 1-based index.

    Ties resolve to the earliest index.
    """
    useq = np.asarray(useq, dtype=float).reshape(-1, model.m)
    if not 1 <= q <= len(useq):
        raise ContractError(f"q={q} outside 1..{len(useq)}")
    states = rollout_batch(model, x, useq[:q])
    ws = spec.w(states)
    ell = int(np.argmin(ws))
    return float(ws[ell]), ell + 1


# --- analytic contraction sequence -----------------------------------------


def _clamped_push(z, t, u2_bar):
    """Best ``u2`` in ``[-u2_bar, u2_bar]`` for direction ``(1, t)`` and the squared residual."""
    t = np.asarray(t, dtype=float)
    dd = 1.0 + t * t
    u = np.clip(-(z[0] + z[1] * t) / dd, -u2_bar, u2_bar)
    r1 = z[0] + u
    r2 = z[1] + t * u
    return u, r1 * r1 + r2 * r2


def appendix_inner(z, p: NonholonomicParams) -> tuple[float, float]:
    """Minimise ``|z + (1, x1*) u2*|^2`` over the box; returns ``(x1*, u2*)``.

    ``u2*`` is solved in closed form for each ``x1*``; the outer problem is a
    grid search refined by bounded Brent iterations in the best cell. Grid
    ties go to the smallest ``|x1*|``.
    """
    z = np.asarray(z, dtype=float)
    rho, u2_bar = float(p.rho), float(p.u2_bar)
    grid = np.linspace(-rho, rho, GRID_POINTS)
    _, vals = _clamped_push(z, grid, u2_bar)
    ties = np.flatnonzero(vals == vals.min())
    i = ties[np.argmin(np.abs(grid[ties]))]
    best_t, best_v = grid[i], vals[i]

    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, GRID_POINTS - 1)]
    res = minimize_scalar(
        lambda t: float(_clamped_push(z, t, u2_bar)[1]),
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": REFINE_TOL},
    )
    if res.fun < best_v:
        best_t = float(np.clip(res.x, -rho, rho))
    u, _ = _clamped_push(z, best_t, u2_bar)
    return float(best_t), float(u)


def appendix_sequence(x, p: NonholonomicParams) -> np.ndarray:
    """Three-move contracting sequence for the nonholonomic integrator.

    Parameters
    ----------
    x : array_like, shape (3,)
        Admissible state.
    p : NonholonomicParams

    Returns
    -------
    ndarray, shape (3, 2)
        ``[(x1* - x1, 0), (0, u2*), (-x1*, 0)]``. The realised park position
        is used for the last two moves so that ``x1`` returns exactly to 0.
    """
    x = np.asarray(x, dtype=float)
    rho, b = float(p.rho), float(p.b)
    if x.shape != (3,) or abs(x[0]) > rho or x[1] * x[1] + x[2] * x[2] > b * b:
        raise ContractError(f"state {x} is not admissible")
    z = x[1:]
    x1s, _ = appendix_inner(z, p)

    u1 = x1s - x[0]
    park = x[0] + u1
    while abs(park) > rho:  # at most a few ulps
        u1 = np.nextafter(u1, 0.0)
        park = x[0] + u1
    # re-solve the push for the realised park position
    u2, _ = _clamped_push(z, park, float(p.u2_bar))
    u2 = float(u2)
    zs = (z[0] + u2, z[1] + park * u2)
    if zs[0] * zs[0] + zs[1] * zs[1] > b * b:
        u2 = 0.0  # rounding pushed the boundary case outside; stay put
    return np.array([[u1, 0.0], [0.0, u2], [-park, 0.0]])


# --- randomised certification ------------------------------------------------


def sample_admissible(model: Model, rng: np.random.Generator, max_rejections: int = MAX_REJECTIONS) -> np.ndarray:
    """Uniform sample of the admissible set by rejection from its bounding box."""
    if model.state_lower is None or model.state_upper is None:
        raise ContractError(f"model {model.name!r} declares no bounding box")
    for _ in range(max_rejections):
        x = rng.uniform(model.state_lower, model.state_upper)
        if np.all(model.constraint_map(x) <= 0.0):
            return x
    raise RuntimeError(f"no admissible sample after {max_rejections} rejections")


def verify_contraction(
    model: Model,
    spec: ContractionSpec,
    samples: int,
    seed: int,
    solver: Optional[Callable] = None,
    cfg=None,
    states: Optional[Sequence] = None,
) -> ContractionReport:
    """Randomised check of the N-step contraction property on G.

    Each sampled state is handed to the max-contraction solver (stage one of
    the two-stage procedure); a sample succeeds when the returned sequence is
    admissible and its minimum ``W`` is at most ``gamma * W(x)``. ``states``
    overrides sampling.
    """
    if samples < 1:
        raise ContractError("at least one sample is required")
    if solver is None:
        from .solver import stage1_max_contraction as solver
    if cfg is None:
        from .solver import SolverConfig

        cfg = SolverConfig(seed=seed)

    rng = np.random.default_rng(seed)
    successes, worst_ratio, worst_state = 0, 0.0, None
    for i in range(samples):
        x = np.asarray(states[i], float) if states is not None else sample_admissible(model, rng)
        res = solver(model, spec, x, cfg, key=(i,))
        wx = float(spec.w(x))
        ratio = res.w_under_star / wx if wx > 0 else 0.0
        if res.feasible and res.w_under_star <= spec.gamma * wx:
            successes += 1
        if worst_state is None or ratio > worst_ratio:
            worst_ratio, worst_state = ratio, x
    return ContractionReport(
        samples=samples,
        successes=successes,
        worst_ratio=float(worst_ratio),
        worst_state=[float(v) for v in worst_state],
        seed=seed,
        gamma=spec.gamma,
        horizon=spec.horizon,
    )
