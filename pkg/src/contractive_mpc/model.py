"""Discrete-time controlled systems with box inputs and inequality state constraints.

A :class:`Model` bundles the map ``x+ = f(x, u)``, the control box and the
constraint map ``g`` whose non-positive set is the admissible region. All
callables are written on the trailing axis so that a population of states
or controls of shape ``(..., n)`` / ``(..., m)`` can be propagated at once.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


class ContractError(ValueError):
    """Raised when an operation is called outside its precondition."""


@dataclass(frozen=True)
class Model:
    name: str
    n: int
    m: int
    dynamics: Callable[[np.ndarray, np.ndarray], np.ndarray]
    control_lower: np.ndarray
    control_upper: np.ndarray
    constraint_map: Callable[[np.ndarray], np.ndarray]
    # (x, spec) -> control sequence whose rollout stays admissible
    hint: Optional[Callable] = None
    # bounding box of the admissible set, used for rejection sampling
    state_lower: Optional[np.ndarray] = None
    state_upper: Optional[np.ndarray] = None
    params: object = None

    def __post_init__(self):
        lo = np.asarray(self.control_lower, dtype=float)
        hi = np.asarray(self.control_upper, dtype=float)
        if lo.shape != (self.m,) or hi.shape != (self.m,):
            raise ContractError("control bounds must have shape (m,)")
        if np.any(lo > hi):
            raise ContractError("control_lower must not exceed control_upper")
        object.__setattr__(self, "control_lower", lo)
        object.__setattr__(self, "control_upper", hi)

    def zero_control(self) -> np.ndarray:
        return np.clip(np.zeros(self.m), self.control_lower, self.control_upper)


@dataclass(frozen=True)
class NonholonomicParams:
    rho: float
    b: float
    mu: float
    u1_bar: Optional[float] = None

    def __post_init__(self):
        if not (self.rho > 0 and self.b > 0):
            raise ContractError("rho and b must be positive")
        if not self.mu > 0:
            raise ContractError("mu must be positive")
        if self.u1_bar is None:
            object.__setattr__(self, "u1_bar", 2.0 * self.rho)
        if self.u1_bar < 2.0 * self.rho:
            raise ContractError("u1_bar must be at least 2*rho")

    @property
    def u2_bar(self) -> float:
        return self.mu * self.b


@dataclass(frozen=True)
class DoubleIntegratorParams:
    tau: float
    u_bar: float
    r_bar: float

    def __post_init__(self):
        if not (self.tau > 0 and self.u_bar > 0 and self.r_bar > 0):
            raise ContractError("tau, u_bar and r_bar must be positive")


def _check_dims(model: Model, x, u=None):
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (model.n,):
        raise ContractError(f"state has shape {x.shape}, expected (..., {model.n})")
    if u is None:
        return x
    u = np.asarray(u, dtype=float)
    if u.shape[-1:] != (model.m,):
        raise ContractError(f"control has shape {u.shape}, expected (..., {model.m})")
    return x, u


def step(model: Model, x, u) -> np.ndarray:
    """One transition ``f(x, u)``; admissibility of ``u`` is not checked."""
    x, u = _check_dims(model, x, u)
    return model.dynamics(x, u)


def rollout(model: Model, x, useq) -> np.ndarray:
    """States ``x(1..q)`` visited under ``useq``, shape ``(q, n)``.

    The initial state is not included. An empty sequence gives an empty
    ``(0, n)`` array.
    """
    x = _check_dims(model, x)
    useq = np.asarray(useq, dtype=float).reshape(-1, model.m)
    states = np.empty((len(useq), model.n))
    for i, u in enumerate(useq):
        x = model.dynamics(x, u)
        states[i] = x
    return states


def rollout_batch(model: Model, x, useqs) -> np.ndarray:
    """Vectorised rollout of sequences ``(..., q, m)`` from a single state."""
    useqs = np.asarray(useqs, dtype=float)
    lead = useqs.shape[:-2]
    q = useqs.shape[-2]
    xs = np.broadcast_to(np.asarray(x, dtype=float), lead + (model.n,))
    out = np.empty(lead + (q, model.n))
    for i in range(q):
        xs = model.dynamics(xs, useqs[..., i, :])
        out[..., i, :] = xs
    return out


def check_state(model: Model, x) -> tuple[bool, np.ndarray]:
    """Return ``(admissible, g(x))`` with admissible iff every ``g_i <= 0``."""
    x = _check_dims(model, x)
    g = np.asarray(model.constraint_map(x), dtype=float)
    return bool(np.all(g <= 0.0)), g


def check_control(model: Model, u) -> bool:
    u = np.asarray(u, dtype=float)
    if u.shape != (model.m,):
        raise ContractError(f"control has shape {u.shape}, expected ({model.m},)")
    return bool(np.all(u >= model.control_lower) and np.all(u <= model.control_upper))


def admissible_rollout(model: Model, x, useq) -> bool:
    """True iff every visited state is in G and every control in U (no tolerance)."""
    useq = np.asarray(useq, dtype=float).reshape(-1, model.m)
    if not all(check_control(model, u) for u in useq):
        return False
    return all(check_state(model, s)[0] for s in rollout(model, x, useq))


# --- nonholonomic integrator -------------------------------------------------


def _nonholonomic_dynamics(x, u):
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    u1, u2 = u[..., 0], u[..., 1]
    return np.stack([x1 + u1, x2 + u2, x3 + x1 * u2], axis=-1)


def make_nonholonomic(p: NonholonomicParams) -> Model:
    """Three-state nonholonomic integrator on the set ``|x1| <= rho, x2^2 + x3^2 <= b^2``."""
    rho, b2 = float(p.rho), float(p.b) ** 2

    def g(x):
        x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
        return np.stack([np.abs(x1) - rho, x2 * x2 + x3 * x3 - b2], axis=-1)

    def hint(x, spec):
        from .contraction import appendix_sequence

        seq = appendix_sequence(x, p)
        horizon = spec.horizon
        if horizon <= len(seq):
            return seq[:horizon]
        # zero control freezes this system, so padding keeps the rollout in G
        return np.vstack([seq, np.zeros((horizon - len(seq), 2))])

    ubar = np.array([p.u1_bar, p.u2_bar], dtype=float)
    return Model(
        name="nonholonomic",
        n=3,
        m=2,
        dynamics=_nonholonomic_dynamics,
        control_lower=-ubar,
        control_upper=ubar,
        constraint_map=g,
        hint=hint,
        state_lower=np.array([-p.rho, -p.b, -p.b]),
        state_upper=np.array([p.rho, p.b, p.b]),
        params=p,
    )


# --- tightened double integrator -------------------------------------------


def make_tightened_double_integrator(p: DoubleIntegratorParams) -> Model:
    """Euler-discretised double integrator ``r+ = r + tau*v, v+ = v + tau*u``.

    The second constraint is the one-step lookahead tightening
    ``x1 + tau*x2 - sign(x2) * (u_bar*tau^2/2 + r_bar)`` with ``sign(0) = 0``.
    The velocity range of the sampling box is ``sqrt(4*u_bar*r_bar)``, the
    speed reached by full acceleration across the whole position range.
    """
    tau, ubar, rbar = float(p.tau), float(p.u_bar), float(p.r_bar)
    margin = 0.5 * ubar * tau**2 + rbar

    def f(x, u):
        r, v = x[..., 0], x[..., 1]
        return np.stack([r + tau * v, v + tau * u[..., 0]], axis=-1)

    def g(x):
        r, v = x[..., 0], x[..., 1]
        return np.stack([np.abs(r) - rbar, r + v * tau - np.sign(v) * margin], axis=-1)

    vbar = float(np.sqrt(4.0 * ubar * rbar))
    return Model(
        name="double_integrator",
        n=2,
        m=1,
        dynamics=f,
        control_lower=np.array([-ubar]),
        control_upper=np.array([ubar]),
        constraint_map=g,
        state_lower=np.array([-rbar, -vbar]),
        state_upper=np.array([rbar, vbar]),
        params=p,
    )


def viable_control(model: Model, x, grid: int = 2001) -> Optional[np.ndarray]:
    """Search a uniform control grid for ``u`` with ``f(x, u)`` admissible.

    Only single-input models are supported. Returns the admissible grid
    control closest to zero, or ``None`` if the grid has none.
    """
    if model.m != 1:
        raise ContractError("viable_control supports single-input models only")
    us = np.linspace(model.control_lower[0], model.control_upper[0], grid)[:, None]
    nxt = model.dynamics(np.broadcast_to(np.asarray(x, float), (grid, model.n)), us)
    ok = np.all(model.constraint_map(nxt) <= 0.0, axis=-1)
    if not ok.any():
        return None
    idx = np.flatnonzero(ok)
    return us[idx[np.argmin(np.abs(us[idx, 0]))]]

