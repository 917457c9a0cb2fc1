"""Stage costs, the cumulative cost Phi, the composite cost J and the alpha bound."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .contraction import ContractionSpec
from .model import ContractError, Model, NonholonomicParams, rollout_batch


@dataclass(frozen=True)
class StageCost:
    """Stage cost ``l(x, u)`` with its control-free part and an upper bound on G x U."""

    name: str
    l: Callable[[np.ndarray, np.ndarray], np.ndarray]
    l_bar: float
    m: int

    def q_part(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.l(x, np.zeros(x.shape[:-1] + (self.m,)))

    def __call__(self, x, u):
        return self.l(np.asarray(x, float), np.asarray(u, float))


def quadratic_stage_cost(name: str, state_weight, control_weight: float, l_bar: float, m: int) -> StageCost:
    """``x' S x + r |u|^2`` for a square ``S`` and ``r >= 0``."""
    S = np.asarray(state_weight, dtype=float)
    r = float(control_weight)
    if r < 0 or S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ContractError("invalid quadratic cost coefficients")

    def l(x, u):
        return np.einsum("...i,ij,...j->...", x, S, x) + r * (u * u).sum(axis=-1)

    return StageCost(name=name, l=l, l_bar=float(l_bar), m=m)


def l_bar_nonholonomic(which: str, p: NonholonomicParams) -> float:
    rho, b, mu = float(p.rho), float(p.b), float(p.mu)
    control = 0.1 * (4.0 * rho**2 + (mu * b) ** 2)
    if which == "L1":
        return rho**2 + 2.0 * b**2 + control
    if which == "L2":
        return 0.01 * rho**2 + 401.0 * b**2 + control
    raise ContractError(f"unknown stage cost {which!r}")


def nonholonomic_cost(which: str, p: NonholonomicParams) -> StageCost:
    """L1 = |x|^2 + 0.1|u|^2, L2 = 0.01 x1^2 + x2^2 + 100 (x2 - x3)^2 + 0.1|u|^2."""
    if which == "L1":
        def l(x, u):
            return (x * x).sum(axis=-1) + 0.1 * (u * u).sum(axis=-1)
    elif which == "L2":
        def l(x, u):
            x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
            d = x2 - x3
            return 0.01 * x1 * x1 + x2 * x2 + 100.0 * d * d + 0.1 * (u * u).sum(axis=-1)
    else:
        raise ContractError(f"unknown stage cost {which!r}")
    return StageCost(name=which, l=l, l_bar=l_bar_nonholonomic(which, p), m=2)


@dataclass(frozen=True)
class PenaltyConfig:
    alpha: float
    beta: float
    z0: float

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ContractError("beta must lie in (0, 1)")
        if not self.z0 > 0:
            raise ContractError("z0 must be positive")
        if self.alpha < 0:
            raise ContractError("alpha must be non-negative")


def alpha_min(horizon: int, l_bar: float, gamma: float) -> float:
    """Smallest terminal-contraction weight ``2 N Lbar / (1 - gamma)``."""
    if gamma >= 1.0:
        raise ContractError("gamma must be below 1")
    if horizon < 1 or l_bar < 0:
        raise ContractError("horizon must be >= 1 and l_bar >= 0")
    return 2.0 * horizon * l_bar / (1.0 - gamma)


@dataclass
class Evaluation:
    """Per-sequence quantities of a batch ``(..., q, m)`` of control sequences."""

    j: np.ndarray
    phi: np.ndarray
    w_under: np.ndarray
    ell: np.ndarray  # 1-based, earliest argmin
    violation: np.ndarray  # sum of positive constraint values over the rollout
    feasible: np.ndarray  # exact: all g <= 0 and all controls in U


def evaluate(model: Model, cost: StageCost, spec: ContractionSpec, x, z: float, alpha: float, useqs) -> Evaluation:
    """Score control sequences sharing a start state and horizon.

    Every J, Phi and Wmin reported anywhere in the package goes through this
    function, so a value computed for one sequence is bit-identical whether
    the sequence was scored alone or within a population.
    """
    useqs = np.asarray(useqs, dtype=float)
    states = rollout_batch(model, x, useqs)
    stage = cost.l(states, useqs)
    phi_ = np.cumsum(stage, axis=-1)[..., -1]
    ws = spec.w(states)
    ell = np.argmin(ws, axis=-1)
    w_under = np.take_along_axis(ws, ell[..., None], axis=-1)[..., 0]
    g = model.constraint_map(states)
    violation = np.maximum(g, 0.0).sum(axis=(-1, -2))
    in_box = np.all((useqs >= model.control_lower) & (useqs <= model.control_upper), axis=(-1, -2))
    feasible = np.all(g <= 0.0, axis=(-1, -2)) & in_box
    return Evaluation(
        j=z * phi_ + alpha * w_under,
        phi=phi_,
        w_under=w_under,
        ell=ell + 1,
        violation=violation,
        feasible=feasible,
    )


def phi(model: Model, cost: StageCost, x, useq, q: int) -> float:
    """Stage cost summed along the first ``q`` predicted steps."""
    useq = np.asarray(useq, dtype=float).reshape(-1, model.m)
    if not 1 <= q <= len(useq):
        raise ContractError(f"q={q} outside 1..{len(useq)}")
    states = rollout_batch(model, x, useq[:q])
    return float(np.cumsum(cost.l(states, useq[:q]))[-1])


def j_cost(model: Model, cost: StageCost, spec: ContractionSpec, x, z: float, useq, q: int, alpha: float) -> float:
    """``z * Phi(x, u, q) + alpha * Wmin(x, u, q)``."""
    if z < 0:
        raise ContractError("z must be non-negative")
    useq = np.asarray(useq, dtype=float).reshape(-1, model.m)
    if not 1 <= q <= len(useq):
        raise ContractError(f"q={q} outside 1..{len(useq)}")
    return float(evaluate(model, cost, spec, x, z, alpha, useq[:q]).j)
