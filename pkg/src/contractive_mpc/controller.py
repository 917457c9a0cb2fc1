"""Receding-horizon feedback with an internal contraction budget ``z``.

At step k the controller solves the problem posed at ``(x_k, z_k)``, applies
the first control and then updates the budget: ``z`` is kept while
``W(x_k) > z_k`` and multiplied by ``beta`` otherwise.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .contraction import ContractionSpec
from .model import ContractError, Model, check_state
from .objective import PenaltyConfig, StageCost, alpha_min
from .solver import SolveResult, SolverConfig, shifted_candidate, solve_full, two_stage_solve

log = logging.getLogger(__name__)

MODES = ("two_stage", "full")


@dataclass
class ControllerState:
    z: float
    last_result: Optional[SolveResult] = None
    k: int = 0


@dataclass
class StepRecord:
    k: int
    x: np.ndarray
    u_applied: np.ndarray
    z: float
    w_x: float
    e: float
    j_star: float
    phi_star: float
    w_under_star: float
    q_star: int
    ell_star: int
    solver_evals: int
    feasible: bool


@dataclass
class SimLog:
    records: list = field(default_factory=list)
    params: dict = field(default_factory=dict)
    terminated_reason: str = "max_steps"
    final_x: Optional[np.ndarray] = None

    @property
    def steps(self) -> int:
        return len(self.records)


def z_update(x, z: float, beta: float, w) -> float:
    """Keep ``z`` while ``W(x) > z``, shrink it by ``beta`` otherwise."""
    return z if float(w(np.asarray(x, float))) > z else beta * z


def mpc_step(
    model: Model,
    cost: StageCost,
    spec: ContractionSpec,
    pc: PenaltyConfig,
    cs: ControllerState,
    x,
    mode: str,
    cfg: SolverConfig,
):
    """Solve at ``(x, z)``, return ``(u, next controller state, record)``."""
    if mode not in MODES:
        raise ContractError(f"unknown mode {mode!r}")
    x = np.asarray(x, dtype=float)
    warm = shifted_candidate(cs.last_result, x)
    solve = two_stage_solve if mode == "two_stage" else solve_full
    res = solve(model, cost, spec, x, cs.z, pc.alpha, warm, cfg, key=(cs.k,))
    u = res.useq[0].copy()
    w_x = float(spec.w(x))
    rec = StepRecord(
        k=cs.k,
        x=x.copy(),
        u_applied=u,
        z=cs.z,
        w_x=w_x,
        e=w_x - cs.z,
        j_star=res.j_star,
        phi_star=res.phi_star,
        w_under_star=res.w_under_star,
        q_star=res.q_star,
        ell_star=res.ell_star,
        solver_evals=res.evals,
        feasible=res.feasible,
    )
    nxt = ControllerState(z=z_update(x, cs.z, pc.beta, spec.w), last_result=res, k=cs.k + 1)
    return u, nxt, rec


def simulate(
    model: Model,
    cost: StageCost,
    spec: ContractionSpec,
    pc: PenaltyConfig,
    x0,
    z0: Optional[float] = None,
    max_steps: int = 1000,
    stop_norm: float = 1e-2,
    mode: str = "two_stage",
    cfg: Optional[SolverConfig] = None,
) -> SimLog:
    """Closed loop from ``x0`` until ``|x| <= stop_norm``, ``max_steps`` or an infeasible solve."""
    x = np.asarray(x0, dtype=float)
    if not check_state(model, x)[0]:
        raise ContractError(f"initial state {x} is not admissible")
    cfg = cfg or SolverConfig()
    z0 = pc.z0 if z0 is None else float(z0)
    if not z0 > 0:
        raise ContractError("z0 must be positive")

    cs = ControllerState(z=z0)
    simlog = SimLog(params={"mode": mode, "z0": z0, "alpha": pc.alpha, "beta": pc.beta})
    while True:
        if np.linalg.norm(x) <= stop_norm:
            simlog.terminated_reason = "converged"
            break
        if cs.k >= max_steps:
            simlog.terminated_reason = "max_steps"
            break
        u, cs_next, rec = mpc_step(model, cost, spec, pc, cs, x, mode, cfg)
        simlog.records.append(rec)
        if not rec.feasible:
            log.warning("infeasible solve at step %d", rec.k)
            simlog.terminated_reason = "infeasible"
            break
        x = model.dynamics(x, u)
        cs = cs_next
    simlog.final_x = x
    return simlog


# --- diagnostics ---------------------------------------------------------------

CHECKS = {
    "a": "ell* equals q*",
    "b": "J* <= z N Lbar + alpha gamma W(x) when z <= W(x)",
    "c": "J* <= (1 + gamma)/2 alpha W(x) when e > 0",
    "d": "J*(k+1) <= J*(k) - z_k Q(x_{k+1}) when e_k > 0 and e_{k+1} > 0",
    "e": "z_k equals beta^c_k z0 with c_k = #{j < k : e_j <= 0}",
    "f": "W(x) <= beta^(m-1) z0 at the m-th instant with e <= 0",
}


@dataclass
class CheckResult:
    description: str
    applicable: int = 0
    failed_steps: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failed_steps

    def to_dict(self) -> dict:
        return {
            "description": self.description,
            "applicable": self.applicable,
            "failed": len(self.failed_steps),
            "failed_steps": self.failed_steps,
            "passed": self.passed,
        }


@dataclass
class DiagnosticReport:
    checks: dict
    alpha: float
    alpha_required: float

    @property
    def alpha_precondition(self) -> bool:
        return self.alpha >= self.alpha_required

    @property
    def passed(self) -> bool:
        return self.alpha_precondition and all(c.passed for c in self.checks.values())

    def to_dict(self) -> dict:
        return {
            "schema": 1,
            "alpha": self.alpha,
            "alpha_required": self.alpha_required,
            "alpha_precondition": self.alpha_precondition,
            "passed": self.passed,
            "checks": {k: c.to_dict() for k, c in self.checks.items()},
        }


def _slack(j: float) -> float:
    return 1e-9 * (1.0 + abs(j))


def check_lemmas(simlog: SimLog, pc: PenaltyConfig, spec: ContractionSpec, cost: StageCost, model: Model) -> DiagnosticReport:
    """Replay the cost-bound and budget inequalities on a closed-loop log.

    Inequalities on J carry a floating-point slack of ``1e-9 (1 + |J|)``;
    ``ell* = q*`` and the budget trace are compared exactly. Checks never
    raise: a log produced with ``alpha`` below the required bound is
    reported through ``alpha_precondition``.
    """
    recs = simlog.records
    checks = {k: CheckResult(v) for k, v in CHECKS.items()}
    N, L_bar, gamma, alpha, beta = spec.horizon, cost.l_bar, spec.gamma, pc.alpha, pc.beta
    z0 = recs[0].z if recs else pc.z0

    z_replay, count = z0, 0
    for i, r in enumerate(recs):
        a = checks["a"]
        a.applicable += 1
        if r.ell_star != r.q_star:
            a.failed_steps.append(r.k)

        if r.e >= 0:
            b = checks["b"]
            b.applicable += 1
            if r.j_star > r.z * N * L_bar + alpha * gamma * r.w_x + _slack(r.j_star):
                b.failed_steps.append(r.k)

        if r.e > 0:
            c = checks["c"]
            c.applicable += 1
            if r.j_star > 0.5 * (1.0 + gamma) * alpha * r.w_x + _slack(r.j_star):
                c.failed_steps.append(r.k)

        if r.e > 0 and i + 1 < len(recs) and recs[i + 1].e > 0:
            d = checks["d"]
            d.applicable += 1
            nxt = recs[i + 1]
            bound = r.j_star - r.z * float(cost.q_part(nxt.x))
            if nxt.j_star > bound + _slack(r.j_star):
                d.failed_steps.append(r.k)

        e = checks["e"]
        e.applicable += 1
        if r.z != z_replay or not np.isclose(r.z, beta**count * z0, rtol=1e-12, atol=0.0):
            e.failed_steps.append(r.k)

        if r.e <= 0:
            count += 1
            f = checks["f"]
            f.applicable += 1
            if r.w_x > beta ** (count - 1) * z0 * (1.0 + 1e-12):
                f.failed_steps.append(r.k)
            z_replay = beta * z_replay

    return DiagnosticReport(checks=checks, alpha=alpha, alpha_required=alpha_min(N, L_bar, gamma))
