"""Fixed-horizon sequence search, free-horizon enumeration and the two-stage solve.

The search backend is a cross-entropy style sampler: Gaussian populations
around per-restart means, clipped to the control box, refit on the elite
fraction. State constraints enter the ranking as an exact penalty and are
re-verified without tolerance on the returned sequence.

Every solve scores its seed candidates with the same evaluator as the
search and never returns anything worse than the best feasible seed. The
stability inequalities checked on closed-loop logs rely on this: the seeds
(analytic contraction sequence, shifted previous solution) realise the
candidates used in the convergence argument.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .contraction import ContractionSpec
from .model import ContractError, Model
from .objective import StageCost, evaluate


@dataclass(frozen=True)
class SolverConfig:
    restarts: int = 2
    samples_per_iter: int = 48
    max_iters: int = 10
    elite_frac: float = 0.15
    # per-component std of the first population; None -> half of each control half-range
    init_std: Optional[tuple] = None
    constraint_penalty: float = 1e6
    tie_tol: float = 1e-9
    seed: int = 0

    def __post_init__(self):
        if min(self.restarts, self.samples_per_iter, self.max_iters) < 1:
            raise ContractError("solver counts must be >= 1")
        if not 0.0 < self.elite_frac <= 1.0:
            raise ContractError("elite_frac must lie in (0, 1]")
        if self.constraint_penalty <= 0 or self.tie_tol < 0:
            raise ContractError("constraint_penalty must be > 0 and tie_tol >= 0")


@dataclass
class SolveResult:
    useq: np.ndarray
    q_star: int
    ell_star: int
    j_star: float
    phi_star: float
    w_under_star: float
    feasible: bool
    evals: int = 0


def _score(model, cost, spec, x, z, alpha, useq, evals=0) -> SolveResult:
    useq = np.asarray(useq, dtype=float).reshape(-1, model.m)
    ev = evaluate(model, cost, spec, x, z, alpha, useq)
    return SolveResult(
        useq=useq.copy(),
        q_star=len(useq),
        ell_star=int(ev.ell),
        j_star=float(ev.j),
        phi_star=float(ev.phi),
        w_under_star=float(ev.w_under),
        feasible=bool(ev.feasible),
        evals=evals,
    )


def _fit_length(model: Model, seq, q: int) -> Optional[np.ndarray]:
    if seq is None:
        return None
    seq = np.asarray(seq, dtype=float).reshape(-1, model.m)
    if len(seq) == 0:
        return None
    if len(seq) >= q:
        return seq[:q]
    pad = np.broadcast_to(model.zero_control(), (q - len(seq), model.m))
    return np.vstack([seq, pad])


def _rng(cfg: SolverConfig, key: Sequence[int]) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([cfg.seed, *key]))


def solve_fixed_horizon(
    model: Model,
    cost: StageCost,
    spec: ContractionSpec,
    x,
    z: float,
    q: int,
    alpha: float,
    candidates: Sequence,
    cfg: SolverConfig,
    key: Sequence[int] = (),
) -> SolveResult:
    """Minimise ``J(u, q)`` over ``U^q`` subject to the rollout staying in G.

    Candidates longer than ``q`` are truncated, shorter ones padded with the
    zero control. The result is never worse than the best feasible
    candidate. ``feasible=False`` means no admissible sequence was found.
    """
    if not 1 <= q <= spec.horizon:
        raise ContractError(f"horizon q={q} outside 1..{spec.horizon}")
    x = np.asarray(x, dtype=float)
    lo, hi = model.control_lower, model.control_upper

    seeds = [s for s in (_fit_length(model, c, q) for c in candidates) if s is not None]
    if not seeds:
        seeds = [np.broadcast_to(model.zero_control(), (q, model.m)).copy()]
    seeds = np.stack(seeds)
    ev = evaluate(model, cost, spec, x, z, alpha, seeds)
    evals = len(seeds)

    def rank(e):
        # lexicographic: any feasible sequence beats every infeasible one
        return np.where(e.feasible, 0.0, 1.0), e.j + cfg.constraint_penalty * e.violation

    seed_bad, seed_rk = rank(ev)
    order = np.lexsort((seed_rk, seed_bad))
    best_seq = seeds[order[0]].copy()
    best_key = (seed_bad[order[0]], seed_rk[order[0]])

    rng = _rng(cfg, tuple(key) + (q,))
    R, P = cfg.restarts, cfg.samples_per_iter
    n_elite = max(2, int(np.ceil(cfg.elite_frac * P)))
    half = 0.5 * (hi - lo)
    std0 = np.asarray(cfg.init_std, float) if cfg.init_std is not None else 0.5 * half
    mean = np.empty((R, q, model.m))
    for r in range(R):
        if r < len(order):
            mean[r] = np.clip(seeds[order[r]], lo, hi)
        else:
            mean[r] = rng.uniform(lo, hi, size=(q, model.m))
    std = np.broadcast_to(std0, (R, q, model.m)).copy()
    r_best = mean.copy()
    r_best_key = [(np.inf, np.inf)] * R

    for _ in range(cfg.max_iters):
        pop = mean[:, None] + std[:, None] * rng.standard_normal((R, P, q, model.m))
        pop[:, 0] = mean
        pop[:, 1] = r_best
        pop = np.clip(pop, lo, hi)
        bad, rk = rank(evaluate(model, cost, spec, x, z, alpha, pop))
        evals += R * P
        idx = np.lexsort((rk, bad), axis=-1)[:, :n_elite]
        elite = np.take_along_axis(pop, idx[..., None, None], axis=1)
        for r in range(R):
            top = (bad[r, idx[r, 0]], rk[r, idx[r, 0]])
            if top < r_best_key[r]:
                r_best[r], r_best_key[r] = elite[r, 0], top
        mean = elite.mean(axis=1)
        std = elite.std(axis=1)

    r = min(range(R), key=lambda i: r_best_key[i])
    if r_best_key[r] < best_key:
        best_seq = r_best[r]
    return _score(model, cost, spec, x, z, alpha, best_seq, evals)


def truncate(model, cost, spec, x, z, alpha, res: SolveResult) -> SolveResult:
    """Cut the sequence at its earliest W-minimiser; J can only decrease."""
    if res.ell_star >= res.q_star:
        return res
    return _score(model, cost, spec, x, z, alpha, res.useq[: res.ell_star], res.evals)


def select_shortest(results: Sequence[SolveResult], tie_tol: float) -> SolveResult:
    """Lowest J among feasible results; near-ties go to the shortest horizon."""
    feas = [r for r in results if r.feasible]
    if not feas:
        return min(results, key=lambda r: r.j_star)
    j_min = min(r.j_star for r in feas)
    tol = tie_tol * (1.0 + abs(j_min))
    close = [r for r in feas if r.j_star <= j_min + tol]
    return min(close, key=lambda r: (r.q_star, r.j_star))


def _hint(model: Model, spec: ContractionSpec, x):
    return model.hint(x, spec) if model.hint is not None else None


def _zero_cost(m: int) -> StageCost:
    return StageCost(name="zero", l=lambda x, u: np.zeros(np.shape(x)[:-1]), l_bar=0.0, m=m)


def shifted_candidate(prev: Optional[SolveResult], applied_next_state=None) -> Optional[np.ndarray]:
    """Tail of the previous optimal sequence, or ``None`` if it had one move."""
    if prev is None or prev.q_star <= 1:
        return None
    return prev.useq[1:].copy()


def solve_full(
    model: Model,
    cost: StageCost,
    spec: ContractionSpec,
    x,
    z: float,
    alpha: float,
    warm: Optional[np.ndarray],
    cfg: SolverConfig,
    key: Sequence[int] = (),
) -> SolveResult:
    """Free-horizon problem by enumerating every ``q`` in ``1..N``.

    ``warm`` is the already shifted previous solution (see
    :func:`shifted_candidate`).
    """
    x = np.asarray(x, dtype=float)
    hint = _hint(model, spec, x)
    results, evals = [], 0
    for q in range(1, spec.horizon + 1):
        cands = [np.zeros((q, model.m)), hint, warm]
        res = solve_fixed_horizon(model, cost, spec, x, z, q, alpha, cands, cfg, tuple(key) + (2,))
        res = truncate(model, cost, spec, x, z, alpha, res)
        evals += res.evals
        results.append(res)
    best = select_shortest(results, cfg.tie_tol)
    return replace(best, evals=evals)


def stage1_max_contraction(
    model: Model,
    spec: ContractionSpec,
    x,
    cfg: SolverConfig,
    warm: Optional[np.ndarray] = None,
    key: Sequence[int] = (),
) -> SolveResult:
    """Minimise ``Wmin(x, u, N)`` over admissible ``u`` in ``U^N``.

    ``ell_star`` of the result is the index of maximal contraction.
    """
    x = np.asarray(x, dtype=float)
    cands = [np.zeros((spec.horizon, model.m)), _hint(model, spec, x), warm]
    return solve_fixed_horizon(
        model, _zero_cost(model.m), spec, x, 0.0, spec.horizon, 1.0, cands, cfg, tuple(key) + (0,)
    )


def two_stage_solve(
    model: Model,
    cost: StageCost,
    spec: ContractionSpec,
    x,
    z: float,
    alpha: float,
    warm: Optional[np.ndarray],
    cfg: SolverConfig,
    key: Sequence[int] = (),
) -> SolveResult:
    """Integer-free solve: max-contraction index first, then the cost at that horizon.

    The shifted warm start is also scored at its own horizon and kept when
    it beats the stage-two result; without it the one-step decrease of the
    optimal cost along the closed loop could not be guaranteed.
    """
    x = np.asarray(x, dtype=float)
    s1 = stage1_max_contraction(model, spec, x, cfg, warm=warm, key=key)
    ell = s1.ell_star
    cands = [s1.useq[:ell], warm, np.zeros((ell, model.m))]
    s2 = solve_fixed_horizon(model, cost, spec, x, z, ell, alpha, cands, cfg, tuple(key) + (1,))
    options = [truncate(model, cost, spec, x, z, alpha, s2)]
    if warm is not None and len(warm) > 0:
        w = _score(model, cost, spec, x, z, alpha, warm)
        options.append(truncate(model, cost, spec, x, z, alpha, w))
    best = select_shortest(options, cfg.tie_tol)
    return replace(best, evals=s1.evals + s2.evals + (1 if warm is not None else 0))
