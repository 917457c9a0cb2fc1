"""Batch front-end: ``simulate``, ``verify``, ``compare`` and ``check``.

Experiments are described by JSON config files. Every key has a default;
the fully resolved configuration is echoed into each summary so a run can
be reproduced from its output alone.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .contraction import ContractionSpec, verify_contraction
from .controller import MODES, SimLog, StepRecord, check_lemmas, simulate
from .model import (
    ContractError,
    DoubleIntegratorParams,
    Model,
    NonholonomicParams,
    check_state,
    make_nonholonomic,
    make_tightened_double_integrator,
)
from .objective import PenaltyConfig, StageCost, alpha_min, nonholonomic_cost, quadratic_stage_cost
from .solver import SolverConfig

log = logging.getLogger("contractive_mpc")

EXIT_OK, EXIT_CONFIG, EXIT_MAX_STEPS, EXIT_INFEASIBLE = 0, 1, 2, 3
# verify / check found a violated property
EXIT_FAILED = 2
EXIT_CODES = {"converged": EXIT_OK, "max_steps": EXIT_MAX_STEPS, "infeasible": EXIT_INFEASIBLE}

DEFAULTS = {
    "model": {"name": "nonholonomic", "rho": 4.0, "b": 10.0, "mu": 0.05, "u1_bar": None},
    "cost": {"name": "L1"},
    "spec": {"gamma": 0.95, "horizon": 3, "w": "squared_norm"},
    "penalty": {"alpha": "auto", "beta": 0.5, "z0": "auto"},
    "solver": asdict(SolverConfig()),
    "run": {"x0": [3.0, 8.0, -5.0], "max_steps": 1000, "stop_norm": 1e-2, "mode": "two_stage"},
    "output": {"csv_path": "trajectory.csv", "summary_path": "summary.json"},
}

MODEL_KEYS = {
    "nonholonomic": {"name", "rho", "b", "mu", "u1_bar"},
    "double_integrator": {"name", "tau", "u_bar", "r_bar"},
}


class ConfigError(Exception):
    pass


@dataclass
class Experiment:
    model: Model
    cost: StageCost
    spec: ContractionSpec
    penalty: PenaltyConfig
    solver: SolverConfig
    x0: np.ndarray
    max_steps: int
    stop_norm: float
    mode: str
    csv_path: str
    summary_path: str
    resolved: dict


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if key not in base and path not in ("model.", "cost."):
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(val, dict) and isinstance(base.get(key), dict):
            out[key] = _merge(base[key], val, path + key + ".")
        else:
            out[key] = val
    return out


def load_config(path: str) -> dict:
    """Read a config file or a shipped profile name (``fig1``, ``fig2``, ``fig3``)."""
    p = Path(path)
    if not p.exists():
        name = p.name if p.suffix else p.name + ".cfg"
        shipped = resources.files("contractive_mpc") / "profiles" / name
        if not shipped.is_file():
            raise ConfigError(f"no such config file or profile: {path}")
        text = shipped.read_text()
    else:
        text = p.read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    cfg = _merge(DEFAULTS, raw)
    # a model switch drops the other model's default parameters
    if "model" in raw and raw["model"].get("name", "nonholonomic") != "nonholonomic":
        cfg["model"] = dict(raw["model"])
    return cfg


def _build_model(mc: dict) -> Model:
    name = mc.get("name")
    if name not in MODEL_KEYS:
        raise ConfigError(f"unknown model {name!r}")
    extra = set(mc) - MODEL_KEYS[name]
    if extra:
        raise ConfigError(f"unknown {name} parameters: {sorted(extra)}")
    kw = {k: v for k, v in mc.items() if k != "name"}
    if name == "nonholonomic":
        return make_nonholonomic(NonholonomicParams(**kw))
    return make_tightened_double_integrator(DoubleIntegratorParams(**kw))


def _build_cost(cc: dict, model: Model) -> StageCost:
    name = cc.get("name")
    if name in ("L1", "L2"):
        if model.name != "nonholonomic":
            raise ConfigError(f"cost {name} is defined for the nonholonomic model only")
        return nonholonomic_cost(name, model.params)
    if name == "custom":
        try:
            return quadratic_stage_cost(
                "custom", cc["state_weight"], cc["control_weight"], cc["l_bar"], model.m
            )
        except KeyError as exc:
            raise ConfigError(f"custom cost needs {exc.args[0]!r}") from exc
    raise ConfigError(f"unknown cost {name!r}")


def resolve(cfg: dict) -> Experiment:
    """Turn a merged config into model objects; ``auto`` entries are resolved here."""
    try:
        model = _build_model(cfg["model"])
        cost = _build_cost(cfg["cost"], model)
        if cfg["spec"].get("w") != "squared_norm":
            raise ConfigError("only w = 'squared_norm' is supported")
        spec = ContractionSpec(gamma=float(cfg["spec"]["gamma"]), horizon=int(cfg["spec"]["horizon"]))
        run = cfg["run"]
        x0 = np.asarray(run["x0"], dtype=float)
        if x0.shape != (model.n,):
            raise ConfigError(f"x0 must have {model.n} entries")
        pen = cfg["penalty"]
        alpha = alpha_min(spec.horizon, cost.l_bar, spec.gamma) if pen["alpha"] == "auto" else float(pen["alpha"])
        z0 = float(spec.w(x0)) if pen["z0"] == "auto" else float(pen["z0"])
        if z0 <= 0:
            # W(x0) = 0 only at the origin, where the budget is never used
            z0 = 1.0
        penalty = PenaltyConfig(alpha=alpha, beta=float(pen["beta"]), z0=z0)
        sc = dict(cfg["solver"])
        if sc.get("init_std") is not None:
            sc["init_std"] = tuple(sc["init_std"])
        solver = SolverConfig(**sc)
        mode = run["mode"]
        if mode not in MODES:
            raise ConfigError(f"unknown mode {mode!r}")
    except (ContractError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc

    resolved = copy.deepcopy(cfg)
    resolved["penalty"].update(alpha=alpha, z0=z0)
    resolved["cost"]["l_bar"] = cost.l_bar
    return Experiment(
        model=model,
        cost=cost,
        spec=spec,
        penalty=penalty,
        solver=solver,
        x0=x0,
        max_steps=int(run["max_steps"]),
        stop_norm=float(run["stop_norm"]),
        mode=mode,
        csv_path=cfg["output"]["csv_path"],
        summary_path=cfg["output"]["summary_path"],
        resolved=resolved,
    )


# --- CSV -----------------------------------------------------------------------


def csv_header(n: int, m: int) -> list:
    return (
        ["k"]
        + [f"x{i + 1}" for i in range(n)]
        + [f"u{i + 1}" for i in range(m)]
        + ["z", "W", "e", "J_star", "Phi_star", "W_under_star", "q_star", "ell_star", "evals", "feasible"]
    )


def write_csv(path: str, simlog: SimLog, n: int, m: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(csv_header(n, m))
        for r in simlog.records:
            w.writerow(
                [r.k]
                + [repr(float(v)) for v in r.x]
                + [repr(float(v)) for v in r.u_applied]
                + [repr(float(v)) for v in (r.z, r.w_x, r.e, r.j_star, r.phi_star, r.w_under_star)]
                + [r.q_star, r.ell_star, r.solver_evals, int(r.feasible)]
            )


def read_csv(path: str, n: int, m: int) -> SimLog:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != csv_header(n, m):
        raise ConfigError(f"{path}: header does not match a model with n={n}, m={m}")
    records = []
    for row in rows[1:]:
        if len(row) != len(rows[0]):
            raise ConfigError(f"{path}: malformed row {row}")
        vals = row[1:]
        x = np.array([float(v) for v in vals[:n]])
        u = np.array([float(v) for v in vals[n : n + m]])
        z, w, e, j, ph, wu = (float(v) for v in vals[n + m : n + m + 6])
        q, ell, ev, feas = (int(v) for v in vals[n + m + 6 :])
        records.append(StepRecord(int(row[0]), x, u, z, w, e, j, ph, wu, q, ell, ev, bool(feas)))
    return SimLog(records=records)


def _dump(path: str, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def mean_abs_x2_x3(simlog: SimLog) -> float:
    return float(np.mean([abs(r.x[1] - r.x[2]) for r in simlog.records])) if simlog.records else 0.0


# --- commands ----------------------------------------------------------------


def run_experiment(exp: Experiment) -> SimLog:
    if not check_state(exp.model, exp.x0)[0]:
        raise ConfigError(f"x0 = {exp.x0.tolist()} is outside the admissible set")
    return simulate(
        exp.model,
        exp.cost,
        exp.spec,
        exp.penalty,
        exp.x0,
        max_steps=exp.max_steps,
        stop_norm=exp.stop_norm,
        mode=exp.mode,
        cfg=exp.solver,
    )


def _summary(exp: Experiment, simlog: SimLog) -> dict:
    report = check_lemmas(simlog, exp.penalty, exp.spec, exp.cost, exp.model)
    return {
        "schema": 1,
        "terminated_reason": simlog.terminated_reason,
        "steps": simlog.steps,
        "final_norm": float(np.linalg.norm(simlog.final_x)),
        "final_state": [float(v) for v in simlog.final_x],
        "alpha": exp.penalty.alpha,
        "config": exp.resolved,
        "diagnostics": {
            "alpha_precondition": report.alpha_precondition,
            "passed": report.passed,
            "checks": {
                k: {"applicable": c.applicable, "failed": len(c.failed_steps)} for k, c in report.checks.items()
            },
        },
    }


def cmd_simulate(config: str, csv_path: Optional[str] = None, summary_path: Optional[str] = None) -> int:
    exp = resolve(load_config(config))
    simlog = run_experiment(exp)
    write_csv(csv_path or exp.csv_path, simlog, exp.model.n, exp.model.m)
    _dump(summary_path or exp.summary_path, _summary(exp, simlog))
    print(f"{simlog.terminated_reason} after {simlog.steps} steps, |x| = {np.linalg.norm(simlog.final_x):.3g}")
    return EXIT_CODES[simlog.terminated_reason]


def cmd_verify(config: str, samples: int, seed: int, out: Optional[str] = None, gamma: Optional[float] = None) -> int:
    cfg = load_config(config)
    if gamma is not None:
        cfg["spec"]["gamma"] = gamma
    cfg["solver"]["seed"] = seed
    exp = resolve(cfg)
    try:
        report = verify_contraction(exp.model, exp.spec, samples, seed, cfg=exp.solver)
    except ContractError as exc:
        raise ConfigError(str(exc)) from exc
    _dump(out or "verify_report.json", report.to_dict())
    print(f"{report.successes}/{report.samples} contracting, worst ratio {report.worst_ratio:.6g}")
    return EXIT_OK if report.successes == report.samples else EXIT_FAILED


def cmd_compare(config_a: str, config_b: str, out: Optional[str] = None) -> int:
    exps = [resolve(load_config(c)) for c in (config_a, config_b)]
    a, b = exps
    if a.model.name != b.model.name or a.model.params != b.model.params:
        raise ConfigError("compared configs must share the model")
    if not np.array_equal(a.x0, b.x0):
        raise ConfigError("compared configs must share x0")
    runs = []
    for path, exp in zip((config_a, config_b), exps):
        simlog = run_experiment(exp)
        write_csv(exp.csv_path, simlog, exp.model.n, exp.model.m)
        runs.append(
            {
                "config": path,
                "cost": exp.cost.name,
                "horizon": exp.spec.horizon,
                "csv_path": exp.csv_path,
                "terminated_reason": simlog.terminated_reason,
                "steps": simlog.steps,
                "mean_abs_x2_x3": mean_abs_x2_x3(simlog) if exp.model.n >= 3 else None,
            }
        )
    _dump(out or "comparison.json", {"schema": 1, "runs": runs})
    for r in runs:
        print(f"{r['config']}: {r['terminated_reason']} in {r['steps']} steps, mean|x2-x3| = {r['mean_abs_x2_x3']}")
    if all(r["terminated_reason"] == "converged" for r in runs):
        return EXIT_OK
    return max(EXIT_CODES[r["terminated_reason"]] for r in runs)


def cmd_check(csv_path: str, config: str, out: Optional[str] = None) -> int:
    exp = resolve(load_config(config))
    simlog = read_csv(csv_path, exp.model.n, exp.model.m)
    if not simlog.records:
        raise ConfigError(f"{csv_path}: log is empty")
    report = check_lemmas(simlog, exp.penalty, exp.spec, exp.cost, exp.model)
    payload = report.to_dict()
    _dump(out or str(Path(csv_path).with_suffix(".check.json")), payload)
    if not report.alpha_precondition:
        print(f"alpha = {report.alpha:g} is below the required {report.alpha_required:g}")
    for key, c in report.checks.items():
        print(f"check {key}: {'pass' if c.passed else 'FAIL'} ({c.applicable} applicable, {len(c.failed_steps)} failed)")
    return EXIT_OK if report.passed else EXIT_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="contractive-mpc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a closed loop and write CSV + summary JSON")
    p.add_argument("config")
    p.add_argument("--csv", dest="csv_path")
    p.add_argument("--summary", dest="summary_path")

    p = sub.add_parser("verify", help="randomised certification of the contraction property")
    p.add_argument("config")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gamma", type=float)
    p.add_argument("--out")

    p = sub.add_parser("compare", help="run two configs from the same x0")
    p.add_argument("config_a")
    p.add_argument("config_b")
    p.add_argument("--out")

    p = sub.add_parser("check", help="re-run the lemma checks on a stored log")
    p.add_argument("csv")
    p.add_argument("config")
    p.add_argument("--out")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "simulate":
            return cmd_simulate(args.config, args.csv_path, args.summary_path)
        if args.command == "verify":
            return cmd_verify(args.config, args.samples, args.seed, args.out, args.gamma)
        if args.command == "compare":
            return cmd_compare(args.config_a, args.config_b, args.out)
        return cmd_check(args.csv, args.config, args.out)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
