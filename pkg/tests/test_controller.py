import numpy as np
import pytest

from contractive_mpc.contraction import squared_norm
from contractive_mpc.controller import ControllerState, check_lemmas, mpc_step, simulate, z_update
from contractive_mpc.model import ContractError, check_control, check_state
from contractive_mpc.objective import PenaltyConfig, alpha_min
from contractive_mpc.solver import SolverConfig

CFG = SolverConfig()
X0 = np.array([3.0, 8.0, -5.0])


@pytest.fixture(scope="module")
def fig1_log():
    from contractive_mpc.contraction import ContractionSpec
    from contractive_mpc.model import NonholonomicParams, make_nonholonomic
    from contractive_mpc.objective import nonholonomic_cost

    p = NonholonomicParams(rho=4.0, b=10.0, mu=0.05)
    model, cost, spec = make_nonholonomic(p), nonholonomic_cost("L1", p), ContractionSpec(0.95, 3)
    pc = PenaltyConfig(alpha=alpha_min(3, cost.l_bar, 0.95), beta=0.5, z0=98.0)
    return model, cost, spec, pc, simulate(model, cost, spec, pc, X0, max_steps=500, cfg=CFG)


def test_z_update_examples():
    w = squared_norm
    assert z_update(np.array([1.0, 2.0]), 3.0, 0.5, w) == 3.0  # W = 5 > 3
    assert z_update(np.array([1.0, 1.0]), 3.0, 0.5, w) == 1.5  # W = 2 <= 3
    assert z_update(np.array([1.0, 1.0]), 2.0, 0.5, w) == 1.0  # W = z


def test_mpc_step_at_origin(nh, l1, spec3):
    pc = PenaltyConfig(alpha=26691.0, beta=0.5, z0=1.0)
    cs = ControllerState(z=1.0)
    x = np.zeros(3)
    for k in range(4):
        u, cs, rec = mpc_step(nh, l1, spec3, pc, cs, x, "two_stage", CFG)
        assert np.array_equal(u, np.zeros(2)) and rec.z == 0.5**k
        x = nh.dynamics(x, u)
        assert np.array_equal(x, np.zeros(3))
    assert cs.z == 0.5**4 and cs.k == 4


def test_mpc_step_applies_first_control(nh, l1, spec3):
    pc = PenaltyConfig(alpha=26691.0, beta=0.5, z0=98.0)
    cs = ControllerState(z=98.0)
    u, cs2, rec = mpc_step(nh, l1, spec3, pc, cs, X0, "two_stage", CFG)
    assert np.array_equal(u, cs2.last_result.useq[0])
    assert rec.e == rec.w_x - 98.0 and rec.z == 98.0


def test_mpc_step_unknown_mode(nh, l1, spec3):
    pc = PenaltyConfig(alpha=1.0, beta=0.5, z0=1.0)
    with pytest.raises(ContractError):
        mpc_step(nh, l1, spec3, pc, ControllerState(z=1.0), X0, "lazy", CFG)


def test_simulate_from_origin_converges_immediately(nh, l1, spec3):
    pc = PenaltyConfig(alpha=1.0, beta=0.5, z0=1.0)
    log = simulate(nh, l1, spec3, pc, np.zeros(3))
    assert log.terminated_reason == "converged" and log.steps == 0
    report = check_lemmas(log, PenaltyConfig(alpha=26691.0, beta=0.5, z0=1.0), spec3, l1, nh)
    assert report.passed


def test_simulate_rejects_inadmissible_start(nh, l1, spec3):
    pc = PenaltyConfig(alpha=1.0, beta=0.5, z0=1.0)
    with pytest.raises(ContractError):
        simulate(nh, l1, spec3, pc, [5.0, 0.0, 0.0])


def test_simulate_max_steps(nh, l1, spec3):
    pc = PenaltyConfig(alpha=26691.0, beta=0.5, z0=98.0)
    log = simulate(nh, l1, spec3, pc, X0, max_steps=2, cfg=CFG)
    assert log.terminated_reason == "max_steps" and log.steps == 2


def test_fig1_run_converges_with_admissible_trace(fig1_log):
    model, cost, spec, pc, log = fig1_log
    assert log.terminated_reason == "converged" and np.linalg.norm(log.final_x) <= 1e-2
    for r in log.records:
        assert check_state(model, r.x)[0] and check_control(model, r.u_applied)
    w = [r.w_x for r in log.records]
    assert any(b > a for a, b in zip(w, w[1:]))


def test_fig1_run_z_trace(fig1_log):
    _, _, _, pc, log = fig1_log
    recs = log.records
    for a, b in zip(recs, recs[1:]):
        assert b.z == (pc.beta * a.z if a.e <= 0 else a.z)


def test_fig1_run_passes_all_checks(fig1_log):
    model, cost, spec, pc, log = fig1_log
    report = check_lemmas(log, pc, spec, cost, model)
    assert report.alpha_precondition and report.passed
    assert report.checks["a"].applicable == log.steps
    assert report.to_dict()["schema"] == 1


def test_low_alpha_is_flagged(fig1_log):
    model, cost, spec, pc, log = fig1_log
    report = check_lemmas(log, PenaltyConfig(alpha=1.0, beta=pc.beta, z0=pc.z0), spec, cost, model)
    assert not report.alpha_precondition and not report.passed
