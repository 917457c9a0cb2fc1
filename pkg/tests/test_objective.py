import numpy as np
import pytest

from contractive_mpc.contraction import ContractionSpec
from contractive_mpc.model import ContractError, NonholonomicParams
from contractive_mpc.objective import (
    PenaltyConfig,
    alpha_min,
    evaluate,
    j_cost,
    l_bar_nonholonomic,
    nonholonomic_cost,
    phi,
    quadratic_stage_cost,
)
from oracles import in_nonholonomic_set, sample_box_rejection

APPENDIX_SEQ = np.array([[-2.0, 0.0], [0.0, -0.5], [0.0, 0.0]])


def test_l_bar_values(params):
    assert l_bar_nonholonomic("L1", params) == pytest.approx(222.425, abs=1e-12)
    assert l_bar_nonholonomic("L2", params) == pytest.approx(40106.585, abs=1e-9)
    with pytest.raises(ContractError):
        l_bar_nonholonomic("L3", params)


def test_l_bar_vanishes_with_degenerate_box():
    # the params class forbids rho = b = 0, so evaluate the formula on a stand-in
    class Zero:
        rho = b = mu = 0.0

    assert l_bar_nonholonomic("L1", Zero) == 0.0 and l_bar_nonholonomic("L2", Zero) == 0.0


def test_alpha_min_values():
    assert alpha_min(3, 222.425, 0.95) == pytest.approx(26691.0, rel=1e-12)
    assert alpha_min(5, 40106.585, 0.95) == pytest.approx(8021317.0, rel=1e-12)
    assert alpha_min(1, 1.0, 0.0) == 2.0
    with pytest.raises(ContractError):
        alpha_min(3, 1.0, 1.0)


def test_penalty_config_validation():
    PenaltyConfig(alpha=1.0, beta=0.5, z0=1.0)
    for kw in [dict(alpha=1, beta=1.0, z0=1), dict(alpha=1, beta=0.5, z0=0), dict(alpha=-1, beta=0.5, z0=1)]:
        with pytest.raises(ContractError):
            PenaltyConfig(**kw)


def test_phi_step_example(nh, l1):
    assert phi(nh, l1, [1, 2, 3], [[0.5, 0.1]], 1) == pytest.approx(16.296, abs=1e-12)


def test_phi_origin(nh, l1, l2):
    for c in (l1, l2):
        assert phi(nh, c, np.zeros(3), np.zeros((4, 2)), 4) == 0.0


def test_phi_additive(nh, l1, rng):
    x = np.array([1.0, -3.0, 2.0])
    useq = rng.uniform(nh.control_lower, nh.control_upper, size=(5, 2))
    for q in range(2, 6):
        prev = phi(nh, l1, x, useq, q - 1)
        last = x
        for u in useq[:q]:
            last = nh.dynamics(last, u)
        assert phi(nh, l1, x, useq, q) == pytest.approx(prev + float(l1(last, useq[q - 1])), rel=1e-14)


def test_j_cost_degenerate_weights(nh, l1, spec3):
    x = [2.0, 10.0, 0.0]
    assert j_cost(nh, l1, spec3, x, 0.0, APPENDIX_SEQ, 3, 5.0) == 5.0 * 90.25
    assert j_cost(nh, l1, spec3, x, 1.0, APPENDIX_SEQ, 3, 0.0) == phi(nh, l1, x, APPENDIX_SEQ, 3)


def test_j_cost_worked_example(nh, l1, spec3):
    x = [2.0, 10.0, 0.0]
    # states (0,10,0), (0,9.5,0), (0,9.5,0) and controls (-2,0), (0,-0.5), (0,0)
    phi_hand = (100 + 0.1 * 4) + (90.25 + 0.1 * 0.25) + 90.25
    assert phi(nh, l1, x, APPENDIX_SEQ, 3) == pytest.approx(phi_hand, rel=1e-14)
    expect = phi_hand + 26691.0 * 90.25
    assert j_cost(nh, l1, spec3, x, 1.0, APPENDIX_SEQ, 3, 26691.0) == pytest.approx(expect, rel=1e-14)


def test_j_cost_rejects_negative_z(nh, l1, spec3):
    with pytest.raises(ContractError):
        j_cost(nh, l1, spec3, np.zeros(3), -1.0, np.zeros((1, 2)), 1, 1.0)


def test_evaluate_batch_matches_single(nh, l1, spec3, rng):
    x = np.array([3.0, 8.0, -5.0])
    pop = rng.uniform(nh.control_lower, nh.control_upper, size=(17, 3, 2))
    batch = evaluate(nh, l1, spec3, x, 4.0, 26691.0, pop)
    for i in range(17):
        one = evaluate(nh, l1, spec3, x, 4.0, 26691.0, pop[i])
        assert one.j == batch.j[i] and one.ell == batch.ell[i] and one.feasible == batch.feasible[i]


def test_evaluate_flags_box_violation(nh, l1, spec3):
    ev = evaluate(nh, l1, spec3, np.zeros(3), 1.0, 1.0, [[0.0, 0.6]])
    assert not ev.feasible


def test_stage_cost_bounds_on_samples(params, nh, l1, l2):
    rng = np.random.default_rng(5)
    xs = sample_box_rejection(rng, [-4, -10, -10], [4, 10, 10], in_nonholonomic_set, 10_000)
    us = rng.uniform(nh.control_lower, nh.control_upper, size=(10_000, 2))
    for c in (l1, l2):
        val = c(xs, us)
        assert np.all(val >= 0) and np.all(val <= c.l_bar)
        assert np.all(val >= c.q_part(xs))
        assert np.all(c.q_part(xs)[np.linalg.norm(xs, axis=1) > 0] > 0)


def test_l2_state_part_is_positive_definite(l2):
    # x' S x with S read off the formula
    S = np.array([[0.01, 0, 0], [0, 101.0, -100.0], [0, -100.0, 100.0]])
    assert np.linalg.eigvalsh(S).min() > 0
    assert l2.q_part(np.array([0.0, 0.0, 1.0])) == 100.0
    xs = np.random.default_rng(2).normal(size=(200, 3))
    np.testing.assert_allclose(l2.q_part(xs), np.einsum("ni,ij,nj->n", xs, S, xs), rtol=1e-12)


def test_quadratic_stage_cost_matches_l1(params, l1):
    custom = quadratic_stage_cost("custom", np.eye(3), 0.1, l1.l_bar, 2)
    x, u = np.array([1.0, 2.0, 3.0]), np.array([0.5, 0.1])
    assert custom(x, u) == pytest.approx(float(l1(x, u)), rel=1e-15)
    with pytest.raises(ContractError):
        quadratic_stage_cost("bad", np.eye(3), -1.0, 1.0, 2)


def test_unknown_cost_rejected(params):
    with pytest.raises(ContractError):
        nonholonomic_cost("L9", NonholonomicParams(4, 10, 0.05))
