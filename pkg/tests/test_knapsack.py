"""Knapsack plans, exact fill propagation, monitors, and the MC executor."""

import math
from fractions import Fraction
from itertools import product

import numpy as np
import pytest

from fbcrs.errors import InfeasibleError, InvalidInstanceError, InvariantViolationError
from fbcrs.instances import (
    BACKWARD,
    FORWARD,
    KnapsackInstance,
    Permutation,
    SizeLaw,
    knapsack_hardness_instance,
)
from fbcrs.knapsack import (
    FillDistribution,
    KnapsackPlan,
    build_branch_tables,
    check_knapsack_feasible,
    closed_form_knapsack_plan,
    initial_fill,
    monitor_invariants,
    monitor_trace,
    phi_knapsack,
    propagate_fill,
    run_knapsack_exact,
    run_knapsack_mc,
)

from oracles import match_fill_atoms, replay_knapsack_paths

B_GRID = tuple(0.05 * k for k in range(1, 11))


def test_phi_knapsack_is_the_stated_line():
    assert phi_knapsack(0.0) == pytest.approx(4.0 / 9.0, abs=1e-15)
    assert phi_knapsack(0.5) == pytest.approx(1.0 / 3.0, abs=1e-15)
    for z in np.linspace(0.0, 0.5, 11):
        assert phi_knapsack(float(z)) == pytest.approx(4.0 / 9.0 - 2.0 * z / 9.0, abs=1e-15)


def test_closed_form_plan_two_halves():
    inst = KnapsackInstance((SizeLaw(((0.5, 1.0),)),) * 2)
    plan = closed_form_knapsack_plan(inst)
    assert plan.c_f == pytest.approx((7.0 / 18.0, 5.0 / 18.0), abs=1e-15)
    assert plan.c_b == pytest.approx((5.0 / 18.0, 7.0 / 18.0), abs=1e-15)
    assert plan.pair_means == pytest.approx((1.0 / 3.0, 1.0 / 3.0), abs=1e-15)
    assert plan.objective == pytest.approx(1.0 / 3.0, abs=1e-15)


def test_closed_form_plan_partial_mass():
    # total mean 0.5 leaves every pair mean at (4 - 0.5)/9
    inst = KnapsackInstance((SizeLaw(((0.25, 1.0),)),) * 2)
    plan = closed_form_knapsack_plan(inst)
    target = (4.0 - 0.5) / 9.0
    for pm in plan.pair_means:
        assert pm == pytest.approx(target, abs=1e-12)


def test_plan_validation():
    with pytest.raises(InvalidInstanceError):
        KnapsackPlan((1.5,), (0.5,))
    with pytest.raises(InvalidInstanceError):
        KnapsackPlan((0.5, 0.5), (0.5,))


def test_feasibility_checker_flags_monotone_break():
    inst = KnapsackInstance((SizeLaw(((0.5, 1.0),)),) * 2)
    good = closed_form_knapsack_plan(inst)
    assert check_knapsack_feasible(good, inst).ok()
    # increasing along the forward arrival order breaks the requirement
    bad = KnapsackPlan((5.0 / 18.0, 7.0 / 18.0), good.c_b)
    report = check_knapsack_feasible(bad, inst)
    assert not report.ok()
    assert report.monotone_violations


def test_feasibility_checker_flags_zero_first():
    inst = KnapsackInstance((SizeLaw(((0.5, 1.0),)),) * 2)
    plan = KnapsackPlan((0.0, 0.0), (0.0, 0.0))
    report = check_knapsack_feasible(plan, inst)
    assert report.zero_first_flagged


def test_propagate_fill_hand_example():
    # fill {0: 0.85, 0.4: 0.15}, deterministic size 0.5, c = 0.2:
    # P1 = 0.15 forces b1 = 1, then b2 = (0.2 - 0.15)/0.85 = 1/17
    dist = FillDistribution(((0.0, 0.85), (0.4, 0.15)))
    law = SizeLaw(((0.5, 1.0),))
    out, schedule = propagate_fill(dist, law, 0.2)
    branch = schedule[0.5]
    assert branch.p_interval == pytest.approx(1.0, abs=1e-15)
    assert branch.p_zero == pytest.approx(1.0 / 17.0, abs=1e-15)
    assert branch.rate == pytest.approx(0.2, abs=1e-15)
    expected = ((0.0, 0.8), (0.5, 0.05), (0.9, 0.15))
    assert len(out.atoms) == len(expected)
    for got, want in zip(out.atoms, expected):
        assert got == pytest.approx(want, abs=1e-15)


def test_propagate_fill_rejects_unreachable_acceptance():
    dist = FillDistribution(((0.6, 1.0),))
    law = SizeLaw(((0.5, 1.0),))
    with pytest.raises(InfeasibleError):
        propagate_fill(dist, law, 0.1)


def test_propagate_fill_rejects_bad_probability():
    with pytest.raises(InvalidInstanceError):
        propagate_fill(initial_fill(), SizeLaw(((0.5, 1.0),)), 1.2)


def test_fill_distribution_validation():
    with pytest.raises(InvariantViolationError):
        FillDistribution(((0.0, 0.5),))  # mass 0.5
    with pytest.raises(InvariantViolationError):
        FillDistribution(((1.5, 1.0),))  # fill above 1


def test_exact_run_fifty_uniform_elements():
    n = 50
    inst = KnapsackInstance((SizeLaw(((1.0 / n, 1.0),)),) * n)
    plan = closed_form_knapsack_plan(inst)
    assert min(plan.pair_means) == pytest.approx(1.0 / 3.0, abs=1e-12)
    result = run_knapsack_exact(inst, plan)
    assert result.max_rate_error(plan) <= 1e-10
    report = monitor_trace(inst, plan, result, B_GRID)
    assert report.ok()
    assert report.total_violations == 0
    assert report.max_expectation_error <= 1e-10


def test_monitor_catches_bad_distribution():
    # all mass at 0.3 with tiny first-element acceptance: the survival
    # inequality fails at b = 0.3
    dist = FillDistribution(((0.3, 1.0),))
    report = monitor_invariants(dist, 0.1, (0.3,))
    assert not report.ok()
    assert report.violations


def test_monitor_zero_slack():
    dist = FillDistribution(((0.0, 0.4), (0.5, 0.6)))
    report = monitor_invariants(dist, 0.3, (0.25,), c_current=0.5)
    assert report.zero_slack == pytest.approx(-0.1, abs=1e-15)
    assert not report.ok()


def test_monitor_rejects_bad_grid():
    with pytest.raises(ValueError):
        monitor_invariants(initial_fill(), 0.3, (0.6,))


def test_hardness_instance_accepts_at_most_one():
    inst, _ = knapsack_hardness_instance(2)
    plan = closed_form_knapsack_plan(inst)
    result = run_knapsack_exact(inst, plan)
    # element size is 1, so the final fill only ever holds 0 or 1
    for dist in (result.final_fill_f, result.final_fill_b):
        assert set(v for v, _ in dist.atoms) <= {0.0, 1.0}


# --- path-enumeration oracle -------------------------------------------------

LAW_LIBRARY = (
    SizeLaw(((0.3, 1.0),)),
    SizeLaw(((0.5, 0.6),), 0.4),
    SizeLaw(((0.2, 0.5), (0.7, 0.3)), 0.2),
    SizeLaw(((1.0, 0.25),), 0.75),
    SizeLaw(((0.05, 0.5), (0.45, 0.5)),),
)


def _oracle_family():
    for n in (1, 2, 3):
        for combo in product(range(len(LAW_LIBRARY)), repeat=n):
            laws = tuple(LAW_LIBRARY[k] for k in combo)
            if math.fsum(law.mean for law in laws) <= 1.0:
                yield KnapsackInstance(laws)


def test_exact_run_matches_path_enumeration():
    count = 0
    for inst in _oracle_family():
        plan = closed_form_knapsack_plan(inst)
        result = run_knapsack_exact(inst, plan)
        for tag in (FORWARD, BACKWARD):
            order = Permutation(tag, inst.n).order()
            rates, states = replay_knapsack_paths(inst, result.schedules(tag), order)
            assert rates == pytest.approx(result.rates(tag), abs=1e-12)
            assert rates == pytest.approx(plan.rates(tag), abs=1e-12)
            final = result.traces(tag)[-1]
            assert match_fill_atoms(states, final.atoms) <= 1e-12
        count += 1
    assert count > 50  # the grid really is a family, not a handful


def test_exact_expectation_identity():
    rng = np.random.default_rng(5)
    for _ in range(10):
        n = int(rng.integers(1, 4))
        laws = tuple(LAW_LIBRARY[k] for k in rng.integers(0, len(LAW_LIBRARY), n))
        if math.fsum(law.mean for law in laws) > 1.0:
            continue
        inst = KnapsackInstance(laws)
        plan = closed_form_knapsack_plan(inst)
        result = run_knapsack_exact(inst, plan)
        for tag in (FORWARD, BACKWARD):
            expected = math.fsum(
                plan.rates(tag)[i] * inst.mu[i] for i in range(inst.n)
            )
            assert result.traces(tag)[-1].expectation == pytest.approx(expected, abs=1e-10)


# --- Monte Carlo -------------------------------------------------------------


def test_branch_tables_deterministic():
    inst = KnapsackInstance((SizeLaw(((0.2, 0.5), (0.7, 0.3)), 0.2),) * 2)
    plan = closed_form_knapsack_plan(inst)
    a = build_branch_tables(inst, plan, seed=4, pool_size=500)
    b = build_branch_tables(inst, plan, seed=4, pool_size=500)
    c = build_branch_tables(inst, plan, seed=5, pool_size=500)
    for tag in (FORWARD, BACKWARD):
        for (sa, b1a, b2a), (sb, b1b, b2b) in zip(a[tag], b[tag]):
            assert np.array_equal(b1a, b1b) and np.array_equal(b2a, b2b)
    assert any(
        not np.array_equal(x[1], y[1]) for x, y in zip(a[FORWARD], c[FORWARD])
    )


def test_mc_agrees_with_exact():
    inst = KnapsackInstance(
        (
            SizeLaw(((0.5, 1.0),)),
            SizeLaw(((0.2, 0.5), (0.7, 0.3)), 0.2),
        )
    )
    plan = closed_form_knapsack_plan(inst)
    exact = run_knapsack_exact(inst, plan)
    est = run_knapsack_mc(inst, plan, trials=200_000, seed=3, pool_size=100_000)
    for i in range(inst.n):
        for tag, key in ((FORWARD, ("f", i)), (BACKWARD, ("b", i))):
            e = est[key]
            truth = exact.rates(tag)[i]
            assert abs(e.point - truth) <= 3.0 * e.half_width, (key, e.point, truth)
