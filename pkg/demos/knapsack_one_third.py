"""The knapsack guarantee of one third, and why it cannot be beaten.

Runs the closed-form plan exactly on a unit-mass grid instance, checks the
induction monitors, then sweeps the hardness family whose LP optimum pins
every scheme to alpha_0(2) ~ 0.4223 from above.
"""

from fbcrs import (
    KnapsackInstance,
    SizeLaw,
    alpha_0,
    closed_form_knapsack_plan,
    knapsack_hardness_instance,
    monitor_trace,
    run_knapsack_exact,
    solve_lp_si,
)

B_GRID = tuple(0.05 * k for k in range(1, 11))


def main():
    n = 50
    inst = KnapsackInstance((SizeLaw(((1.0 / n, 1.0),)),) * n)
    plan = closed_form_knapsack_plan(inst)
    result = run_knapsack_exact(inst, plan)
    report = monitor_trace(inst, plan, result, B_GRID)
    print(f"{n} elements of size 1/{n}:")
    print(f"  min pair mean      {min(plan.pair_means):.12f}  (target 1/3)")
    print(f"  max rate error     {result.max_rate_error(plan):.2e}")
    print(f"  monitor violations {report.total_violations}, "
          f"E[T] drift {report.max_expectation_error:.2e}")

    print("\nhardness family: single-unit twin LPOPT vs its limit alpha_0(2)")
    print(f"{'n':>5} {'elements':>9} {'LPOPT':>10} {'bound':>10}")
    for m in (2, 5, 10, 25, 100):
        _, twin = knapsack_hardness_instance(m)
        rho = 2.0 * m / (m + 2)
        lpopt = solve_lp_si(twin).objective
        bound = alpha_0(rho) + (rho + 2.0) / (2 * m + 1)
        print(f"{m:>5} {2 * m + 1:>9} {lpopt:>10.6f} {bound:>10.6f}")
    print(f"{'limit':>5} {'':>9} {alpha_0(2.0):>10.6f}")


if __name__ == "__main__":
    main()
