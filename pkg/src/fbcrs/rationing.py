"""Fair rationing: ex-ante service targets and the online allocation executor.

Each agent has a random demand and a service notion (Type-I: all or nothing
at the demanded amount, Type-II: fill fraction of the mean demand, Type-III:
fill fraction of the realized demand).  A service target gives every agent a
guarantee beta_i, an activation quantile q_i, and the supply share
x_i = integral of min(F^-1, 1) over [0, q_i] that the quantile buys.

The executor visits agents in a uniformly random forward or backward order.
An agent participates when its demand quantile falls below q_i and then
receives its demand capped by the remaining supply and by a per-order
threshold tau_i, calibrated so the expected allocation equals the planned
selection rate times x_i.  Every agent then collects expected service of at
least the pair-mean rate times beta_i.  Instances containing a Type-I agent
run through the knapsack scheme instead, with element sizes min(D_i, 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import InfeasibleError, InvalidInstanceError, InvariantViolationError
from .instances import (
    BACKWARD,
    FORWARD,
    DemandLaw,
    KnapsackInstance,
    Permutation,
    RationingInstance,
    ServiceType,
    SingleUnitInstance,
    SizeLaw,
    inverse_cdf,
)
from .knapsack import (
    ATOM_TOL,
    DEFAULT_POOL_SIZE,
    FEAS_TOL,
    RATE_TOL,
    KnapsackPlan,
    _merge_atoms,
    build_branch_tables,
    closed_form_knapsack_plan,
    run_knapsack_exact,
)
from .lp_si import SelectionPlan, solve_lp_si
from .sim import MeanEstimate, run_trials, stream

SUPPLY_TOL = 1e-10
CALIBRATION_TOL = 1e-9

# Exact propagation falls back to a sampled remaining-supply law past this
# support size; the resample has its own stream namespace (sim uses 0 and 1).
REM_ATOM_CAP = 100_000
REM_SAMPLES = 10_000
NS_REM = 2
NS_TRACE = 3

ROUTE_SINGLE_UNIT = "single-unit"
ROUTE_KNAPSACK = "knapsack"


def service_value(stype, y: float, d: float, mean: float | None = None) -> float:
    """Service delivered by allocation y against demand d.

    Type-II service is min(y, d) / mean and deliberately exceeds 1 when the
    realized demand does; clamping would break the identity between expected
    service and the calibrated target.  Type-III treats zero demand as fully
    served.
    """
    stype = ServiceType.parse(stype)
    if y < 0.0 or d < 0.0:
        raise InvalidInstanceError("allocation and demand must be nonnegative")
    if stype is ServiceType.TYPE_I:
        return 1.0 if y >= d else 0.0
    if stype is ServiceType.TYPE_II:
        if mean is None or mean <= 0.0:
            raise InvalidInstanceError("Type-II service needs the positive demand mean")
        return min(y, d) / mean
    if d == 0.0:
        return 1.0
    return min(y, d) / d


def _below_above(law: DemandLaw, q: float) -> tuple[tuple[float, ...], tuple[float, ...]]:
    """Per-atom quantile lengths below and above q, aligned with law.atoms."""
    below, above, prev = [], [], 0.0
    for cum in law.cum:
        below.append(max(0.0, min(cum, q) - min(prev, q)))
        above.append(max(0.0, cum - max(prev, q)))
        prev = cum
    return tuple(below), tuple(above)


def supply_x(law: DemandLaw, q: float) -> float:
    """Supply share bought by activation quantile q: integral of min(F^-1, 1)."""
    below, _ = _below_above(law, q)
    return math.fsum(length * min(d, 1.0) for (d, _), length in zip(law.atoms, below))


def _service_density(stype: ServiceType, d: float, mean: float) -> float:
    """Marginal service per unit of activation quantile at demand value d."""
    if stype is ServiceType.TYPE_I:
        return 1.0 if d <= 1.0 else 0.0
    if stype is ServiceType.TYPE_II:
        return min(d, 1.0) / mean
    if d == 0.0:
        return 1.0
    return min(d, 1.0) / d


def solve_q_for_beta(law: DemandLaw, stype, beta: float) -> float:
    """Smallest activation quantile that achieves service level beta.

    The achieved level grows piecewise linearly in q (demand laws are stored
    sorted, so the slope changes only at atom boundaries) and the walk solves
    the crossing segment exactly.  Raises InfeasibleError when even q = 1
    falls short.
    """
    stype = ServiceType.parse(stype)
    if not 0.0 <= beta <= 1.0:
        raise InvalidInstanceError(f"beta {beta} outside [0, 1]")
    if beta == 0.0:
        return 0.0
    acc, prev = 0.0, 0.0
    for (d, _), cum in zip(law.atoms, law.cum):
        if acc >= beta - 1e-15:
            return prev
        v = _service_density(stype, d, law.mean)
        seg = cum - prev
        if v > 0.0 and acc + v * seg >= beta - 1e-15:
            return min(prev + (beta - acc) / v, 1.0)
        acc += v * seg
        prev = cum
    if acc >= beta - SUPPLY_TOL:
        return min(prev, 1.0)
    raise InfeasibleError(f"service level {beta} is unachievable (agent tops out at {acc:.12g})")


@dataclass(frozen=True)
class ServiceTarget:
    """Per-agent service level beta, activation quantile q, and supply share x."""

    beta: tuple[float, ...]
    q: tuple[float, ...]
    x: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "beta", tuple(float(v) for v in self.beta))
        object.__setattr__(self, "q", tuple(float(v) for v in self.q))
        object.__setattr__(self, "x", tuple(float(v) for v in self.x))
        if not self.beta or not len(self.beta) == len(self.q) == len(self.x):
            raise InvalidInstanceError("beta, q, x must be nonempty and equal length")
        for name, values in (("beta", self.beta), ("q", self.q), ("x", self.x)):
            if any(not 0.0 <= v <= 1.0 + SUPPLY_TOL for v in values):
                raise InvalidInstanceError(f"{name} entries must lie in [0, 1]")
        if math.fsum(self.x) > 1.0 + SUPPLY_TOL:
            raise InvalidInstanceError("supply shares exceed the unit supply")

    @property
    def n(self) -> int:
        return len(self.beta)

    @cached_property
    def total_supply(self) -> float:
        return math.fsum(self.x)

    def single_unit(self) -> SingleUnitInstance:
        """Twin single-unit instance whose activity probabilities are x."""
        return SingleUnitInstance(self.x)


def exante_check(inst: RationingInstance, beta) -> ServiceTarget | None:
    """Solve the per-agent quantiles for the requested service levels.

    Raises InfeasibleError when some agent cannot reach its own beta with the
    whole quantile range; returns None when every agent can individually but
    the supply shares add up to more than the unit supply.
    """
    betas = tuple(float(b) for b in beta)
    if len(betas) != inst.n:
        raise InvalidInstanceError("one service level per agent is required")
    qs, xs = [], []
    for law, stype, b in zip(inst.demands, inst.service, betas):
        q = solve_q_for_beta(law, stype, b)
        qs.append(q)
        xs.append(supply_x(law, q))
    if math.fsum(xs) > 1.0 + SUPPLY_TOL:
        return None
    return ServiceTarget(betas, tuple(qs), tuple(xs))


def max_uniform_beta(inst: RationingInstance) -> float:
    """Largest common service level all agents can be promised at once.

    Capped by each agent's own achievable range, then bisected to 1e-9 on
    the unit-supply constraint (total x is nondecreasing in beta).
    """
    caps = []
    for law, stype in zip(inst.demands, inst.service):
        acc, prev = 0.0, 0.0
        for (d, _), cum in zip(law.atoms, law.cum):
            acc += _service_density(stype, d, law.mean) * (cum - prev)
            prev = cum
        caps.append(min(1.0, acc))
    upper = min(caps)
    if upper <= 0.0:
        return 0.0

    def total(b: float) -> float:
        return math.fsum(
            supply_x(law, solve_q_for_beta(law, stype, b))
            for law, stype in zip(inst.demands, inst.service)
        )

    if total(upper) <= 1.0 + SUPPLY_TOL:
        return upper
    lo, hi = 0.0, upper
    while hi - lo > 1e-9:
        mid = (lo + hi) / 2
        if total(mid) <= 1.0 + SUPPLY_TOL:
            lo = mid
        else:
            hi = mid
    return lo


@dataclass(frozen=True)
class RemDistribution:
    """Law of the remaining supply seen by one arrival under one order."""

    atoms: tuple[tuple[float, float], ...]  # (value, prob), values ascending
    tag: str = FORWARD

    def __post_init__(self):
        if self.tag not in (FORWARD, BACKWARD):
            raise InvalidInstanceError(f"unknown order tag {self.tag!r}")
        if not self.atoms:
            raise InvalidInstanceError("a remaining-supply law needs at least one atom")
        values = [v for v, _ in self.atoms]
        if values != sorted(values):
            raise InvalidInstanceError("atoms must be sorted by value")
        if any(v < -1e-12 or v > 1.0 + 1e-12 for v in values):
            raise InvalidInstanceError("remaining supply must lie in [0, 1]")
        if any(p <= 0.0 for _, p in self.atoms):
            raise InvalidInstanceError("atom probabilities must be positive")
        if abs(math.fsum(p for _, p in self.atoms) - 1.0) > 1e-10:
            raise InvariantViolationError("remaining-supply law lost probability mass")

    @property
    def support_size(self) -> int:
        return len(self.atoms)

    @cached_property
    def expectation(self) -> float:
        return math.fsum(v * p for v, p in self.atoms)


def calibrate_tau(law: DemandLaw, q: float, rem: RemDistribution, target: float) -> float:
    """Threshold tau with E[min(D, R, tau); Q < q] = target, exactly.

    The expectation is concave piecewise linear in tau with breakpoints at
    the caps min(d, r), so one sorted walk finds the crossing segment.
    Raises InvariantViolationError when the target exceeds the reachable
    maximum; a nonpositive target calibrates to zero.
    """
    if target <= 0.0:
        return 0.0
    below, _ = _below_above(law, q)
    caps: dict[float, float] = {}
    for (d, _), length in zip(law.atoms, below):
        if length <= 0.0:
            continue
        for r, pr in rem.atoms:
            a = min(d, r)
            if a > 0.0:
                caps[a] = caps.get(a, 0.0) + pr * length
    reachable = math.fsum(a * w for a, w in caps.items())
    if target > reachable + CALIBRATION_TOL:
        raise InvariantViolationError(
            f"calibration target {target:.12g} exceeds the reachable allocation {reachable:.12g}"
        )
    below_sum = 0.0  # sum of w * a over caps already passed
    at_or_above = math.fsum(caps.values())
    last = 0.0
    for a in sorted(caps):
        if below_sum + a * at_or_above >= target - 1e-15:
            return min((target - below_sum) / at_or_above, 1.0)
        w = caps[a]
        below_sum += a * w
        at_or_above -= w
        last = a
    return min(last, 1.0)


@dataclass(frozen=True)
class _OrderTables:
    """Exact per-order calibration output for the single-unit route."""

    taus: tuple[float, ...]
    alloc: tuple[float, ...]  # E[Y_i | order]
    service: tuple[float, ...]  # E[s_i | order]
    rem_slack: float  # worst margin of the supply invariant across arrivals
    final_rem: RemDistribution


def _resample_rem(rem: dict[float, float], rng) -> dict[float, float]:
    """Collapse an oversized remaining-supply law to a sampled empirical one."""
    values = np.array(sorted(rem))
    probs = np.array([rem[v] for v in values])
    draws = rng.choice(values, size=REM_SAMPLES, p=probs / probs.sum())
    unique, counts = np.unique(draws, return_counts=True)
    return dict(_merge_atoms({float(v): c / REM_SAMPLES for v, c in zip(unique, counts)}))


def _exact_order(
    inst: RationingInstance,
    target: ServiceTarget,
    rates: tuple[float, ...],
    tag: str,
    rng,
) -> _OrderTables:
    """Propagate the remaining-supply law through one arrival order.

    Checks three invariants at every arrival: the worst-case supply floor
    (1 - consumed) * x_i stays reachable, the calibrated allocation hits
    rate * x_i, and the conditional service clears rate * beta_i.
    """
    n = inst.n
    taus = [0.0] * n
    alloc = [0.0] * n
    service = [0.0] * n
    rem: dict[float, float] = {1.0: 1.0}
    consumed = 0.0
    slack = math.inf
    for i in Permutation(tag, n).order():
        law, stype = inst.demands[i], inst.service[i]
        q, x, b = target.q[i], target.x[i], target.beta[i]
        below, above = _below_above(law, q)
        dist = RemDistribution(tuple(sorted(rem.items())), tag)
        reachable = math.fsum(
            pr * length * min(d, r)
            for (d, _), length in zip(law.atoms, below)
            if length > 0.0
            for r, pr in dist.atoms
        )
        floor = (1.0 - consumed) * x
        slack = min(slack, reachable - floor)
        if reachable < floor - CALIBRATION_TOL:
            raise InvariantViolationError(
                f"supply invariant broken before agent {i} ({tag}): "
                f"reachable {reachable:.12g} < floor {floor:.12g}"
            )
        tau = calibrate_tau(law, q, dist, rates[i] * x)
        taus[i] = tau
        alloc[i] = math.fsum(
            pr * length * min(d, r, tau)
            for (d, _), length in zip(law.atoms, below)
            if length > 0.0
            for r, pr in dist.atoms
        )
        if abs(alloc[i] - rates[i] * x) > CALIBRATION_TOL:
            raise InvariantViolationError(
                f"calibrated allocation {alloc[i]:.12g} misses {rates[i] * x:.12g} for agent {i}"
            )
        terms = []
        for (d, _), length, tail in zip(law.atoms, below, above):
            if length > 0.0:
                for r, pr in dist.atoms:
                    terms.append(pr * length * service_value(stype, min(d, r, tau), d, law.mean))
            if tail > 0.0:
                terms.append(tail * service_value(stype, 0.0, d, law.mean))
        service[i] = math.fsum(terms)
        if service[i] < rates[i] * b - CALIBRATION_TOL:
            raise InvariantViolationError(
                f"conditional service {service[i]:.12g} below rate * beta for agent {i}"
            )
        new: dict[float, float] = {}
        for r, pr in dist.atoms:
            stay = pr * (1.0 - q)
            if stay > 0.0:
                new[r] = new.get(r, 0.0) + stay
            for (d, _), length in zip(law.atoms, below):
                if length <= 0.0:
                    continue
                v = r - min(d, r, tau)
                new[v] = new.get(v, 0.0) + pr * length
        rem = dict(_merge_atoms(new))
        if len(rem) > REM_ATOM_CAP:
            rem = _resample_rem(rem, rng)
        consumed += rates[i] * x
    return _OrderTables(
        tuple(taus),
        tuple(alloc),
        tuple(service),
        slack,
        RemDistribution(tuple(sorted(rem.items())), tag),
    )


@dataclass(frozen=True)
class KnapsackReduction:
    """Knapsack view of a rationing instance: one element per supplied agent.

    Agents with x = 0 buy nothing and stay out of the contention; their
    service comes from the zero allocation alone.  atom_of_segment maps each
    demand atom of an agent to its size-atom index in the element's law
    (None when the atom has no mass below q or the agent is skipped).
    """

    instance: KnapsackInstance
    element_of_agent: tuple[int | None, ...]
    agent_of_element: tuple[int, ...]
    atom_of_segment: tuple[tuple[int | None, ...], ...]


def knapsack_reduction(inst: RationingInstance, target: ServiceTarget) -> KnapsackReduction:
    """Build the knapsack instance with element sizes min(D, 1) on Q < q."""
    if inst.n != target.n:
        raise InvalidInstanceError("target does not match the instance")
    laws: list[SizeLaw] = []
    element_of_agent: list[int | None] = []
    agent_of_element: list[int] = []
    atom_maps: list[tuple[int | None, ...]] = []
    for i, (law, q, x) in enumerate(zip(inst.demands, target.q, target.x)):
        below, _ = _below_above(law, q)
        if x <= 0.0:
            element_of_agent.append(None)
            atom_maps.append((None,) * len(law.atoms))
            continue
        sizes: dict[float, float] = {}
        for (d, _), length in zip(law.atoms, below):
            if length > 0.0:
                s = min(d, 1.0)
                sizes[s] = sizes.get(s, 0.0) + length
        active = math.fsum(sizes.values())
        size_law = SizeLaw(tuple(sorted(sizes.items())), inactive_mass=1.0 - active)
        if abs(size_law.mean - x) > CALIBRATION_TOL:
            raise InvariantViolationError("element mean drifted from the supply share")
        index_of_size = {s: j for j, (s, _) in enumerate(size_law.atoms)}
        atom_maps.append(
            tuple(
                index_of_size[min(d, 1.0)] if length > 0.0 else None
                for (d, _), length in zip(law.atoms, below)
            )
        )
        element_of_agent.append(len(laws))
        agent_of_element.append(i)
        laws.append(size_law)
    if not laws:
        raise InfeasibleError("no agent buys any supply; nothing to allocate")
    return KnapsackReduction(
        KnapsackInstance(tuple(laws)),
        tuple(element_of_agent),
        tuple(agent_of_element),
        tuple(atom_maps),
    )


@dataclass(frozen=True)
class AgentReport:
    """Per-agent summary: target, plan rates, thresholds, realized service."""

    index: int
    beta: float
    q: float
    x: float
    c_f: float | None
    c_b: float | None
    tau_f: float | None
    tau_b: float | None
    expected_service: float
    service_low: float | None
    service_high: float | None
    expected_alloc: float
    bound: float
    slack: float


@dataclass(frozen=True)
class AllocationTrace:
    """One sampled run: per-agent quantile, demand, allocation, service."""

    tag: str
    quantiles: tuple[float, ...]
    demands: tuple[float, ...]
    allocations: tuple[float, ...]
    services: tuple[float, ...]

    def __post_init__(self):
        if any(y > d + 1e-9 for y, d in zip(self.allocations, self.demands)):
            raise InvariantViolationError("an allocation exceeds its demand")
        if math.fsum(self.allocations) > 1.0 + 1e-9:
            raise InvariantViolationError("allocations exceed the unit supply")


@dataclass(frozen=True)
class RationingResult:
    """Output of run_rationing: route taken, per-agent reports, sample traces."""

    route: str
    mode: str
    target: ServiceTarget
    plan: SelectionPlan | KnapsackPlan
    agents: tuple[AgentReport, ...]
    traces: tuple[AllocationTrace, ...]
    rem_slack: float | None  # single-unit route only
    estimates: dict | None  # raw MC estimates, mc mode only

    @property
    def min_slack(self) -> float:
        return min(a.slack for a in self.agents)

    def guarantee_ok(self, tol: float = CALIBRATION_TOL) -> bool:
        return self.min_slack >= -tol


def _service_array(stype: ServiceType, y: np.ndarray, d: np.ndarray, mean: float) -> np.ndarray:
    if stype is ServiceType.TYPE_I:
        return (y >= d).astype(float)
    if stype is ServiceType.TYPE_II:
        return np.minimum(y, d) / mean
    safe = np.where(d > 0.0, d, 1.0)
    return np.where(d > 0.0, np.minimum(y, d) / safe, 1.0)


def _pooled(estimates: dict, kind: str, i: int, confidence: float) -> MeanEstimate:
    """Merge the two per-order estimates into one over the random order."""
    f = estimates[(kind, FORWARD[0], i)]
    b = estimates[(kind, BACKWARD[0], i)]
    return MeanEstimate(f.total + b.total, f.total_sq + b.total_sq, f.count + b.count, confidence)


def _single_unit_experiment(inst: RationingInstance, target: ServiceTarget, taus: dict):
    n = inst.n
    cums = [np.array(law.cum) for law in inst.demands]
    dvals = [np.array([d for d, _ in law.atoms]) for law in inst.demands]
    means = [law.mean for law in inst.demands]
    orders = {tag: Permutation(tag, n).order() for tag in (FORWARD, BACKWARD)}

    def experiment(rng, m: int):
        forward = rng.random(m) < 0.5
        out = {}
        for tag in (FORWARD, BACKWARD):
            rows = int(forward.sum()) if tag == FORWARD else int(m - forward.sum())
            rems = np.ones(rows)
            for i in orders[tag]:
                u = rng.random(rows)
                active = u < target.q[i]
                idx = np.minimum(np.searchsorted(cums[i], u, side="left"), len(dvals[i]) - 1)
                d = dvals[i][idx]
                y = np.where(active, np.minimum(np.minimum(d, rems), taus[tag][i]), 0.0)
                rems = rems - y
                s = _service_array(inst.service[i], y, d, means[i])
                out[("service", tag[0], i)] = (float(s.sum()), float((s * s).sum()), rows)
                out[("alloc", tag[0], i)] = (float(y.sum()), float((y * y).sum()), rows)
            if rows and float(rems.min()) < -1e-9:
                raise InvariantViolationError("negative remaining supply in simulation")
        return out

    return experiment


def _knapsack_experiment(inst: RationingInstance, target: ServiceTarget, red: KnapsackReduction, tables: dict):
    n = inst.n
    cums = [np.array(law.cum) for law in inst.demands]
    dvals = [np.array([d for d, _ in law.atoms]) for law in inst.demands]
    means = [law.mean for law in inst.demands]
    seg_atom = [
        np.array([-1 if a is None else a for a in red.atom_of_segment[i]], dtype=np.int64)
        for i in range(n)
    ]
    orders = {tag: Permutation(tag, n).order() for tag in (FORWARD, BACKWARD)}

    def experiment(rng, m: int):
        forward = rng.random(m) < 0.5
        out = {}
        for tag in (FORWARD, BACKWARD):
            rows = int(forward.sum()) if tag == FORWARD else int(m - forward.sum())
            fills = np.zeros(rows)
            for i in orders[tag]:
                u = rng.random(rows)
                idx = np.minimum(np.searchsorted(cums[i], u, side="left"), len(dvals[i]) - 1)
                d = dvals[i][idx]
                e = red.element_of_agent[i]
                if e is None:
                    y = np.zeros(rows)
                else:
                    active = u < target.q[i]
                    _, b1, b2 = tables[tag][e]
                    atom = np.maximum(seg_atom[i][idx], 0)  # valid wherever active
                    s_row = np.where(active, np.minimum(d, 1.0), 0.0)
                    u2 = rng.random(rows)
                    zero = fills == 0.0
                    fits = fills <= 1.0 - s_row + ATOM_TOL
                    take = active & ((~zero & fits & (u2 < b1[atom])) | (zero & (u2 < b2[atom])))
                    y = np.where(take, s_row, 0.0)
                    fills = fills + y
                s = _service_array(inst.service[i], y, d, means[i])
                out[("service", tag[0], i)] = (float(s.sum()), float((s * s).sum()), rows)
                out[("alloc", tag[0], i)] = (float(y.sum()), float((y * y).sum()), rows)
            if rows and float(fills.max()) > 1.0 + FEAS_TOL:
                raise InvariantViolationError("knapsack fill exceeded the unit supply")
        return out

    return experiment


def _knapsack_agent_expectations(
    inst: RationingInstance,
    target: ServiceTarget,
    red: KnapsackReduction,
    rates: tuple[float, ...],
    i: int,
) -> tuple[float, float]:
    """Exact (E[Y_i | order], E[s_i | order]) for the knapsack route.

    Valid because the verified executor accepts at the planned rate for every
    size, so acceptance is independent of the size atom drawn.
    """
    law, stype = inst.demands[i], inst.service[i]
    below, above = _below_above(law, target.q[i])
    e = red.element_of_agent[i]
    c = 0.0 if e is None else rates[e]
    alloc_terms, service_terms = [], []
    for (d, _), length, tail in zip(law.atoms, below, above):
        if length > 0.0:
            y = min(d, 1.0)
            alloc_terms.append(length * c * y)
            service_terms.append(
                length
                * (
                    c * service_value(stype, y, d, law.mean)
                    + (1.0 - c) * service_value(stype, 0.0, d, law.mean)
                )
            )
        if tail > 0.0:
            service_terms.append(tail * service_value(stype, 0.0, d, law.mean))
    return math.fsum(alloc_terms), math.fsum(service_terms)


def _sample_single_unit_traces(
    inst: RationingInstance, target: ServiceTarget, taus: dict, seed: int, count: int
) -> tuple[AllocationTrace, ...]:
    rng = stream(seed, NS_TRACE)
    out = []
    for _ in range(count):
        tag = FORWARD if rng.random() < 0.5 else BACKWARD
        rem = 1.0
        qs, ds, ys, ss = [0.0] * inst.n, [0.0] * inst.n, [0.0] * inst.n, [0.0] * inst.n
        for i in Permutation(tag, inst.n).order():
            law = inst.demands[i]
            u = float(rng.random())
            d = inverse_cdf(law, u)
            y = min(d, rem, taus[tag][i]) if u < target.q[i] else 0.0
            rem -= y
            qs[i], ds[i], ys[i] = u, d, y
            ss[i] = service_value(inst.service[i], y, d, law.mean)
        out.append(AllocationTrace(tag, tuple(qs), tuple(ds), tuple(ys), tuple(ss)))
    return tuple(out)


def _sample_knapsack_traces(
    inst: RationingInstance,
    target: ServiceTarget,
    red: KnapsackReduction,
    branch: dict,
    seed: int,
    count: int,
) -> tuple[AllocationTrace, ...]:
    rng = stream(seed, NS_TRACE)
    out = []
    for _ in range(count):
        tag = FORWARD if rng.random() < 0.5 else BACKWARD
        fill = 0.0
        qs, ds, ys, ss = [0.0] * inst.n, [0.0] * inst.n, [0.0] * inst.n, [0.0] * inst.n
        for i in Permutation(tag, inst.n).order():
            law = inst.demands[i]
            u = float(rng.random())
            d = inverse_cdf(law, u)
            y = 0.0
            e = red.element_of_agent[i]
            if e is not None and u < target.q[i]:
                s_val = min(d, 1.0)
                b1, b2 = branch[tag][e][s_val]
                if fill == 0.0:
                    p = b2
                elif fill <= 1.0 - s_val + ATOM_TOL:
                    p = b1
                else:
                    p = 0.0
                if float(rng.random()) < p:
                    y = s_val
                    fill += y
            qs[i], ds[i], ys[i] = u, d, y
            ss[i] = service_value(inst.service[i], y, d, law.mean)
        out.append(AllocationTrace(tag, tuple(qs), tuple(ds), tuple(ys), tuple(ss)))
    return tuple(out)


def _run_single_unit_route(
    inst, target, plan, mode, trials, seed, workers, confidence, trace_count
) -> RationingResult:
    su = target.single_unit()
    if plan is None:
        plan = solve_lp_si(su)
    if not isinstance(plan, SelectionPlan) or plan.n != inst.n:
        raise InvalidInstanceError("the single-unit route needs a SelectionPlan of matching length")
    if not plan.is_feasible(su):
        raise InfeasibleError("the selection plan is infeasible for these supply shares")
    tables = {
        tag: _exact_order(inst, target, plan.rates(tag), tag, stream(seed, NS_REM, k))
        for k, tag in enumerate((FORWARD, BACKWARD))
    }
    taus = {tag: tables[tag].taus for tag in tables}
    pair = plan.pair_means
    traces = _sample_single_unit_traces(inst, target, taus, seed, trace_count)
    rem_slack = min(t.rem_slack for t in tables.values())

    def report(i, es, lo, hi, ey):
        bound = pair[i] * target.beta[i]
        return AgentReport(
            index=i,
            beta=target.beta[i],
            q=target.q[i],
            x=target.x[i],
            c_f=plan.c_f[i],
            c_b=plan.c_b[i],
            tau_f=taus[FORWARD][i],
            tau_b=taus[BACKWARD][i],
            expected_service=es,
            service_low=lo,
            service_high=hi,
            expected_alloc=ey,
            bound=bound,
            slack=es - bound,
        )

    if mode == "exact":
        agents = []
        for i in range(inst.n):
            es = (tables[FORWARD].service[i] + tables[BACKWARD].service[i]) / 2
            ey = (tables[FORWARD].alloc[i] + tables[BACKWARD].alloc[i]) / 2
            if es < pair[i] * target.beta[i] - CALIBRATION_TOL:
                raise InvariantViolationError(f"service guarantee missed for agent {i}")
            agents.append(report(i, es, None, None, ey))
        return RationingResult(
            ROUTE_SINGLE_UNIT, "exact", target, plan, tuple(agents), traces, rem_slack, None
        )
    estimates = run_trials(
        _single_unit_experiment(inst, target, taus), trials, seed, workers, confidence
    )
    agents = []
    for i in range(inst.n):
        est = _pooled(estimates, "service", i, confidence)
        ey = _pooled(estimates, "alloc", i, confidence)
        agents.append(report(i, est.point, est.ci_low, est.ci_high, ey.point))
    return RationingResult(
        ROUTE_SINGLE_UNIT, "mc", target, plan, tuple(agents), traces, rem_slack, estimates
    )


def _run_knapsack_route(
    inst, target, plan, mode, trials, seed, workers, confidence, pool_size, trace_count
) -> RationingResult:
    red = knapsack_reduction(inst, target)
    if plan is None:
        plan = closed_form_knapsack_plan(red.instance)
    if not isinstance(plan, KnapsackPlan) or plan.n != red.instance.n:
        raise InvalidInstanceError("the knapsack route needs a KnapsackPlan over the reduced elements")
    pair = plan.pair_means

    def report(i, es, lo, hi, ey):
        e = red.element_of_agent[i]
        # Skipped agents have no pair mean of their own; the scheme guarantee
        # still covers them at the plan objective.
        bound = (plan.objective if e is None else pair[e]) * target.beta[i]
        return AgentReport(
            index=i,
            beta=target.beta[i],
            q=target.q[i],
            x=target.x[i],
            c_f=None if e is None else plan.c_f[e],
            c_b=None if e is None else plan.c_b[e],
            tau_f=None,
            tau_b=None,
            expected_service=es,
            service_low=lo,
            service_high=hi,
            expected_alloc=ey,
            bound=bound,
            slack=es - bound,
        )

    if mode == "exact":
        result = run_knapsack_exact(red.instance, plan)
        err = result.max_rate_error(plan)
        if err > RATE_TOL:
            raise InvariantViolationError(f"size-dependent acceptance (max rate drift {err:.3g})")
        agents = []
        for i in range(inst.n):
            per = {
                tag: _knapsack_agent_expectations(inst, target, red, plan.rates(tag), i)
                for tag in (FORWARD, BACKWARD)
            }
            ey = (per[FORWARD][0] + per[BACKWARD][0]) / 2
            es = (per[FORWARD][1] + per[BACKWARD][1]) / 2
            rep = report(i, es, None, None, ey)
            if rep.slack < -CALIBRATION_TOL:
                raise InvariantViolationError(f"service guarantee missed for agent {i}")
            agents.append(rep)
        branch = {
            tag: [
                {s: (br.p_interval, br.p_zero) for s, br in sched.items()}
                for sched in result.schedules(tag)
            ]
            for tag in (FORWARD, BACKWARD)
        }
        traces = _sample_knapsack_traces(inst, target, red, branch, seed, trace_count)
        return RationingResult(
            ROUTE_KNAPSACK, "exact", target, plan, tuple(agents), traces, None, None
        )
    tables = build_branch_tables(red.instance, plan, seed, pool_size)
    estimates = run_trials(
        _knapsack_experiment(inst, target, red, tables), trials, seed, workers, confidence
    )
    agents = []
    for i in range(inst.n):
        est = _pooled(estimates, "service", i, confidence)
        ey = _pooled(estimates, "alloc", i, confidence)
        agents.append(report(i, est.point, est.ci_low, est.ci_high, ey.point))
    branch = {
        tag: [
            {float(s): (float(v1), float(v2)) for s, v1, v2 in zip(sizes, b1, b2)}
            for sizes, b1, b2 in tables[tag]
        ]
        for tag in (FORWARD, BACKWARD)
    }
    traces = _sample_knapsack_traces(inst, target, red, branch, seed, trace_count)
    return RationingResult(
        ROUTE_KNAPSACK, "mc", target, plan, tuple(agents), traces, None, estimates
    )


def run_rationing(
    inst: RationingInstance,
    target: ServiceTarget,
    plan: SelectionPlan | KnapsackPlan | None = None,
    mode: str = "exact",
    trials: int = 0,
    seed: int = 0,
    workers: int = 1,
    confidence: float = 0.999,
    pool_size: int = DEFAULT_POOL_SIZE,
    trace_count: int = 8,
) -> RationingResult:
    """Execute the rationing scheme for a solved service target.

    Instances with a Type-I agent run through the knapsack scheme (sizes
    min(D, 1)); all others use the single-unit scheme with per-order
    calibrated thresholds.  Mode "exact" propagates the remaining-supply or
    fill law in closed form; "mc" simulates trials runs on top of the same
    calibration.  plan defaults to the LP optimum (single-unit route) or the
    closed form (knapsack route).
    """
    if inst.n != target.n:
        raise InvalidInstanceError("target does not match the instance")
    if mode not in ("exact", "mc"):
        raise InvalidInstanceError(f"unknown mode {mode!r}")
    if mode == "mc" and trials < 1:
        raise InvalidInstanceError("mc mode needs trials >= 1")
    if inst.has_type_i:
        return _run_knapsack_route(
            inst, target, plan, mode, trials, seed, workers, confidence, pool_size, trace_count
        )
    return _run_single_unit_route(
        inst, target, plan, mode, trials, seed, workers, confidence, trace_count
    )
