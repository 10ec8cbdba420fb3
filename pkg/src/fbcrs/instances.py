"""Problem inputs: single-unit, knapsack, and rationing instances.

All instances are immutable after construction and safe to share across
worker threads.  Constructors validate and reject; nothing is renormalized
silently.  Probability sums are checked to an absolute 1e-12.

Element arrays are 0-based positional throughout the library; the one
exception is `split_element`, whose index argument is 1-based (documented
there), matching how the transform is usually written.
"""

from __future__ import annotations

import json
import math
from bisect import bisect_left
from dataclasses import dataclass
from enum import Enum
from functools import cached_property

from .errors import InvalidInstanceError

MASS_TOL = 1e-12

FORWARD = "forward"
BACKWARD = "backward"


class ServiceType(str, Enum):
    TYPE_I = "TypeI"
    TYPE_II = "TypeII"
    TYPE_III = "TypeIII"

    @classmethod
    def parse(cls, tag: str) -> "ServiceType":
        try:
            return cls(tag)
        except ValueError:
            raise InvalidInstanceError(f"unknown service type {tag!r}") from None


@dataclass(frozen=True)
class Permutation:
    """One of the two arrival orders: forward (1..n) or backward (n..1)."""

    tag: str
    n: int

    def __post_init__(self):
        if self.tag not in (FORWARD, BACKWARD):
            raise InvalidInstanceError(f"unknown order tag {self.tag!r}")
        if self.n < 1:
            raise InvalidInstanceError("n must be positive")

    def order(self) -> tuple[int, ...]:
        """Element indices (0-based) in arrival order."""
        if self.tag == FORWARD:
            return tuple(range(self.n))
        return tuple(range(self.n - 1, -1, -1))

    def position(self, i: int) -> int:
        """1-based arrival rank of element i; forward and backward ranks of
        the same element always sum to n + 1."""
        if not 0 <= i < self.n:
            raise InvalidInstanceError(f"element index {i} out of range")
        return i + 1 if self.tag == FORWARD else self.n - i

    @property
    def reverse(self) -> "Permutation":
        return Permutation(BACKWARD if self.tag == FORWARD else FORWARD, self.n)


def both_orders(n: int) -> tuple[Permutation, Permutation]:
    return Permutation(FORWARD, n), Permutation(BACKWARD, n)


@dataclass(frozen=True)
class SingleUnitInstance:
    """n elements, each active independently with probability x_i."""

    x: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(float(v) for v in self.x))
        if len(self.x) < 1:
            raise InvalidInstanceError("instance needs at least one element")
        for i, v in enumerate(self.x):
            if not 0.0 <= v <= 1.0:
                raise InvalidInstanceError(f"x[{i}]={v} outside [0, 1]")

    @property
    def n(self) -> int:
        return len(self.x)

    @cached_property
    def rho(self) -> float:
        """Total activeness mass, compensated summation."""
        return math.fsum(self.x)


@dataclass(frozen=True)
class SizeLaw:
    """Finite size distribution on [0,1] plus an inactive symbol.

    `atoms` are (size, probability) pairs; `inactive_mass` is the probability
    that the element never materializes.  Stored sorted by size.
    """

    atoms: tuple[tuple[float, float], ...]
    inactive_mass: float = 0.0

    def __post_init__(self):
        atoms = tuple(sorted((float(s), float(p)) for s, p in self.atoms))
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "inactive_mass", float(self.inactive_mass))
        for s, p in atoms:
            if not 0.0 <= s <= 1.0:
                raise InvalidInstanceError(f"size {s} outside [0, 1]")
            if p <= 0.0:
                raise InvalidInstanceError("atom probabilities must be positive")
        sizes = [s for s, _ in atoms]
        if len(set(sizes)) != len(sizes):
            raise InvalidInstanceError("duplicate size atoms")
        if self.inactive_mass < 0.0:
            raise InvalidInstanceError("inactive mass must be nonnegative")
        total = math.fsum([p for _, p in atoms] + [self.inactive_mass])
        if abs(total - 1.0) > MASS_TOL:
            raise InvalidInstanceError(f"size law mass {total} != 1")

    @cached_property
    def mean(self) -> float:
        """E[size; active] -- the mu of this element."""
        return math.fsum(s * p for s, p in self.atoms)

    @property
    def active_mass(self) -> float:
        return 1.0 - self.inactive_mass


@dataclass(frozen=True)
class KnapsackInstance:
    """n elements with independent size laws; accepted sizes must fit in 1."""

    laws: tuple[SizeLaw, ...]

    def __post_init__(self):
        object.__setattr__(self, "laws", tuple(self.laws))
        if len(self.laws) < 1:
            raise InvalidInstanceError("instance needs at least one element")
        for i, law in enumerate(self.laws):
            if law.mean <= 0.0:
                raise InvalidInstanceError(f"element {i} has mean size 0")
        if self.total_mu > 1.0 + MASS_TOL:
            raise InvalidInstanceError(f"total mean size {self.total_mu} exceeds 1")

    @property
    def n(self) -> int:
        return len(self.laws)

    @cached_property
    def mu(self) -> tuple[float, ...]:
        return tuple(law.mean for law in self.laws)

    @cached_property
    def total_mu(self) -> float:
        return math.fsum(law.mean for law in self.laws)


@dataclass(frozen=True)
class DemandLaw:
    """Finite demand distribution, d >= 0, stored sorted by demand."""

    atoms: tuple[tuple[float, float], ...]

    def __post_init__(self):
        atoms = tuple(sorted((float(d), float(p)) for d, p in self.atoms))
        object.__setattr__(self, "atoms", atoms)
        for d, p in atoms:
            if d < 0.0:
                raise InvalidInstanceError(f"negative demand {d}")
            if p <= 0.0:
                raise InvalidInstanceError("atom probabilities must be positive")
        demands = [d for d, _ in atoms]
        if len(set(demands)) != len(demands):
            raise InvalidInstanceError("duplicate demand atoms")
        total = math.fsum(p for _, p in atoms)
        if abs(total - 1.0) > MASS_TOL:
            raise InvalidInstanceError(f"demand law mass {total} != 1")
        if self.mean <= 0.0:
            raise InvalidInstanceError("demand law must have positive mean")

    @cached_property
    def mean(self) -> float:
        return math.fsum(d * p for d, p in self.atoms)

    @cached_property
    def cum(self) -> tuple[float, ...]:
        """Cumulative atom probabilities (the CDF at each atom)."""
        acc, out = 0.0, []
        for _, p in self.atoms:
            acc += p
            out.append(acc)
        return tuple(out)

    @property
    def has_zero_demand(self) -> bool:
        """Zero-demand atoms are legal but worth flagging: allocation can
        never serve them with supply, only the 0/0-counts-as-served rule."""
        return self.atoms[0][0] == 0.0

    def cdf(self, d: float) -> float:
        """Pr[D <= d]."""
        total = 0.0
        for atom_d, p in self.atoms:
            if atom_d <= d:
                total += p
        return total


@dataclass(frozen=True)
class RationingInstance:
    """n agents, each with a demand law and a service type."""

    demands: tuple[DemandLaw, ...]
    service: tuple[ServiceType, ...]

    def __post_init__(self):
        object.__setattr__(self, "demands", tuple(self.demands))
        object.__setattr__(self, "service", tuple(ServiceType.parse(s) if isinstance(s, str) else s for s in self.service))
        if len(self.demands) < 1:
            raise InvalidInstanceError("instance needs at least one agent")
        if len(self.demands) != len(self.service):
            raise InvalidInstanceError("demands and service lists differ in length")

    @property
    def n(self) -> int:
        return len(self.demands)

    @property
    def has_type_i(self) -> bool:
        return ServiceType.TYPE_I in self.service


def inverse_cdf(law: DemandLaw, q: float) -> float:
    """Smallest demand atom whose cumulative probability reaches q."""
    if not 0.0 <= q <= 1.0:
        raise InvalidInstanceError(f"quantile {q} outside [0, 1]")
    idx = bisect_left(law.cum, q)
    if idx >= len(law.atoms):  # float shortfall in the last cumulative
        idx = len(law.atoms) - 1
    return law.atoms[idx][0]


def draw_quantile_demand(law: DemandLaw, rng) -> tuple[float, float]:
    """Draw the quantile first, then read the demand off the inverse CDF, so
    anything conditioned on the quantile stays exact."""
    q = float(rng.random())
    return q, inverse_cdf(law, q)


def split_element(inst: SingleUnitInstance, k: int) -> SingleUnitInstance:
    """Replace element k (1-based) by two elements of half its mass.

    Halving is exact in binary floating point, so the total mass is preserved
    exactly.
    """
    if not 1 <= k <= inst.n:
        raise InvalidInstanceError(f"split index {k} outside 1..{inst.n}")
    i = k - 1
    half = inst.x[i] / 2.0
    return SingleUnitInstance(inst.x[:i] + (half, half) + inst.x[i + 1 :])


def knapsack_hardness_instance(n: int) -> tuple[KnapsackInstance, SingleUnitInstance]:
    """The 2n+1 element instance where sizes exceed half the knapsack.

    Every element has the single size atom 1/2 + 1/n with probability
    rho/(2n+1) where rho = 2n/(n+2), so at most one element ever fits and the
    instance behaves exactly like its single-unit twin (returned alongside).
    Needs n >= 2 so the size fits in [0, 1].
    """
    if n < 2:
        raise InvalidInstanceError("n must be >= 2 (size 1/2 + 1/n must fit in [0, 1])")
    rho = 2.0 * n / (n + 2)
    m = 2 * n + 1
    p = rho / m
    size = 0.5 + 1.0 / n
    law = SizeLaw(atoms=((size, p),), inactive_mass=1.0 - p)
    return KnapsackInstance((law,) * m), SingleUnitInstance((p,) * m)


# ---------------------------------------------------------------------------
# JSON representation: {"kind": ..., "n": ..., <payload>}.  Floats round-trip
# bit-exactly because json uses repr (shortest round-trip) for doubles.

def instance_to_dict(inst) -> dict:
    if isinstance(inst, SingleUnitInstance):
        return {"kind": "single_unit", "n": inst.n, "x": list(inst.x)}
    if isinstance(inst, KnapsackInstance):
        return {
            "kind": "knapsack",
            "n": inst.n,
            "laws": [
                {"atoms": [[s, p] for s, p in law.atoms], "inactive": law.inactive_mass}
                for law in inst.laws
            ],
        }
    if isinstance(inst, RationingInstance):
        return {
            "kind": "rationing",
            "n": inst.n,
            "demands": [{"atoms": [[d, p] for d, p in law.atoms]} for law in inst.demands],
            "service": [s.value for s in inst.service],
        }
    raise InvalidInstanceError(f"cannot serialize {type(inst).__name__}")


def instance_from_dict(data: dict):
    try:
        kind = data["kind"]
        n = data["n"]
    except (KeyError, TypeError):
        raise InvalidInstanceError("instance JSON needs 'kind' and 'n'") from None
    if kind == "single_unit":
        inst = SingleUnitInstance(tuple(data["x"]))
    elif kind == "knapsack":
        laws = tuple(
            SizeLaw(tuple((s, p) for s, p in law["atoms"]), law.get("inactive", 0.0))
            for law in data["laws"]
        )
        inst = KnapsackInstance(laws)
    elif kind == "rationing":
        demands = tuple(DemandLaw(tuple((d, p) for d, p in law["atoms"])) for law in data["demands"])
        inst = RationingInstance(demands, tuple(data["service"]))
    else:
        raise InvalidInstanceError(f"unknown instance kind {kind!r}")
    if inst.n != n:
        raise InvalidInstanceError(f"declared n={n} but payload has {inst.n} entries")
    return inst


def load_instance(path: str):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInstanceError(f"cannot read instance file {path}: {exc}") from None
    return instance_from_dict(data)


def dump_instance(inst, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(instance_to_dict(inst), fh, indent=2)
        fh.write("\n")
