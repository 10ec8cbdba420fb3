"""Instance-optimal selection LP and explicit dual certificates.

The LP maximizes the worst pair-mean guarantee beta over conditional
acceptance probabilities (c_f, c_b) subject to the order constraints
c_sigma(i) <= 1 - sum of x_j c_sigma(j) over elements j arriving earlier.
A dense tableau simplex solves it; uniform odd-length instances also get a
closed-form dual certificate whose objective upper-bounds the optimum by
weak duality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import InvalidInstanceError, SolverError
from .instances import SingleUnitInstance

LP_TOL = 1e-9

# Consecutive degenerate pivots tolerated under Dantzig's rule before
# switching to Bland's rule for the rest of the solve.
_STALL_LIMIT = 12


def alpha_0(rho: float) -> float:
    """Tight selection guarantee e^{rho/2}/(1 + e^{rho/2} rho).

    Evaluated as 1/(e^{-rho/2} + rho), which never overflows and keeps the
    identity 1 - alpha*rho = alpha*e^{-rho/2} to machine precision.
    """
    if rho < 0:
        raise ValueError(f"rho={rho} must be nonnegative")
    return 1.0 / (math.exp(-rho / 2.0) + rho)


@dataclass(frozen=True)
class SelectionPlan:
    """Conditional acceptance probabilities for both arrival orders."""

    c_f: tuple[float, ...]
    c_b: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "c_f", tuple(float(v) for v in self.c_f))
        object.__setattr__(self, "c_b", tuple(float(v) for v in self.c_b))
        if len(self.c_f) != len(self.c_b) or not self.c_f:
            raise InvalidInstanceError("plan orders must have equal positive length")
        for v in self.c_f + self.c_b:
            if not 0.0 <= v <= 1.0:
                raise InvalidInstanceError(f"acceptance probability {v} outside [0, 1]")

    @property
    def n(self) -> int:
        return len(self.c_f)

    def rates(self, tag: str) -> tuple[float, ...]:
        from .instances import FORWARD

        return self.c_f if tag == FORWARD else self.c_b

    @cached_property
    def pair_means(self) -> tuple[float, ...]:
        return tuple((f + b) / 2.0 for f, b in zip(self.c_f, self.c_b))

    @cached_property
    def objective(self) -> float:
        """The guarantee this plan certifies: min_i (c_f(i) + c_b(i))/2."""
        return min(self.pair_means)

    def max_violation(self, inst: SingleUnitInstance) -> float:
        """Largest violation of the order constraints on inst (<= 0 if feasible)."""
        worst = 0.0
        for rates, order in ((self.c_f, range(inst.n)), (self.c_b, range(inst.n - 1, -1, -1))):
            consumed = 0.0
            for i in order:
                worst = max(worst, rates[i] - (1.0 - consumed))
                consumed += inst.x[i] * rates[i]
        return worst

    def is_feasible(self, inst: SingleUnitInstance, tol: float = LP_TOL) -> bool:
        return self.max_violation(inst) <= tol


def _simplex(obj, A, b, *, tol: float = LP_TOL, max_iter: int | None = None):
    """Maximize obj @ v subject to A @ v <= b, v >= 0, with b >= 0.

    Dense tableau method.  Dantzig's rule by default; after _STALL_LIMIT
    consecutive degenerate pivots it switches to Bland's rule, which cannot
    cycle.  Returns (v, value).
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    obj = np.asarray(obj, dtype=float)
    m, k = A.shape
    if max_iter is None:
        max_iter = 200 * (m + k) + 1000

    T = np.zeros((m + 1, k + m + 1))
    T[:m, :k] = A
    T[:m, k : k + m] = np.eye(m)
    T[:m, -1] = b
    T[m, :k] = -obj
    basis = np.arange(k, k + m)

    bland = False
    stall = 0
    for _ in range(max_iter):
        z = T[m, :-1]
        if bland:
            negative = np.nonzero(z < -tol)[0]
            if negative.size == 0:
                break
            col = int(negative[0])
        else:
            col = int(np.argmin(z))
            if z[col] >= -tol:
                break
        column = T[:m, col]
        positive = column > tol
        if not positive.any():
            raise SolverError("LP unbounded above; formulation error")
        ratios = np.full(m, np.inf)
        ratios[positive] = T[:m, -1][positive] / column[positive]
        best = float(ratios.min())
        ties = np.nonzero(ratios <= best + tol * max(1.0, best))[0]
        row = int(ties[np.argmin(basis[ties])])  # smallest label: anti-cycling

        if best <= tol:
            stall += 1
            if stall >= _STALL_LIMIT:
                bland = True
        else:
            stall = 0

        T[row] /= T[row, col]
        column = T[:, col].copy()
        column[row] = 0.0
        T -= np.outer(column, T[row])
        basis[row] = col
    else:
        raise SolverError(f"simplex did not converge within {max_iter} pivots")

    v = np.zeros(k + m)
    v[basis] = T[np.arange(m), -1]
    return v[:k], float(T[m, -1])


def _clip_unit(values, tol: float = LP_TOL):
    arr = np.asarray(values, dtype=float)
    if arr.min(initial=0.0) < -tol or arr.max(initial=0.0) > 1.0 + tol:
        raise SolverError(f"solver produced probability outside [0,1] by more than {tol}")
    return tuple(np.clip(arr, 0.0, 1.0))


def _solve_general(inst: SingleUnitInstance) -> SelectionPlan:
    """Variables (c_f, c_b, beta); 3n constraints."""
    n = inst.n
    x = np.asarray(inst.x)

    A = np.zeros((3 * n, 2 * n + 1))
    A[:n, :n] = np.tril(np.broadcast_to(x, (n, n)), -1) + np.eye(n)
    A[n : 2 * n, n : 2 * n] = np.triu(np.broadcast_to(x, (n, n)), 1) + np.eye(n)
    A[2 * n :, :n] = -np.eye(n) / 2.0
    A[2 * n :, n : 2 * n] = -np.eye(n) / 2.0
    A[2 * n :, 2 * n] = 1.0
    b = np.concatenate([np.ones(2 * n), np.zeros(n)])
    obj = np.zeros(2 * n + 1)
    obj[2 * n] = 1.0

    v, _ = _simplex(obj, A, b)
    return SelectionPlan(_clip_unit(v[:n]), _clip_unit(v[n : 2 * n]))


def _solve_palindromic(inst: SingleUnitInstance) -> SelectionPlan:
    """Reduced LP for instances with x equal to its own reversal.

    Reversal symmetry gives an optimal plan with c_b = reversed(c_f): the
    mirror of any optimum is again optimal, the average of the two is
    feasible, and the worst pair mean only improves under averaging.  So we
    solve over u = c_f alone with half the variables and constraints.
    """
    n = inst.n
    x = np.asarray(inst.x)
    pairs = (n + 1) // 2

    A = np.zeros((n + pairs, n + 1))
    A[:n, :n] = np.tril(np.broadcast_to(x, (n, n)), -1) + np.eye(n)
    for r in range(pairs):
        A[n + r, r] -= 0.5
        A[n + r, n - 1 - r] -= 0.5
        A[n + r, n] = 1.0
    b = np.concatenate([np.ones(n), np.zeros(pairs)])
    obj = np.zeros(n + 1)
    obj[n] = 1.0

    v, _ = _simplex(obj, A, b)
    u = _clip_unit(v[:n])
    return SelectionPlan(u, tuple(reversed(u)))


def solve_lp_si(inst: SingleUnitInstance) -> SelectionPlan:
    """Optimal selection plan; .objective equals the LP optimum."""
    if inst.x == tuple(reversed(inst.x)):
        return _solve_palindromic(inst)
    return _solve_general(inst)


def gamma(z: float, rho: float) -> float:
    """Dual weight rho*e^{z-rho/2}/(2(1+e^{rho/2}rho)) on [rho/2, rho].

    Evaluated in the equivalent overflow-safe form
    rho*e^{z-rho}/(2(e^{-rho/2}+rho)).
    """
    if rho < 0:
        raise ValueError(f"rho={rho} must be nonnegative")
    if not rho / 2.0 - 1e-12 <= z <= rho + 1e-12:
        raise ValueError(f"z={z} outside [{rho / 2.0}, {rho}]")
    z = min(max(z, rho / 2.0), rho)
    return rho * math.exp(z - rho) / (2.0 * (math.exp(-rho / 2.0) + rho))


@dataclass(frozen=True)
class DualCertificate:
    """Explicit dual solution (xi, y_f, y_b) for a uniform instance."""

    xi: tuple[float, ...]
    y_f: tuple[float, ...]
    y_b: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "xi", tuple(float(v) for v in self.xi))
        object.__setattr__(self, "y_f", tuple(float(v) for v in self.y_f))
        object.__setattr__(self, "y_b", tuple(float(v) for v in self.y_b))
        if not len(self.xi) == len(self.y_f) == len(self.y_b) or not self.xi:
            raise InvalidInstanceError("certificate vectors must share a positive length")

    @property
    def N(self) -> int:
        return len(self.xi)

    @cached_property
    def objective(self) -> float:
        return (math.fsum(self.y_f) + math.fsum(self.y_b)) / self.N


def dual_certificate_uniform(N: int, rho: float) -> DualCertificate:
    """The explicit certificate for the uniform instance x_i = rho/N, N odd.

    All mass of xi sits at the flat level rho*alpha_0 except for a spike at
    the middle element; y is zero before the middle, a spike at it, and the
    gamma curve after.  Its objective is at most alpha_0 + (rho + 2)/N.
    """
    if N < 1 or N % 2 == 0:
        raise InvalidInstanceError(f"certificate is defined for odd N only, got {N}")
    if rho < 0:
        raise InvalidInstanceError(f"rho={rho} must be nonnegative")
    mid = (N - 1) // 2
    a0 = alpha_0(rho)

    xi = [rho * a0] * N
    xi[mid] = (1.0 - rho * a0 * (N - 1) / N) * N

    y_f = [0.0] * N
    y_f[mid] = xi[mid] / 2.0 + 0.5
    for i in range(mid + 1, N):
        y_f[i] = gamma(rho * (i + 1) / N, rho)

    return DualCertificate(tuple(xi), tuple(y_f), tuple(y_f[::-1]))


@dataclass(frozen=True)
class DualFeasibilityReport:
    """Worst constraint violation of a certificate; all <= tol means the
    certificate objective upper-bounds the LP optimum."""

    max_violation: float
    xi_sum_slack: float  # sum(xi)/N - 1; needs to be >= -1e-12
    min_entry: float

    def ok(self, tol: float = LP_TOL) -> bool:
        return self.max_violation <= tol and self.xi_sum_slack >= -tol and self.min_entry >= -tol


def dual_feasibility(cert: DualCertificate, rho: float) -> DualFeasibilityReport:
    """Evaluate every dual constraint of the uniform instance x_i = rho/N."""
    N = cert.N
    xi = np.asarray(cert.xi)
    y_f = np.asarray(cert.y_f)
    y_b = np.asarray(cert.y_b)

    # Forward: elements after i are the larger indices; backward: the smaller.
    after_f = np.concatenate([np.cumsum(y_f[::-1])[::-1][1:], [0.0]])
    after_b = np.concatenate([[0.0], np.cumsum(y_b)[:-1]])
    viol_f = xi / 2.0 - y_f - rho * after_f / N
    viol_b = xi / 2.0 - y_b - rho * after_b / N
    max_violation = float(max(0.0, viol_f.max(), viol_b.max()))

    xi_sum_slack = math.fsum(cert.xi) / N - 1.0
    min_entry = float(min(xi.min(), y_f.min(), y_b.min()))
    return DualFeasibilityReport(max_violation, xi_sum_slack, min_entry)
