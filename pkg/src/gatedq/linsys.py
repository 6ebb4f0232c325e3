"""Truncation machinery for infinite linear systems sum_j a(i,j) x_j = b(i).

The systems this package assembles are infinite but strictly diagonally
dominant in their intended parameter regions, which guarantees that the
solutions of growing finite truncations form a Cauchy sequence converging to
the unique bounded solution of the infinite system.  This module provides the
generic pieces of that scheme:

* truncate: materialize the leading N x N block and right-hand side,
* solve: dense LU solve with residual reporting,
* dominance_report: probe the strict-dominance ratios sigma_i and the three
  side conditions (summable inverse diagonals, uniformly bounded off-row
  sums, finite column sums) that the truncation-convergence argument needs,
* converge: solve truncations along a doubling ladder until successive
  solutions agree on shared indices to a requested tolerance.

A finite machine can only probe the infinite conditions, so the report
distinguishes "probed" facts (finite sums up to a cutoff, geometric-ratio
checks) from analytic facts the oracle supplies in closed form (row tail
bounds, a sufficient parameter condition for dominance).  When an oracle has
no tail bound, sigma_i is a lower estimate and the report says so.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import linalg as sla


class AssemblyError(ValueError):
    """An oracle produced a non-finite coefficient during truncation."""


class SingularSystemError(ValueError):
    """Dense factorization hit a numerically zero pivot."""


class ZeroDiagonalError(ValueError):
    """A dominance probe found a zero diagonal entry."""


@dataclass(frozen=True)
class CoefficientOracle:
    """On-demand coefficients of an infinite system, 1-indexed.

    a(i, j) and b(i) must be deterministic.  tail_row_bound(i, J), when
    present, returns an analytic upper bound on sum_{j>J} |a(i,j)|.
    analytic_region, when present, reports whether the model parameters lie
    in a closed-form region where strict dominance is proven for every row,
    not just the probed ones.
    """

    a: Callable[[int, int], float]
    b: Callable[[int], float]
    tail_row_bound: Optional[Callable[[int, int], float]] = None
    analytic_region: Optional[Callable[[], bool]] = None
    name: str = "oracle"


@dataclass(frozen=True)
class TruncatedSystem:
    n: int
    a: np.ndarray
    b: np.ndarray


@dataclass(frozen=True)
class SolveResult:
    x: np.ndarray
    residual: float


@dataclass
class DominanceReport:
    """Probe of strict diagonal dominance and the three side conditions.

    sigma[i-1] = (sum_{j <= tail_cutoff, j != i} |a_ij| + analytic tail) / |a_ii|
    for rows i = 1..order.  satisfied requires every probed sigma_i < 1 plus
    all three side conditions.  analytic_region_ok mirrors the oracle's
    closed-form sufficient condition when it has one (None otherwise), and
    marginal flags the honest in-between: every probe passes but the
    parameters sit outside the analytically certified region.
    """

    order: int
    tail_cutoff: int
    sigma: np.ndarray
    worst_row: int
    diag_sums_summable: bool      # partial sums of 1/|a_ii| look Cauchy
    row_sums_bounded: bool        # off-diagonal row sums stay finite
    col_sums_finite: bool         # column sums up to the cutoff are finite
    satisfied: bool
    tail_is_analytic: bool
    analytic_region_ok: Optional[bool]
    marginal: bool
    max_offdiag_row_sum: float
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "order": self.order,
            "tail_cutoff": self.tail_cutoff,
            "sigma": [float(s) for s in self.sigma],
            "worst_row": self.worst_row,
            "max_sigma": float(self.sigma[self.worst_row - 1]),
            "diag_sums_summable": self.diag_sums_summable,
            "row_sums_bounded": self.row_sums_bounded,
            "col_sums_finite": self.col_sums_finite,
            "satisfied": self.satisfied,
            "tail_is_analytic": self.tail_is_analytic,
            "analytic_region_ok": self.analytic_region_ok,
            "marginal": self.marginal,
            "max_offdiag_row_sum": self.max_offdiag_row_sum,
            "notes": list(self.notes),
        }


@dataclass
class ConvergedSolution:
    """Outcome of the doubling ladder.

    values holds the last truncation's solution (index j stored at values[j-1]).
    gaps holds |x_j^(N) - x_j^(N_prev)| over the indices the last two rungs
    share.  converged means the max gap met the tolerance before the ladder
    ran out of orders; an exhausted ladder is reported, not raised.
    """

    values: np.ndarray
    n_used: int
    gaps: np.ndarray
    max_gap: float
    converged: bool
    tol: float
    rungs: list
    residuals: list

    def to_dict(self) -> dict:
        return {
            "n_used": self.n_used,
            "max_gap": float(self.max_gap),
            "converged": self.converged,
            "tol": self.tol,
            "rungs": list(self.rungs),
            "residuals": [float(r) for r in self.residuals],
        }


def truncate(oracle: CoefficientOracle, n: int) -> TruncatedSystem:
    """Materialize the leading n x n block A[i][j] = a(i,j), b[i] = b(i)."""
    if n < 1:
        raise ValueError(f"truncation order must be >= 1, got {n}")
    a = np.empty((n, n))
    for i in range(1, n + 1):
        for j in range(1, n + 1):
            v = oracle.a(i, j)
            if not math.isfinite(v):
                raise AssemblyError(
                    f"{oracle.name}: non-finite coefficient a({i},{j}) = {v}")
            a[i - 1, j - 1] = v
    b = np.empty(n)
    for i in range(1, n + 1):
        v = oracle.b(i)
        if not math.isfinite(v):
            raise AssemblyError(f"{oracle.name}: non-finite rhs b({i}) = {v}")
        b[i - 1] = v
    return TruncatedSystem(n=n, a=a, b=b)


def solve(sys: TruncatedSystem) -> SolveResult:
    """Dense LU solve with partial pivoting; reports the residual inf-norm.

    Rows are equilibrated to unit max magnitude first: the assembled systems
    have diagonals growing geometrically with the row index, and without
    scaling a healthy pivot in a small-magnitude row is indistinguishable
    from a genuinely collapsed one.
    """
    if sys.a.shape[0] != sys.a.shape[1]:
        raise ValueError("system matrix must be square")
    row_scale = np.abs(sys.a).max(axis=1)
    if np.any(row_scale == 0.0):
        raise SingularSystemError(
            f"numerically singular truncation (order {sys.n}): zero row")
    a_eq = sys.a / row_scale[:, None]
    b_eq = sys.b / row_scale
    with warnings.catch_warnings():
        # The factorization warns on zero pivots; the check below turns that
        # condition into SingularSystemError instead.
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(a_eq)
    tiny = np.abs(np.diag(lu)).min()
    if tiny <= sys.n * np.finfo(float).eps:
        raise SingularSystemError(
            f"numerically singular truncation (order {sys.n}): "
            f"smallest pivot magnitude {tiny:.3e} after row equilibration")
    x = sla.lu_solve((lu, piv), b_eq)
    residual = float(np.abs(a_eq @ x - b_eq).max())
    return SolveResult(x=x, residual=residual)


def _probe_diag_summability(oracle: CoefficientOracle, upto: int) -> tuple:
    """Cauchy probe of sum_i 1/|a_ii|: geometric decay of late increments.

    Uses the geometric-mean ratio of the increments over the back half of the
    probe range; a ratio below 0.99 (and shrinking increments) is taken as
    evidence the series converges.  This is a probe, never a proof.  Entries
    that stop being computable (quadrature-backed oracles run out of floating
    point range eventually) end the probe early; returns (ok, ratio, reached).
    """
    inc = []
    reached = 0
    for i in range(1, upto + 1):
        try:
            d = abs(oracle.a(i, i))
        except (ValueError, ArithmeticError):
            break
        if d == 0.0:
            raise ZeroDiagonalError(f"{oracle.name}: zero diagonal at row {i}")
        inc.append(1.0 / d)
        reached = i
    if reached < 4:
        return False, math.nan, reached
    half = max(2, reached // 2)
    first, last = inc[half - 1], inc[-1]
    if last == 0.0:
        return True, 0.0, reached
    ratio = (last / first) ** (1.0 / max(1, reached - half))
    return (ratio < 0.99 and last <= first), ratio, reached


def dominance_report(oracle: CoefficientOracle, order: int,
                     tail_cutoff: Optional[int] = None) -> DominanceReport:
    """Probe strict diagonal dominance of the first `order` rows.

    Row sums run to tail_cutoff (default 4*order) and are completed by the
    oracle's analytic tail bound when it has one; otherwise sigma_i is a
    lower estimate and a note says so.  The three side conditions are probed:
    summability of 1/|a_ii| by geometric-ratio, boundedness of off-row sums
    by their probed maximum being finite, and column sums by finiteness up to
    the cutoff.
    """
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    cutoff = tail_cutoff if tail_cutoff is not None else 4 * order
    if cutoff < order:
        raise ValueError(f"tail_cutoff {cutoff} must be >= order {order}")
    notes = []
    has_tail = oracle.tail_row_bound is not None
    if not has_tail:
        notes.append(
            f"no analytic tail bound: sigma is a lower estimate from the "
            f"first {cutoff} columns")

    sigma = np.empty(order)
    offdiag_sums = []
    for i in range(1, order + 1):
        diag = abs(oracle.a(i, i))
        if diag == 0.0:
            raise ZeroDiagonalError(f"{oracle.name}: zero diagonal at row {i}")
        head = math.fsum(abs(oracle.a(i, j))
                         for j in range(1, cutoff + 1) if j != i)
        tail = oracle.tail_row_bound(i, cutoff) if has_tail else 0.0
        offdiag_sums.append(head + tail)
        sigma[i - 1] = (head + tail) / diag

    diag_ok, _ratio, diag_reached = _probe_diag_summability(oracle, 4 * order)
    if diag_reached < 4 * order:
        notes.append(
            f"diagonal probe ended at row {diag_reached} of {4 * order}: "
            f"later entries are not computable")
    max_row = max(offdiag_sums)
    row_ok = math.isfinite(max_row)
    col_ok = True
    col_reached = cutoff
    for j in range(1, order + 1):
        parts = []
        for i in range(1, cutoff + 1):
            try:
                parts.append(abs(oracle.a(i, j)))
            except (ValueError, ArithmeticError):
                col_reached = min(col_reached, i - 1)
                break
        if not math.isfinite(math.fsum(parts)):
            col_ok = False
            break
    if col_ok and col_reached < cutoff:
        notes.append(
            f"column sums probed to row {col_reached} of {cutoff}: "
            f"later entries are not computable")

    worst = int(np.argmax(sigma)) + 1
    satisfied = bool(np.all(sigma < 1.0)) and diag_ok and row_ok and col_ok
    region = bool(oracle.analytic_region()) if oracle.analytic_region else None
    marginal = satisfied and region is False
    if marginal:
        notes.append("probed rows are dominant but the parameters lie "
                     "outside the closed-form sufficient region")
    return DominanceReport(
        order=order, tail_cutoff=cutoff, sigma=sigma, worst_row=worst,
        diag_sums_summable=diag_ok, row_sums_bounded=row_ok,
        col_sums_finite=col_ok, satisfied=satisfied,
        tail_is_analytic=has_tail, analytic_region_ok=region,
        marginal=marginal, max_offdiag_row_sum=max_row, notes=notes)


def converge(oracle: CoefficientOracle, n_start: int, n_max: int,
             tol: float) -> ConvergedSolution:
    """Solve truncations along a doubling ladder until they agree.

    Orders run n_start, 2*n_start, ... capped at n_max.  After each rung the
    gap max_j |x_j^(N) - x_j^(N_prev)| over shared indices is measured; the
    ladder stops at the first gap <= tol.  Exhausting n_max returns the last
    solution with converged=False rather than raising.
    """
    if n_start < 2:
        raise ValueError(f"n_start must be >= 2, got {n_start}")
    if n_max < 2 * n_start:
        raise ValueError(f"n_max must be >= 2*n_start, got {n_max} < {2 * n_start}")
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")

    rungs, residuals = [], []
    prev = None
    gaps = np.array([])
    max_gap = math.inf
    converged = False
    n = n_start
    while True:
        res = solve(truncate(oracle, n))
        rungs.append(n)
        residuals.append(res.residual)
        if prev is not None:
            shared = min(len(prev), len(res.x))
            gaps = np.abs(res.x[:shared] - prev[:shared])
            max_gap = float(gaps.max()) if shared else 0.0
            if max_gap <= tol:
                converged = True
                prev = res.x
                n_used = n
                break
        prev = res.x
        if n >= n_max:
            n_used = n
            break
        n = min(2 * n, n_max)
    return ConvergedSolution(values=prev, n_used=n_used, gaps=gaps,
                             max_gap=max_gap, converged=converged, tol=tol,
                             rungs=rungs, residuals=residuals)
