"""Ergodicity coefficients, stationary vectors, and convergence-condition profiles.

Three diagnostic profiles quantify how fast a time-varying family settles to
its limit kernel P (with R the constant-row matrix built from the stationary
vector of P):

* ``cesaro_product_average``: sup over starting times m <= M of
  ``|| (1/n) * sum_{t<=n} P^(m, m+t) - R ||``;
* ``mean_kernel_deviation``: sup over m <= M of ``(1/n) * sum_{k<=n} ||P_{k+m} - P||``;
* ``scaled_dobrushin_sum``: ``(1/sqrt(n)) * sum_{k<=n} delta(P_k)``.

The sup over all m >= 0 is replaced by a finite scan to M, which is recorded
alongside the values together with the observed argmax.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .kernels import KernelFamily, KernelValidationError, TruncatedKernel, _readonly

__all__ = [
    "ReducibleKernelError",
    "ConvergenceError",
    "ConvergenceCondition",
    "ConditionProfile",
    "StationaryVector",
    "sup_row_norm",
    "dobrushin_delta",
    "delta_sequence",
    "condition_profile",
    "stationary",
    "period",
    "strong_ergodicity_profile",
]


class ReducibleKernelError(ValueError):
    """The kernel is not irreducible on the retained states."""


class ConvergenceError(RuntimeError):
    """An iterative solver failed to reach its tolerance."""


class ConvergenceCondition(str, Enum):
    CESARO_PRODUCT_AVERAGE = "cesaro_product_average"
    MEAN_KERNEL_DEVIATION = "mean_kernel_deviation"
    SCALED_DOBRUSHIN_SUM = "scaled_dobrushin_sum"


# ---------------------------------------------------------------------------
# norms and coefficients
# ---------------------------------------------------------------------------

def _as_matrix_with_tail(A) -> np.ndarray:
    """Kernel -> rows with the tail appended as an extra column; arrays pass through."""
    if isinstance(A, TruncatedKernel):
        if A.is_stochastic:
            return A.rows
        return np.hstack([A.rows, A.tail_mass[:, None]])
    return np.asarray(A, dtype=float)


def sup_row_norm(A) -> float:
    """Max over rows of the L1 row sum; accepts a matrix or a TruncatedKernel."""
    M = _as_matrix_with_tail(A)
    if M.size == 0:
        return 0.0
    return float(np.abs(M).sum(axis=1).max())


def _delta_dense(rows: np.ndarray) -> float:
    # rows have equal sums, so the positive-part sum is symmetric in (i, k)
    # and scanning unordered pairs suffices.
    best = 0.0
    n = rows.shape[0]
    for i in range(n - 1):
        diff = rows[i] - rows[i + 1 :]
        np.clip(diff, 0.0, None, out=diff)
        best = max(best, float(diff.sum(axis=1).max()))
    return best


def _delta_banded(rows: np.ndarray, bandwidth: int) -> float:
    """Positive-part scan restricted to the rows' bands.

    Precondition: every row equals a shared base row outside its own band of
    half-width ``bandwidth``.  Pairs whose bands may interact (adjacent bands,
    or bands touching the last column, where lumped kernels deviate) fall back
    to full-row differences.
    """
    n = rows.shape[0]
    bw = bandwidth
    near_margin = 2 * bw + 1
    best = 0.0
    idx = np.arange(n)
    for i in range(n - 1):
        far_lo = i + near_margin + 1
        far_hi = n - near_margin - 1  # rows beyond may own the last column
        # near pairs: full-row positive parts
        near = [j for j in range(i + 1, min(far_lo, n))]
        near += [j for j in range(max(far_hi + 1, i + 1), n)]
        for j in near:
            d = rows[i] - rows[j]
            best = max(best, float(d[d > 0].sum()))
        if i >= far_hi:
            continue
        js = idx[far_lo : far_hi + 1]
        if js.size == 0:
            continue
        cols_i = np.arange(max(i - bw, 0), min(i + bw, n - 1) + 1)
        di = rows[i, cols_i][None, :] - rows[js][:, cols_i]
        cols_j = js[:, None] + np.arange(-bw, bw + 1)[None, :]
        cols_j = np.clip(cols_j, 0, n - 1)
        dj = rows[i][cols_j] - np.take_along_axis(rows[js], cols_j, axis=1)
        total = np.clip(di, 0.0, None).sum(axis=1) + np.clip(dj, 0.0, None).sum(axis=1)
        best = max(best, float(total.max()))
    return best


def dobrushin_delta(P, method: str = "dense", bandwidth: int = 1) -> float:
    """Contraction coefficient: sup over row pairs of the summed positive parts.

    ``method="banded"`` is an O(N^2) shortcut valid when rows pairwise agree
    outside bands of half-width ``bandwidth`` around their own index (true for
    the built-in families); ``"dense"`` is the unconditional O(N^3) scan.
    """
    if isinstance(P, TruncatedKernel):
        rows = _as_matrix_with_tail(P)
    else:
        rows = np.asarray(P, dtype=float)
    if method == "dense":
        return _delta_dense(rows)
    if method == "banded":
        return _delta_banded(rows, bandwidth)
    raise ValueError(f"unknown method {method!r}")


def delta_sequence(family: KernelFamily, k_max: int, method: str = "auto") -> np.ndarray:
    """delta(P_k) for k = 1..k_max.

    For the built-in lump-policy families the deviation from the limit kernel
    is exactly linear in the perturbation scale s(k), so one banded evaluation
    at a reference step fixes the whole sequence.  Constant families are
    constant; anything else is evaluated kernel by kernel (guarded, since that
    materializes k_max kernels).
    """
    if k_max < 1:
        raise KernelValidationError("k_max must be >= 1")
    ks = np.arange(1, k_max + 1)
    if family.structure is not None:
        scales = np.atleast_1d(family.perturbation_scale(ks)).astype(float)
        if not scales.any():
            return np.full(k_max, dobrushin_delta(family.limit, method="dense"))
        k_ref = 2 if k_max >= 2 else 1
        s_ref = float(family.perturbation_scale(k_ref))
        if s_ref == 0.0:
            k_ref = int(ks[scales > 0][0])
            s_ref = float(family.perturbation_scale(k_ref))
        delta_ref = dobrushin_delta(
            family.kernel_at(k_ref), method="banded" if method in ("auto", "banded") else "dense"
        )
        return scales * (delta_ref / s_ref)
    if family.kind == "constant":
        return np.full(k_max, dobrushin_delta(family.limit, method="dense"))
    if family.kind != "table" and k_max > 20000:
        raise KernelValidationError(
            "per-step delta evaluation over a horizon this long is not tractable; "
            "use the lump tail policy for the built-in families"
        )
    return np.array(
        [dobrushin_delta(family.kernel_at(int(k)), method="dense") for k in ks]
    )


# ---------------------------------------------------------------------------
# condition profiles
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ConditionProfile:
    """Values of one convergence-condition statistic along an n grid."""

    condition: ConvergenceCondition
    n_grid: np.ndarray
    values: np.ndarray
    m_sup_range: int
    m_argmax: np.ndarray | None = None

    def __post_init__(self):
        grid = np.asarray(self.n_grid, dtype=np.int64)
        values = np.asarray(self.values, dtype=float)
        if grid.ndim != 1 or grid.size == 0 or np.any(np.diff(grid) <= 0):
            raise KernelValidationError("n_grid must be strictly increasing and nonempty")
        if np.any(grid < 1):
            raise KernelValidationError("n_grid entries must be >= 1")
        if values.shape != grid.shape or np.any(values < 0):
            raise KernelValidationError("values must be nonnegative, one per n")
        object.__setattr__(self, "n_grid", _readonly(grid).astype(np.int64))
        object.__setattr__(self, "values", _readonly(values))

    def csv_rows(self):
        """Rows in the frozen CSV order (condition_id, n, m_sup_range, value)."""
        for n, v in zip(self.n_grid, self.values):
            yield (self.condition.value, int(n), self.m_sup_range, float(v))


def _deviation_sequence(family: KernelFamily, k_max: int) -> np.ndarray:
    """||P_k - P|| for k = 1..k_max."""
    if family.structure is not None:
        scales = np.atleast_1d(family.perturbation_scale(np.arange(1, k_max + 1)))
        return 2.0 * float(family.structure.pert.max()) * scales.astype(float)
    if family.kind == "constant":
        return np.zeros(k_max)
    if family.kind == "table":
        out = np.zeros(k_max)
        for k in range(1, min(k_max, len(family.table)) + 1):
            out[k - 1] = sup_row_norm(
                _as_matrix_with_tail(family.kernel_at(k)) - _as_matrix_with_tail(family.limit)
            )
        return out
    if k_max > 20000:
        raise KernelValidationError(
            "per-step deviation over a horizon this long is not tractable for this family"
        )
    lim = _as_matrix_with_tail(family.limit)
    return np.array(
        [sup_row_norm(_as_matrix_with_tail(family.kernel_at(k)) - lim) for k in range(1, k_max + 1)]
    )


def _windowed_average_sup(seq: np.ndarray, n_grid: np.ndarray, m_range: int):
    """max over 0 <= m <= M of (1/n) * sum_{k=1}^{n} seq[k+m], per grid n."""
    cum = np.concatenate(([0.0], np.cumsum(seq)))
    values = np.empty(len(n_grid))
    argmax = np.empty(len(n_grid), dtype=np.int64)
    ms = np.arange(m_range + 1)
    for out, n in enumerate(n_grid):
        window = (cum[ms + n] - cum[ms]) / n
        argmax[out] = int(np.argmax(window))
        values[out] = float(window[argmax[out]])
    return values, argmax


def condition_profile(
    family: KernelFamily,
    condition: ConvergenceCondition | str,
    n_grid,
    m_sup_range: int = 200,
) -> ConditionProfile:
    """Evaluate one convergence-condition statistic along ``n_grid``.

    The Cesaro profile multiplies dense kernels step by step and is meant for
    desk-scale grids; the other two reduce to cumulative sums of per-step
    scalars and handle grids up to millions of steps for the built-in
    families.
    """
    condition = ConvergenceCondition(condition)
    n_grid = np.asarray(sorted(int(n) for n in np.atleast_1d(n_grid)), dtype=np.int64)
    if n_grid.size == 0:
        raise KernelValidationError("n_grid must be nonempty")
    if m_sup_range < 0:
        raise KernelValidationError("m_sup_range must be >= 0")
    n_max = int(n_grid[-1])

    if condition == ConvergenceCondition.SCALED_DOBRUSHIN_SUM:
        cum = np.cumsum(delta_sequence(family, n_max))
        values = cum[n_grid - 1] / np.sqrt(n_grid)
        return ConditionProfile(condition, n_grid, values, 0)

    if condition == ConvergenceCondition.MEAN_KERNEL_DEVIATION:
        seq = _deviation_sequence(family, n_max + m_sup_range)
        values, argmax = _windowed_average_sup(seq, n_grid, m_sup_range)
        return ConditionProfile(condition, n_grid, values, m_sup_range, argmax)

    # Cesaro average of products, scanned over starting times
    pi = stationary(family.limit).pi
    R = np.tile(pi, (family.size, 1))
    values = np.zeros(len(n_grid))
    argmax = np.zeros(len(n_grid), dtype=np.int64)
    for m in range(m_sup_range + 1):
        rows = np.eye(family.size)
        tail = np.zeros(family.size)
        running = np.zeros_like(R)
        running_tail = np.zeros(family.size)
        grid_pos = 0
        for t in range(1, n_max + 1):
            step = family.kernel_at(m + t)
            tail = tail + rows @ step.tail_mass
            rows = rows @ step.rows
            running += rows
            running_tail += tail
            if grid_pos < len(n_grid) and t == n_grid[grid_pos]:
                gap = np.abs(running / t - R).sum(axis=1) + running_tail / t
                val = float(gap.max())
                if val > values[grid_pos]:
                    values[grid_pos] = val
                    argmax[grid_pos] = m
                grid_pos += 1
    return ConditionProfile(condition, n_grid, values, m_sup_range, argmax)


# ---------------------------------------------------------------------------
# stationary vector and period
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class StationaryVector:
    """Left fixed vector of a truncated kernel, with its fixed-point residual."""

    pi: np.ndarray
    residual: float

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=float)
        if pi.min() < 0:
            raise KernelValidationError("stationary vector has negative entries")
        if abs(pi.sum() - 1.0) > 1e-12:
            raise KernelValidationError("stationary vector does not sum to 1")
        if self.residual > 1e-10:
            raise KernelValidationError(f"stationary residual too large: {self.residual}")
        object.__setattr__(self, "pi", _readonly(pi))


def _check_irreducible(P: TruncatedKernel) -> None:
    graph = csr_matrix(P.rows > 0.0)
    n_comp, _ = connected_components(graph, directed=True, connection="strong")
    if n_comp != 1:
        raise ReducibleKernelError(
            f"kernel is reducible: {n_comp} strongly connected components"
        )


def stationary(
    P: TruncatedKernel,
    tol: float = 1e-12,
    max_iter: int = 10**6,
    solve_after: int = 5000,
) -> StationaryVector:
    """Stationary vector of P: power iteration with a dense linear-solve fallback.

    Power iteration runs on the transpose with L1 normalization and stops when
    successive iterates agree within ``tol``; if it has not converged after
    ``solve_after`` sweeps (or ``max_iter``, whichever is smaller) the fixed
    point is computed by solving (P^T - I) pi = 0 with a normalization row.
    """
    if not P.is_stochastic:
        raise KernelValidationError("stationary vector requires a stochastic kernel")
    _check_irreducible(P)
    n = P.size
    x = np.full(n, 1.0 / n)
    for _ in range(min(max_iter, solve_after)):
        y = x @ P.rows
        y /= y.sum()
        if np.abs(y - x).sum() <= tol:
            x = y
            break
        x = y
    else:
        A = np.vstack([P.rows.T - np.eye(n), np.ones((1, n))])
        b = np.zeros(n + 1)
        b[-1] = 1.0
        x, *_ = np.linalg.lstsq(A, b, rcond=None)
        x = np.clip(x, 0.0, None)
        x /= x.sum()
    residual = float(np.abs(x @ P.rows - x).sum())
    if residual > 1e-10:
        raise ConvergenceError(f"stationary solve residual {residual} exceeds 1e-10")
    return StationaryVector(x, residual)


def period(P: TruncatedKernel) -> int:
    """gcd of directed-cycle lengths through the chain, via BFS level labels."""
    _check_irreducible(P)
    n = P.size
    adj = [np.nonzero(P.rows[i] > 0.0)[0] for i in range(n)]
    level = np.full(n, -1, dtype=np.int64)
    level[0] = 0
    queue = [0]
    d = 0
    while queue:
        nxt = []
        for u in queue:
            for v in adj[u]:
                if level[v] < 0:
                    level[v] = level[u] + 1
                    nxt.append(int(v))
                else:
                    d = math.gcd(d, int(level[u] + 1 - level[v]))
        queue = nxt
    return d if d > 0 else 1


def strong_ergodicity_profile(
    P: TruncatedKernel, k_grid, pi: np.ndarray | None = None
) -> np.ndarray:
    """||P^k - R|| per k in k_grid, where R has every row equal to pi.

    Decay to 0 indicates strong ergodicity; a flat profile flags its failure
    (pass ``pi`` explicitly for kernels whose stationary vector cannot be
    computed, e.g. reducible ones under study).
    """
    k_grid = np.asarray(sorted(int(k) for k in np.atleast_1d(k_grid)), dtype=np.int64)
    if np.any(k_grid < 1):
        raise KernelValidationError("k_grid entries must be >= 1")
    if pi is None:
        pi = stationary(P).pi
    R = np.tile(np.asarray(pi, dtype=float), (P.size, 1))
    out = np.empty(len(k_grid))
    power = np.eye(P.size)
    tail = np.zeros(P.size)
    pos = 0
    for k in range(1, int(k_grid[-1]) + 1):
        tail = tail + power @ P.tail_mass
        power = power @ P.rows
        if k == k_grid[pos]:
            out[pos] = float((np.abs(power - R).sum(axis=1) + tail).max())
            pos += 1
            if pos == len(k_grid):
                break
    return out
