"""Lambda-weighted Volterra kernels and truncated evaluation of the output series.

The output at ``T`` expands as

    y(T) = sum_{i_q, i_r} sum_k sum_{I in [n_p]^k} int_{Delta_{k+1}^T} w(tau) phi(tau) dtau

Simplex points are passed in descending order ``(tau_{k+1}, ..., tau_1)``.
Index 0 selects the offset matrices and carries no scheduling factor.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg as spla

from .errors import BudgetError, ConfigError
from .lpv_core import LpvSystem, simulate
from .signals import PiecewiseConstantSignal

__all__ = [
    "multi_indices",
    "kernel_w",
    "scheduling_product",
    "phi",
    "TruncatedOutput",
    "truncated_output",
    "truncated_output_terms",
    "picard_system",
    "picard_output",
]

MAX_ORDER = 4
MAX_CELLS = 64


def multi_indices(n_p: int, k: int):
    """All ``I in [n_p]^k`` in lexicographic order (entries are 1-based)."""
    return list(itertools.product(range(1, n_p + 1), repeat=k))


def _check_tau(tau, k, T=None):
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    if tau.shape != (k + 1,):
        raise ConfigError(f"simplex point must have {k + 1} coordinates, got {tau.shape}")
    if np.any(tau < 0) or np.any(np.diff(tau) > 0):
        raise ConfigError(f"tau must be descending and nonnegative, got {tau.tolist()}")
    if T is not None and tau[0] > T * (1 + 1e-12):
        raise ConfigError(f"tau_(k+1)={tau[0]} exceeds T={T}")
    return tau


def _check_indices(sys, i_q, i_r, I):
    I = tuple(int(i) for i in I)
    for name, i in (("i_q", i_q), ("i_r", i_r)):
        if not 0 <= i <= sys.n_p:
            raise ConfigError(f"{name}={i} out of range 0..{sys.n_p}")
    if any(not 1 <= i <= sys.n_p for i in I):
        raise ConfigError(f"multi-index {I} has entries outside 1..{sys.n_p}")
    return I


def kernel_w(sys: LpvSystem, i_q: int, i_r: int, I, lam: float, tau) -> np.ndarray:
    """Weighted kernel ``w^lam_{i_q,i_r,I}(tau)`` as an ``(n_out, n_in)`` matrix.

    ``C_{i_q} e^{A_0 (tau_{k+1}-tau_k)} A_{i_k} ... A_{i_1} e^{A_0 tau_1} B_{i_r} e^{lam tau_{k+1} / 2}``
    """
    I = _check_indices(sys, i_q, i_r, I)
    tau = _check_tau(tau, len(I))
    gaps = np.append(-np.diff(tau), tau[-1])  # tau_{k+1}-tau_k, ..., tau_2-tau_1, tau_1
    A0 = sys.A[0]
    out = sys.C[i_q] @ spla.expm(A0 * gaps[0])
    for i, g in zip(reversed(I), gaps[1:]):
        out = out @ sys.A[i] @ spla.expm(A0 * g)
    return out @ sys.B[i_r] * math.exp(0.5 * lam * tau[0])


def _sched(p: PiecewiseConstantSignal, i: int, t: float) -> float:
    return 1.0 if i == 0 else float(p.at(t)[i - 1])


def scheduling_product(p: PiecewiseConstantSignal, I, T: float, tau) -> float:
    """``prod_j p_{i_j}(tau_j + T - tau_{k+1})``; 1 for the empty multi-index."""
    I = tuple(I)
    tau = _check_tau(tau, len(I), T)
    shift = T - tau[0]
    # tau[::-1][j] is tau_{j+1}
    return float(np.prod([_sched(p, i, t + shift) for i, t in zip(I, tau[::-1])]))


def phi(u: PiecewiseConstantSignal, p: PiecewiseConstantSignal, i_q: int, i_r: int, I,
        lam: float, T: float, tau) -> np.ndarray:
    """Weighted scheduling-input product, a vector of length ``n_in``.

    ``p_{i_q}(T) p_{i_r}(T - tau_{k+1}) p_I(tau) u(T - tau_{k+1}) e^{-lam tau_{k+1} / 2}``
    """
    tau = _check_tau(tau, len(tuple(I)), T)
    s0 = T - tau[0]
    scale = (_sched(p, i_q, T) * _sched(p, i_r, s0) * scheduling_product(p, I, T, tau)
             * math.exp(-0.5 * lam * tau[0]))
    return scale * np.asarray(u.at(s0), dtype=float)


@lru_cache(maxsize=None)
def _simplex_rule(dim: int, nodes: int):
    """Collapsed tensor Gauss-Legendre rule on ``0 <= x_1 <= ... <= x_dim <= 1``."""
    t, wt = np.polynomial.legendre.leggauss(nodes)
    t = 0.5 * (t + 1.0)
    wt = 0.5 * wt
    grid = np.array(list(itertools.product(range(nodes), repeat=dim)), dtype=int).reshape(-1, dim)
    T = t[grid]
    X = np.empty_like(T)
    X[:, -1] = T[:, -1]
    for j in range(dim - 2, -1, -1):
        X[:, j] = X[:, j + 1] * T[:, j]
    W = np.prod(wt[grid], axis=1) * np.prod(X[:, 1:], axis=1)
    return X, W


@dataclass(frozen=True)
class TruncatedOutput:
    """Series value at ``T`` together with the contribution of each order ``k``."""

    value: np.ndarray
    terms: tuple
    cell: float
    nodes: int


def _cell_size(ts, h):
    sub = max(1, math.ceil(ts / h - 1e-9))
    return ts / sub, sub


def truncated_output_terms(sys: LpvSystem, u: PiecewiseConstantSignal, p: PiecewiseConstantSignal,
                           lam: float, T: float, K_max: int, h: float, nodes: int = 4,
                           max_order: int = MAX_ORDER, max_cells: int = MAX_CELLS) -> TruncatedOutput:
    """Evaluate the series through order ``K_max`` and keep the per-order terms.

    The simplex integrals are computed in absolute time.  The horizon is cut
    into cells of width at most ``h`` aligned with the sampling grid, so ``u``
    and ``p`` are constant on each cell.  Order-``m`` boundary states obey

        S_m(b) = E(g) S_m(a) + sum_{r=1..m} M_r S_{m-r}(a) + N_m

    where ``M_r`` and ``N_m`` are ordered-simplex integrals over one cell,
    evaluated with a collapsed Gauss-Legendre rule of ``nodes`` points per
    axis.  Propagation uses ``A_0 + (lam/2) I`` and the injection carries
    ``e^{-lam (T - s) / 2}``, i.e. the weighted kernel times the weighted
    scheduling product.
    """
    if lam < 0:
        raise ConfigError(f"lambda must be >= 0, got {lam}")
    if not 0 <= K_max <= max_order:
        raise BudgetError(f"K_max={K_max} outside the supported range 0..{max_order}")
    if not h > 0:
        raise ConfigError(f"quadrature step must be positive, got {h}")
    n_h = round(T / h)
    if n_h < 1 or abs(n_h * h - T) > 1e-9 * T:
        raise ConfigError(f"quadrature step {h} does not divide T={T}")
    if n_h > max_cells:
        raise BudgetError(f"T/h={n_h} exceeds the budget of {max_cells} steps")
    if nodes < 1:
        raise ConfigError("nodes must be >= 1")
    ts = u.ts
    if abs(p.ts - ts) > 1e-12 * ts:
        raise ConfigError("u and p have different sampling periods")
    K = round(T / ts)
    if abs(K * ts - T) > 1e-9 * T or K > min(len(u), len(p)):
        raise ConfigError(f"T={T} is not a sample instant inside the signal horizon")
    g, sub = _cell_size(ts, h)

    n = sys.n_x
    At = sys.A[0] + 0.5 * lam * np.eye(n)

    def expm_batch(gaps):
        return spla.expm(At[None] * gaps[:, None, None])

    Eg = spla.expm(At * g)
    # Kernel propagators for M_r (r = 1..K_max) and N_m (m = 0..K_max).
    m_rules = {}
    for r in range(1, K_max + 1):
        X, W = _simplex_rule(r, nodes)
        X = X * g
        gaps = np.concatenate([X[:, :1], np.diff(X, axis=1), g - X[:, -1:]], axis=1)
        m_rules[r] = ([expm_batch(gaps[:, j]) for j in range(r + 1)], W * g**r)
    n_rules = {}
    for m in range(K_max + 1):
        X, W = _simplex_rule(m + 1, nodes)
        X = X * g
        gaps = np.concatenate([np.diff(X, axis=1), g - X[:, -1:]], axis=1)
        n_rules[m] = ([expm_batch(gaps[:, j]) for j in range(m + 1)], W * g ** (m + 1), X[:, 0])

    S = np.zeros((K_max + 1, n))
    for c in range(K * sub):
        a = c * g
        k = c // sub
        Ab = np.tensordot(p.values[k], sys.A_stack[1:], axes=1) if sys.n_p else np.zeros((n, n))
        Bu = (sys.B[0] + (np.tensordot(p.values[k], sys.B_stack[1:], axes=1) if sys.n_p else 0)) @ u.values[k]
        Mr = {}
        for r, (Es, W) in m_rules.items():
            V = Es[0]
            for E in Es[1:]:
                V = E @ (Ab @ V)
            Mr[r] = np.tensordot(W, V, axes=1)
        S_new = S @ Eg.T
        for m in range(K_max + 1):
            for r in range(1, m + 1):
                S_new[m] += Mr[r] @ S[m - r]
            Es, W, x0 = n_rules[m]
            omega = np.exp(-0.5 * lam * (T - a - x0))
            v = (Es[0] @ Bu) * omega[:, None]
            for E in Es[1:]:
                v = np.einsum("qij,qj->qi", E, v @ Ab.T)
            S_new[m] += W @ v
        S = S_new

    C_T = sys.C[0] + (np.tensordot(p.values[K - 1], sys.C_stack[1:], axes=1) if sys.n_p else 0)
    terms = tuple(C_T @ S[m] for m in range(K_max + 1))
    return TruncatedOutput(np.sum(terms, axis=0), terms, g, nodes)


def truncated_output(sys: LpvSystem, u: PiecewiseConstantSignal, p: PiecewiseConstantSignal,
                     lam: float, T: float, K_max: int, h: float, **kwargs) -> np.ndarray:
    """Output at ``T`` from the series truncated after order ``K_max``.

    See :func:`truncated_output_terms` for the quadrature and the keyword
    arguments.  Budget guards reject ``K_max > 4`` and ``T/h > 64``.
    """
    return truncated_output_terms(sys, u, p, lam, T, K_max, h, **kwargs).value


def picard_system(sys: LpvSystem, K_max: int) -> LpvSystem:
    """Stacked system whose state is ``(x^(0), ..., x^(K_max))`` of the Picard iteration.

    ``x^(0)`` is driven by ``A_0`` and ``B_0`` only; ``x^(m)`` is driven by
    ``A_0 x^(m) + sum_i p_i (A_i x^(m-1) + B_i u) + B_0 u``.  The output
    reads ``C(p) x^(K_max)``.
    """
    if K_max < 0:
        raise ConfigError("K_max must be >= 0")
    n, L = sys.n_x, K_max + 1
    A, B, C = [], [], []
    for i in range(sys.n_p + 1):
        Ai = np.zeros((L * n, L * n))
        Bi = np.zeros((L * n, sys.n_in))
        Ci = np.zeros((sys.n_out, L * n))
        for m in range(L):
            blk = slice(m * n, (m + 1) * n)
            if i == 0:
                Ai[blk, blk] = sys.A[0]
                Bi[blk] = sys.B[0]
            elif m:
                Ai[blk, (m - 1) * n:m * n] = sys.A[i]
                Bi[blk] = sys.B[i]
        Ci[:, K_max * n:] = sys.C[i]
        A.append(Ai)
        B.append(Bi)
        C.append(Ci)
    return LpvSystem(tuple(A), tuple(B), tuple(C), name=f"picard{K_max}({sys.name})")


def picard_output(sys: LpvSystem, u: PiecewiseConstantSignal, p: PiecewiseConstantSignal,
                  K_max: int, step: float | None = None) -> np.ndarray:
    """Output at the signal horizon of the ``K_max``-th Picard iterate, integrated by RK4."""
    return simulate(picard_system(sys, K_max), u, p, "rk4", step).y_T
