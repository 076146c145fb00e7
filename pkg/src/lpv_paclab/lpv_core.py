"""LPV state-space systems with affine scheduling dependence and their simulation.

A system is the tuple ``(A_i, B_i, C_i)_{i=0..n_p}`` with

    x'(t) = A(p(t)) x(t) + B(p(t)) u(t),   x(0) = 0
    y(t)  = C(p(t)) x(t)

where ``M(p) = M_0 + sum_i p_i M_i``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ConfigError
from .signals import PiecewiseConstantSignal, horizon_steps

__all__ = [
    "LpvSystem",
    "Simulation",
    "ThetaFamily",
    "THETA_STAR",
    "theta_system",
    "eval_matrices",
    "simulate",
    "simulate_batch",
    "output_at_T",
    "slice_output",
]

THETA_STAR = (0.1, -1.85, -153.15)


def _as_matrix(m, kind):
    a = np.array(m, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        # B given as a vector is a column; C given as a vector is a row.
        a = a[:, None] if kind == "B" else a[None, :]
    if a.ndim != 2:
        raise ConfigError(f"{kind} matrices must be 2-d, got shape {a.shape}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class LpvSystem:
    """The matrices ``A_0..A_{n_p}``, ``B_0..B_{n_p}``, ``C_0..C_{n_p}``."""

    A: tuple
    B: tuple
    C: tuple
    name: str = ""

    def __post_init__(self):
        A = tuple(_as_matrix(m, "A") for m in self.A)
        B = tuple(_as_matrix(m, "B") for m in self.B)
        C = tuple(_as_matrix(m, "C") for m in self.C)
        if not (len(A) == len(B) == len(C) >= 1):
            raise ConfigError(f"need n_p + 1 >= 1 matrices of each kind, got {len(A)}, {len(B)}, {len(C)}")
        n_x = A[0].shape[0]
        n_in = B[0].shape[1]
        n_out = C[0].shape[0]
        for i, (a, b, c) in enumerate(zip(A, B, C)):
            if a.shape != (n_x, n_x):
                raise ConfigError(f"A_{i} has shape {a.shape}, expected {(n_x, n_x)}")
            if b.shape != (n_x, n_in):
                raise ConfigError(f"B_{i} has shape {b.shape}, expected {(n_x, n_in)}")
            if c.shape != (n_out, n_x):
                raise ConfigError(f"C_{i} has shape {c.shape}, expected {(n_out, n_x)}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)

    @classmethod
    def lti(cls, A, B, C, name: str = "") -> "LpvSystem":
        return cls((A,), (B,), (C,), name)

    @property
    def n_x(self) -> int:
        return self.A[0].shape[0]

    @property
    def n_in(self) -> int:
        return self.B[0].shape[1]

    @property
    def n_out(self) -> int:
        return self.C[0].shape[0]

    @property
    def n_p(self) -> int:
        return len(self.A) - 1

    @cached_property
    def A_stack(self) -> np.ndarray:
        return np.stack(self.A)

    @cached_property
    def B_stack(self) -> np.ndarray:
        return np.stack(self.B)

    @cached_property
    def C_stack(self) -> np.ndarray:
        return np.stack(self.C)

    def eval_matrices(self, p):
        return eval_matrices(self, p)

    def to_dict(self) -> dict:
        return {
            "n_x": self.n_x,
            "n_in": self.n_in,
            "n_out": self.n_out,
            "n_p": self.n_p,
            "A": [m.tolist() for m in self.A],
            "B": [m.tolist() for m in self.B],
            "C": [m.tolist() for m in self.C],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LpvSystem":
        try:
            sys = cls(tuple(d["A"]), tuple(d["B"]), tuple(d["C"]), d.get("name", ""))
        except KeyError as exc:
            raise ConfigError(f"system document lacks {exc}") from None
        for key in ("n_x", "n_in", "n_out", "n_p"):
            if key in d and d[key] != getattr(sys, key):
                raise ConfigError(f"declared {key}={d[key]} but matrices give {getattr(sys, key)}")
        return sys

    @classmethod
    def from_json(cls, path) -> "LpvSystem":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def eval_matrices(sys: LpvSystem, p):
    """Return ``(A(p), B(p), C(p))`` for a scheduling vector ``p``."""
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if p.shape != (sys.n_p,):
        raise ConfigError(f"scheduling vector has shape {p.shape}, expected ({sys.n_p},)")
    A = sys.A[0] + np.tensordot(p, sys.A_stack[1:], axes=1)
    B = sys.B[0] + np.tensordot(p, sys.B_stack[1:], axes=1)
    C = sys.C[0] + np.tensordot(p, sys.C_stack[1:], axes=1)
    return A, B, C


def slice_output(sys: LpvSystem, j: int) -> LpvSystem:
    """The single-output system keeping row ``j`` of every ``C_i``."""
    if not 0 <= j < sys.n_out:
        raise ConfigError(f"output index {j} out of range for n_out={sys.n_out}")
    return LpvSystem(sys.A, sys.B, tuple(c[j:j + 1] for c in sys.C), sys.name)


def _affine(stack, P):
    # stack: (n_p+1, r, c); P: (N, n_p) -> (N, r, c)
    return stack[0][None] + np.einsum("nk,krc->nrc", P, stack[1:])


def _substeps(ts, step):
    if step is None:
        return 1, ts
    if not step > 0:
        raise ConfigError(f"integration step must be positive, got {step}")
    n_sub = round(ts / step)
    if n_sub < 1 or abs(n_sub * step - ts) > 1e-9 * ts:
        raise ConfigError(f"step {step} does not divide the sample period {ts}")
    return int(n_sub), ts / n_sub


def simulate_batch(sys: LpvSystem, U, P, ts: float, method: str = "rk4", step: float | None = None):
    """Simulate ``N`` trajectories at once from ``x(0) = 0``.

    Parameters
    ----------
    U, P : arrays of shape (N, K, n_in) and (N, K, n_p)
        Held input and scheduling values, one per sampling interval.
    ts : float
        Sampling period.
    method : {"euler", "rk4"}
        Integrator; ``u`` and ``p`` are held constant inside every step.
    step : float, optional
        Integration step, must divide ``ts``.  Defaults to ``ts``.

    Returns
    -------
    Y : (N, K + 1, n_out) outputs at ``t = k*ts``; the last sample uses the
        scheduling value held on the final interval.
    X : (N, K + 1, n_x) states at the same instants.
    """
    U = np.asarray(U, dtype=float)
    P = np.asarray(P, dtype=float)
    if U.ndim != 3 or P.ndim != 3 or U.shape[:2] != P.shape[:2]:
        raise ConfigError(f"U and P must be (N, K, .) arrays with matching N, K; got {U.shape}, {P.shape}")
    if U.shape[2] != sys.n_in or P.shape[2] != sys.n_p:
        raise ConfigError(f"signal dimensions {U.shape[2]}, {P.shape[2]} do not match n_in={sys.n_in}, n_p={sys.n_p}")
    if method not in ("euler", "rk4"):
        raise ConfigError(f"unknown integration method {method!r}")
    n_sub, h = _substeps(ts, step)
    N, K = U.shape[:2]
    X = np.zeros((N, K + 1, sys.n_x))
    Y = np.zeros((N, K + 1, sys.n_out))
    x = np.zeros((N, sys.n_x))
    for k in range(K):
        Ak = _affine(sys.A_stack, P[:, k])
        bk = np.einsum("nij,nj->ni", _affine(sys.B_stack, P[:, k]), U[:, k])
        Ck = _affine(sys.C_stack, P[:, k])
        Y[:, k] = np.einsum("nij,nj->ni", Ck, x)
        for _ in range(n_sub):
            if method == "euler":
                x = x + h * (np.einsum("nij,nj->ni", Ak, x) + bk)
            else:
                k1 = np.einsum("nij,nj->ni", Ak, x) + bk
                k2 = np.einsum("nij,nj->ni", Ak, x + 0.5 * h * k1) + bk
                k3 = np.einsum("nij,nj->ni", Ak, x + 0.5 * h * k2) + bk
                k4 = np.einsum("nij,nj->ni", Ak, x + h * k3) + bk
                x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        X[:, k + 1] = x
    if K:
        Y[:, K] = np.einsum("nij,nj->ni", Ck, x)
    return Y, X


@dataclass(frozen=True)
class Simulation:
    y: PiecewiseConstantSignal
    x: np.ndarray

    @property
    def y_T(self) -> np.ndarray:
        return self.y.values[-1]


def _check_pair(sys, u, p):
    if not isinstance(u, PiecewiseConstantSignal) or not isinstance(p, PiecewiseConstantSignal):
        raise ConfigError("u and p must be PiecewiseConstantSignal instances")
    if abs(u.ts - p.ts) > 1e-12 * u.ts or len(u) != len(p):
        raise ConfigError(f"u and p horizons differ ({len(u)}x{u.ts} vs {len(p)}x{p.ts})")


def simulate(sys: LpvSystem, u: PiecewiseConstantSignal, p: PiecewiseConstantSignal,
             method: str = "rk4", step: float | None = None) -> Simulation:
    """Simulate one trajectory; see :func:`simulate_batch`."""
    _check_pair(sys, u, p)
    Y, X = simulate_batch(sys, u.values[None], p.values[None], u.ts, method, step)
    return Simulation(PiecewiseConstantSignal(u.ts, Y[0]), X[0])


def output_at_T(sys: LpvSystem, u, p, method: str = "rk4", step: float | None = None) -> np.ndarray:
    return simulate(sys, u, p, method, step).y_T


def theta_system(theta) -> LpvSystem:
    """The two-state, single-scheduling family used in the identification experiment."""
    t1, t2, t3 = (float(v) for v in theta)
    if t1 == 0:
        raise ConfigError("theta_1 must be nonzero")
    A0 = [[-1.0 / t1, 0.0], [1.0, -1.0 / t1]]
    A1 = [[0.0, t2], [0.0, 0.0]]
    B0 = [[t3], [0.0]]
    B1 = [[0.0], [0.0]]
    C0 = [[0.0, 1.0]]
    C1 = [[0.0, 0.0]]
    return LpvSystem((A0, A1), (B0, B1), (C0, C1), name=f"theta={list(theta)}")


@dataclass(frozen=True)
class ThetaFamily:
    """Parametrized family together with its admissible set ``||Sigma(theta)|| < c_E``."""

    lam: float = 1.2
    c_E: float = 2.0

    def system(self, theta) -> LpvSystem:
        return theta_system(theta)

    def check(self, theta):
        from .stability_h2 import check_family

        return check_family(self, theta, self.lam, self.c_E)

    def contains(self, theta) -> bool:
        return self.check(theta).member

    def to_dict(self) -> dict:
        return {"lambda": self.lam, "c_E": self.c_E}
