"""Least-squares identification of the two-state family from sampled data.

Euler discretization with step ``ts`` of the family gives, with
``alpha = 1 - ts/theta_1``,

    y_k = 2 alpha y_{k-1} - alpha^2 y_{k-2} + ts^2 theta_2 p_{k-2} y_{k-2} + ts^2 theta_3 u_{k-2}

so ``y_k = phi_k . a`` with ``phi_k = [y_{k-1}, y_{k-2}, y_{k-2} p_{k-2}, u_{k-2}]``.
The ``strict_paper`` flag flips the sign of the ``y_{k-2}`` coefficient
(``a_2 = +alpha^2``) for comparison with the alternative sign convention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as spla

from .errors import ConfigError, NumericalError
from .lpv_core import ThetaFamily, theta_system
from .signals import Dataset

__all__ = [
    "Regressors",
    "ArxCoefficients",
    "build_regressors",
    "least_squares",
    "arx_coefficients",
    "invert_a",
    "predict_recursion",
    "Identification",
    "identify",
]

COND_MAX = 1e10


@dataclass(frozen=True)
class Regressors:
    """Stacked regressor rows ``phi`` (R, 4), targets (R,), and their origin ``(traj, k)``."""

    phi: np.ndarray
    target: np.ndarray
    traj: np.ndarray
    k: np.ndarray

    def __len__(self):
        return len(self.target)


@dataclass(frozen=True)
class ArxCoefficients:
    a: np.ndarray
    residual: float
    condition: float
    strict_paper: bool = False

    @property
    def consistency_residual(self) -> float:
        """Distance of ``a_2`` from the value implied by ``a_1``."""
        implied = (self.a[0] / 2) ** 2
        return float(abs(self.a[1] - implied) if self.strict_paper else abs(self.a[1] + implied))

    def to_dict(self) -> dict:
        return {
            "a": self.a.tolist(),
            "residual": self.residual,
            "condition": self.condition,
            "consistency_residual": self.consistency_residual,
            "sign_convention": "strict" if self.strict_paper else "derived",
        }


def build_regressors(ds: Dataset, k_eval: int | None = None, all_k: bool = False) -> Regressors:
    """Regressor rows at sample ``k_eval`` (default: the last sample) of every trajectory.

    With ``all_k`` every ``k >= 2`` of every trajectory is pooled instead.
    """
    if ds.U.shape[2] != 1 or ds.P.shape[2] != 1 or ds.Y.shape[2] != 1:
        raise ConfigError("identification needs n_in = n_p = n_out = 1")
    K = ds.Y.shape[1] - 1
    ks = np.arange(2, K + 1) if all_k else np.array([K if k_eval is None else int(k_eval)])
    if ks.size == 0 or ks[0] < 2 or ks[-1] > K:
        raise ConfigError(f"regressor index must satisfy 2 <= k <= {K}; got {ks.tolist() or '[]'}")
    y, u, p = ds.Y[:, :, 0], ds.U[:, :, 0], ds.P[:, :, 0]
    N = len(ds)
    rows = [np.stack([y[:, k - 1], y[:, k - 2], y[:, k - 2] * p[:, k - 2], u[:, k - 2]], axis=1) for k in ks]
    phi = np.concatenate(rows) if rows else np.zeros((0, 4))
    target = np.concatenate([y[:, k] for k in ks])
    traj = np.tile(np.arange(N), len(ks))
    kk = np.repeat(ks, N)
    return Regressors(phi, target, traj, kk)


def least_squares(rows: Regressors, strict_paper: bool = False) -> ArxCoefficients:
    """Least-squares ``a`` by a QR factorization of the column-scaled design matrix."""
    Phi, t = rows.phi, rows.target
    if len(t) < 4:
        raise NumericalError(f"need at least 4 regressor rows, got {len(t)}")
    scale = np.linalg.norm(Phi, axis=0)
    if np.any(scale == 0):
        raise NumericalError("rank-deficient design: a regressor column is identically zero")
    Q, R = np.linalg.qr(Phi / scale)
    s = np.linalg.svd(R, compute_uv=False)
    cond = float(s[0] / s[-1]) if s[-1] > 0 else float("inf")
    if not cond <= COND_MAX:
        raise NumericalError(f"rank-deficient design: condition number {cond:.3g} exceeds {COND_MAX:.0e}")
    a = spla.solve_triangular(R, Q.T @ t) / scale
    return ArxCoefficients(a, float(np.linalg.norm(Phi @ a - t)), cond, strict_paper)


def arx_coefficients(theta, ts: float, strict_paper: bool = False) -> np.ndarray:
    """``a(theta)`` of the Euler recursion."""
    t1, t2, t3 = (float(v) for v in theta)
    alpha = 1.0 - ts / t1
    a2 = alpha**2 if strict_paper else -(alpha**2)
    return np.array([2 * alpha, a2, ts**2 * t2, ts**2 * t3])


def invert_a(a, ts: float) -> tuple:
    """``theta`` from ``a``; ``theta_1`` uses ``a_1`` only (``a_2`` is left as a consistency check)."""
    a = np.asarray(a.a if isinstance(a, ArxCoefficients) else a, dtype=float)
    if not ts > 0:
        raise ConfigError(f"ts must be positive, got {ts}")
    if a[0] == 2.0:
        raise NumericalError("a_1 = 2 makes theta_1 infinite")
    return (ts / (1.0 - a[0] / 2.0), a[2] / ts**2, a[3] / ts**2)


def predict_recursion(ds: Dataset, a) -> np.ndarray:
    """One-step predictions ``phi_k . a`` for every ``k >= 2``; shape ``(N, K - 1)``."""
    rows = build_regressors(ds, all_k=True)
    N = len(ds)
    return (rows.phi @ np.asarray(a, dtype=float)).reshape(-1, N).T


@dataclass(frozen=True)
class Identification:
    theta: tuple
    coefficients: ArxCoefficients
    system: object
    membership: object

    def to_dict(self) -> dict:
        return {
            "theta": list(self.theta),
            **self.coefficients.to_dict(),
            "membership": self.membership.to_dict(),
        }


def identify(ds: Dataset, ts: float | None = None, lam: float = 1.2, c_E: float = 2.0,
             k_eval: int | None = None, all_k: bool = False, strict_paper: bool = False) -> Identification:
    """Regressors, least squares, inversion and a membership check in one call."""
    from .stability_h2 import check_family

    ts = ds.meta.ts if ts is None else ts
    if abs(ts - ds.meta.ts) > 1e-12 * ts:
        raise ConfigError(f"ts={ts} differs from the dataset sampling period {ds.meta.ts}")
    coef = least_squares(build_regressors(ds, k_eval, all_k), strict_paper)
    theta = invert_a(coef, ts)
    report = check_family(ThetaFamily(lam, c_E), theta, lam, c_E)
    return Identification(theta, coef, theta_system(theta), report)
