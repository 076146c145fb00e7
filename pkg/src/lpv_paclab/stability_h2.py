"""Quadratic-stability certificates, generalized Lyapunov equations and the
lambda-weighted H2 norm.

With ``At = A_0 + (lam/2) I`` the weighted Volterra kernels are those of the
bilinear system ``(At, A_1..A_np)``.  Their total energy is

    ||Sigma||^2 = sum_r trace(B_r^T Q B_r)

where ``Q`` solves ``At^T Q + Q At + sum_i A_i^T Q A_i + sum_i C_i^T C_i = 0``,
provided the operator on the left is Hurwitz (otherwise the kernel series
diverges and the equation's solution is meaningless).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as spla
from scipy.special import gammaincc

from .errors import ConfigError, NumericalError
from .lpv_core import LpvSystem, ThetaFamily, simulate
from .signals import PiecewiseConstantSignal, l2_norm

__all__ = [
    "NotCertifiable",
    "StabilityCertificate",
    "SufficientConditionInput",
    "KernelEstimate",
    "MembershipReport",
    "lyapunov_operator",
    "solve_gen_lyapunov",
    "lyapunov_residual",
    "lmi_check",
    "certify",
    "h2_norm_sq",
    "h2_norm",
    "assumption2_envelope",
    "sufficient_bound",
    "envelope_h2_sq_bound",
    "h2_kernel_estimate",
    "check_family",
    "output_bound_check",
]

COND_MAX = 1e12
PSD_TOL = 1e-10


class NotCertifiable(NumericalError):
    """The family is not certifiable as lambda-stable at the requested lambda."""


def _output_gram(sys: LpvSystem) -> np.ndarray:
    return sum(c.T @ c for c in sys.C)


def _input_gram(sys: LpvSystem) -> np.ndarray:
    return sum(b @ b.T for b in sys.B)


def lyapunov_operator(sys: LpvSystem, lam: float) -> np.ndarray:
    """Matrix of ``Q -> At^T Q + Q At + sum_i A_i^T Q A_i`` acting on column-major ``vec(Q)``."""
    n = sys.n_x
    I = np.eye(n)
    At = sys.A[0] + 0.5 * lam * I
    L = np.kron(I, At.T) + np.kron(At.T, I)
    for Ai in sys.A[1:]:
        L += np.kron(Ai.T, Ai.T)
    return L


def lyapunov_residual(sys: LpvSystem, lam: float, Q) -> float:
    """Relative Frobenius residual of the generalized Lyapunov equation."""
    Q = np.asarray(Q, dtype=float)
    At = sys.A[0] + 0.5 * lam * np.eye(sys.n_x)
    Cg = _output_gram(sys)
    R = At.T @ Q + Q @ At + Cg
    for Ai in sys.A[1:]:
        R += Ai.T @ Q @ Ai
    scale = np.linalg.norm(Cg)
    return float(np.linalg.norm(R) / scale) if scale > 0 else float(np.linalg.norm(R))


def solve_gen_lyapunov(sys: LpvSystem, lam: float) -> np.ndarray:
    """Solve the generalized Lyapunov equality for ``Q`` by dense factorization.

    Raises
    ------
    NotCertifiable
        If the operator is ill-conditioned (cond > 1e12) or not Hurwitz, or the
        solution is indefinite.
    """
    if lam < 0:
        raise ConfigError(f"lambda must be >= 0, got {lam}")
    n = sys.n_x
    L = lyapunov_operator(sys, lam)
    abscissa = float(np.max(np.linalg.eigvals(L).real))
    if abscissa >= 0:
        raise NotCertifiable(
            f"family not lambda-stable at lambda={lam}: Lyapunov operator has "
            f"spectral abscissa {abscissa:.3g} >= 0"
        )
    cond = float(np.linalg.cond(L))
    if not cond <= COND_MAX:
        raise NotCertifiable(f"family not lambda-stable at lambda={lam}: operator condition {cond:.3g}")
    rhs = -_output_gram(sys).reshape(-1, order="F")
    Q = np.linalg.solve(L, rhs).reshape(n, n, order="F")
    Q = 0.5 * (Q + Q.T)
    qmin = float(np.min(np.linalg.eigvalsh(Q)))
    if qmin < -PSD_TOL * max(1.0, float(np.max(np.abs(Q)))):
        raise NotCertifiable(f"generalized Lyapunov solution is indefinite (min eigenvalue {qmin:.3g})")
    return Q


def h2_norm_sq(sys: LpvSystem, lam: float) -> float:
    """Squared lambda-weighted H2 norm via the Gramian identity."""
    Q = solve_gen_lyapunov(sys, lam)
    return float(sum(np.trace(b.T @ Q @ b) for b in sys.B))


def h2_norm(sys: LpvSystem, lam: float) -> float:
    return math.sqrt(max(h2_norm_sq(sys, lam), 0.0))


@dataclass(frozen=True)
class StabilityCertificate:
    lam: float
    Q: np.ndarray
    lmi_margin: float
    q_min_eig: float
    h2_sq_bound: float
    n_p: int

    @property
    def valid(self) -> bool:
        return self.lmi_margin < 0 and self.q_min_eig > 0 and self.lam >= self.n_p

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "Q": self.Q.tolist(),
            "lmi_margin": self.lmi_margin,
            "q_min_eig": self.q_min_eig,
            "h2_sq_bound": self.h2_sq_bound,
            "valid": self.valid,
        }


def lmi_check(sys: LpvSystem, lam: float, Q) -> StabilityCertificate:
    """Evaluate the stability LMI for a user-supplied ``Q``.

    ``lmi_margin`` is the largest eigenvalue of
    ``A_0^T Q + Q A_0 + sum_{i>=1} A_i^T Q A_i + sum_i C_i^T C_i + lam Q``
    and must be negative.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if Q.shape != (sys.n_x, sys.n_x):
        raise ConfigError(f"Q has shape {Q.shape}, expected {(sys.n_x, sys.n_x)}")
    if np.max(np.abs(Q - Q.T)) > 1e-12 * max(1.0, float(np.max(np.abs(Q)))):
        raise ConfigError("Q is not symmetric")
    if lam < 0:
        raise ConfigError(f"lambda must be >= 0, got {lam}")
    A0 = sys.A[0]
    M = A0.T @ Q + Q @ A0 + _output_gram(sys) + lam * Q
    for Ai in sys.A[1:]:
        M += Ai.T @ Q @ Ai
    M = 0.5 * (M + M.T)
    return StabilityCertificate(
        lam=float(lam),
        Q=Q,
        lmi_margin=float(np.max(np.linalg.eigvalsh(M))),
        q_min_eig=float(np.min(np.linalg.eigvalsh(Q))),
        h2_sq_bound=float(sum(np.trace(b.T @ Q @ b) for b in sys.B)),
        n_p=sys.n_p,
    )


def certify(sys: LpvSystem, lam: float, slack: float = 0.01) -> StabilityCertificate:
    """Build a strictly feasible certificate at ``lam``.

    The equality solution at ``lam`` sits on the LMI boundary (margin 0), so
    ``Q`` is taken from the equality at ``lam + slack``; then the LMI residual
    at ``lam`` equals ``-slack * Q``.
    """
    Q = solve_gen_lyapunov(sys, lam + slack)
    return lmi_check(sys, lam, Q)


@dataclass(frozen=True)
class SufficientConditionInput:
    """Decay-envelope data: ``||exp(A_0 t)|| <= exp(-gamma t / 2)``,
    ``Gamma >= n_p max ||A_i||^2``, ``K_B``/``K_C`` bound ``||B_i||``/``||C_i||``."""

    gamma: float
    Gamma: float
    K_B: float
    K_C: float

    def __post_init__(self):
        if not self.gamma > 0 or not self.Gamma >= 0:
            raise ConfigError(f"need gamma > 0 and Gamma >= 0, got {self.gamma}, {self.Gamma}")


def assumption2_envelope(sys: LpvSystem) -> SufficientConditionInput:
    """Tightest envelope constants computable from the matrices.

    ``gamma`` is minus twice the logarithmic 2-norm of ``A_0``; the sups run
    over ``i = 0..n_p`` for ``B_i`` and ``C_i``.
    """
    mu = float(np.max(np.linalg.eigvalsh(0.5 * (sys.A[0] + sys.A[0].T))))
    gamma = -2.0 * mu
    if not gamma > 0:
        raise NotCertifiable(f"A_0 has nonnegative logarithmic norm ({mu:.3g}); no decay envelope")
    Gamma = sys.n_p * max((np.linalg.norm(a, 2) ** 2 for a in sys.A[1:]), default=0.0)
    K_B = max(np.linalg.norm(b, 2) for b in sys.B)
    K_C = max(np.linalg.norm(c, 2) for c in sys.C)
    return SufficientConditionInput(gamma, float(Gamma), float(K_B), float(K_C))


def sufficient_bound(inp: SufficientConditionInput, lam: float, n_p: int) -> float:
    """Closed-form ``(n_p+1)^2 K_C^2 K_B^2 (1/lam + 1/(gamma - lam + Gamma))``.

    Defined for ``n_p <= lam <= gamma - Gamma``.  Compare it with the squared
    norm: dimensionally it bounds ``||Sigma||^2``.  It is not a guaranteed
    upper bound: near ``lam = gamma - Gamma`` the true norm can exceed it or
    diverge.  Returns ``inf`` when the denominator vanishes (``Gamma = 0`` and
    ``lam = gamma``).
    """
    if inp.gamma < inp.Gamma + n_p:
        raise ConfigError(f"envelope violates gamma >= Gamma + n_p ({inp.gamma} < {inp.Gamma} + {n_p})")
    if not (n_p <= lam <= inp.gamma - inp.Gamma) or lam <= 0:
        raise ConfigError(f"lambda={lam} outside [n_p, gamma - Gamma] = [{n_p}, {inp.gamma - inp.Gamma}]")
    denom = inp.gamma - lam + inp.Gamma
    if denom <= 0:
        return float("inf")
    return (n_p + 1) ** 2 * inp.K_C**2 * inp.K_B**2 * (1.0 / lam + 1.0 / denom)


def _envelope_constants(sys, lam, inp):
    inp = inp or assumption2_envelope(sys)
    a = inp.gamma - lam
    if not a > inp.Gamma:
        raise ConfigError(f"tail bound unavailable: lambda={lam} >= gamma - Gamma = {inp.gamma - inp.Gamma}")
    scale = sum(np.linalg.norm(c, 2) ** 2 for c in sys.C) * sum(np.linalg.norm(b, "fro") ** 2 for b in sys.B)
    return float(scale), inp.Gamma, a


def _envelope_tail(scale, Gamma, a, K_max, horizon):
    tail = 0.0
    for k in range(K_max + 1):
        tail += Gamma**k * gammaincc(k + 1, a * horizon) / a ** (k + 1)
    tail += (Gamma / a) ** (K_max + 1) / (a - Gamma)
    return scale * tail


def envelope_h2_sq_bound(sys: LpvSystem, lam: float, inp: SufficientConditionInput | None = None) -> float:
    """Upper bound on ``||Sigma||^2`` from the exponential decay envelope alone."""
    scale, Gamma, a = _envelope_constants(sys, lam, inp)
    return _envelope_tail(scale, Gamma, a, -1, 0.0)


@dataclass(frozen=True)
class KernelEstimate:
    lower: float
    tail_bound: float
    orders: tuple
    horizon: float

    @property
    def upper(self) -> float:
        return self.lower + self.tail_bound


def h2_kernel_estimate(sys: LpvSystem, lam: float, K_max: int = 3, horizon: float | None = None,
                       h: float | None = None,
                       envelope: SufficientConditionInput | None = None) -> KernelEstimate:
    """Kernel-energy estimate of ``||Sigma||^2`` from the time domain.

    Integrates ``||w||^2`` over the simplices of horizon ``horizon`` for the
    orders ``k <= K_max``.  In total-time coordinates the order-``k`` energy
    density obeys a linear matrix ODE driven by order ``k - 1``; the stacked
    system (densities plus running energies) is propagated exactly in steps of
    ``h``.  The omitted orders and times are bounded with the decay envelope.
    """
    if K_max < 0:
        raise ConfigError("K_max must be >= 0")
    scale, Gamma, a = _envelope_constants(sys, lam, envelope)
    if horizon is None:
        horizon = 40.0 / a
    if h is None:
        h = horizon / 200
    n_steps = max(1, int(round(horizon / h)))
    h = horizon / n_steps

    n = sys.n_x
    m = n * n
    I = np.eye(n)
    At = sys.A[0] + 0.5 * lam * I
    Lc = np.kron(I, At) + np.kron(At, I)
    Pi = sum((np.kron(Ai, Ai) for Ai in sys.A[1:]), np.zeros((m, m)))
    cvec = _output_gram(sys).reshape(-1, order="F")
    n_ord = K_max + 1
    D = n_ord * m + n_ord
    G = np.zeros((D, D))
    for j in range(n_ord):
        blk = slice(j * m, (j + 1) * m)
        G[blk, blk] = Lc
        if j:
            G[blk, (j - 1) * m:j * m] = Pi
        G[n_ord * m + j, blk] = cvec
    z = np.zeros(D)
    z[:m] = _input_gram(sys).reshape(-1, order="F")
    Phi = spla.expm(G * h)
    for _ in range(n_steps):
        z = Phi @ z
    orders = tuple(float(v) for v in z[n_ord * m:])
    tail = _envelope_tail(scale, Gamma, a, K_max, horizon)
    return KernelEstimate(float(sum(orders)), float(tail), orders, float(horizon))


@dataclass(frozen=True)
class MembershipReport:
    theta: tuple
    lam: float
    c_E: float
    member: bool
    h2_sq: float | None
    reason: str
    certificate: StabilityCertificate | None = None
    sufficient_bound: float | None = None
    notes: list = field(default_factory=list)

    @property
    def h2(self) -> float | None:
        return None if self.h2_sq is None else math.sqrt(max(self.h2_sq, 0.0))

    def to_dict(self) -> dict:
        return {
            "theta": list(self.theta),
            "lambda": self.lam,
            "c_E": self.c_E,
            "member": self.member,
            "h2_sq": self.h2_sq,
            "h2": self.h2,
            "reason": self.reason,
            "certificate": None if self.certificate is None else self.certificate.to_dict(),
            "sufficient_bound": self.sufficient_bound,
            "notes": list(self.notes),
        }


def check_family(family: ThetaFamily, theta, lam: float | None = None, c_E: float | None = None) -> MembershipReport:
    """Decide whether ``theta`` lies in the admissible set ``||Sigma(theta)|| < c_E``."""
    lam = family.lam if lam is None else lam
    c_E = family.c_E if c_E is None else c_E
    theta = tuple(float(v) for v in theta)
    try:
        sys = family.system(theta)
    except ConfigError as exc:
        return MembershipReport(theta, lam, c_E, False, None, f"invalid parameter: {exc}")
    try:
        h2_sq = h2_norm_sq(sys, lam)
    except NotCertifiable as exc:
        return MembershipReport(theta, lam, c_E, False, None, str(exc))
    notes = []
    try:
        cert = certify(sys, lam)
    except NotCertifiable as exc:
        cert = None
        notes.append(f"no strict certificate: {exc}")
    if cert is not None and not cert.valid:
        notes.append(f"certificate invalid (margin {cert.lmi_margin:.3g}, lambda >= n_p: {lam >= sys.n_p})")
    sb = None
    try:
        sb = sufficient_bound(assumption2_envelope(sys), lam, sys.n_p)
        notes.append("sufficient_bound is the closed-form envelope value; compare with h2_sq (squared norm)")
    except (ConfigError, NotCertifiable) as exc:
        notes.append(f"sufficient bound unavailable: {exc}")
    h2 = math.sqrt(max(h2_sq, 0.0))
    member = h2 < c_E
    reason = f"||Sigma||={h2:.6g} {'<' if member else '>='} c_E={c_E}"
    return MembershipReport(theta, lam, c_E, member, h2_sq, reason, cert, sb, notes)


def output_bound_check(sys: LpvSystem, lam: float, u: PiecewiseConstantSignal, p: PiecewiseConstantSignal,
                       step: float | None = None, h2_sq: float | None = None):
    """Return ``(|y(T)|, (n_p + 1) ||Sigma|| ||u||)`` for the endpoint output bound.

    The bound assumes scheduling values in ``[-1, 1]``; a warning is issued
    when ``p`` leaves that box.
    """
    if np.any(np.abs(p.values) > 1.0):
        warnings.warn("scheduling signal leaves [-1, 1]; the output bound is not guaranteed", stacklevel=2)
    if h2_sq is None:
        h2_sq = h2_norm_sq(sys, lam)
    step = u.ts / 10 if step is None else step
    lhs = float(np.linalg.norm(simulate(sys, u, p, "rk4", step).y_T))
    rhs = (sys.n_p + 1) * math.sqrt(max(h2_sq, 0.0)) * l2_norm(u)
    return lhs, rhs
