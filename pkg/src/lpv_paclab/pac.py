"""Losses, empirical risks and PAC generalization bounds for LPV model classes."""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .lpv_core import LpvSystem, simulate_batch
from .signals import Dataset

__all__ = [
    "LossSpec",
    "loss",
    "loss_batch",
    "model_outputs",
    "empirical_risk",
    "PacConfig",
    "PacReport",
    "r_delta",
    "r2_delta",
    "theorem1_bound",
    "theorem2_bound",
    "corollary_excess_risk",
    "MultiOutputBound",
    "multi_output_bound",
    "RademacherEstimate",
    "rademacher_from_losses",
    "exact_rademacher",
    "empirical_rademacher",
]

DEFAULT_EPS = (0.5, 0.1, 0.05, 0.01)


@dataclass(frozen=True)
class LossSpec:
    """``absolute``: ``||y - y'||``; ``squared-clipped``: ``||y - y'||^2`` on ``|y| <= c_max``."""

    kind: str = "absolute"
    c_max: float | None = None

    def __post_init__(self):
        if self.kind not in ("absolute", "squared-clipped"):
            raise ConfigError(f"unknown loss kind {self.kind!r}")
        if self.kind == "squared-clipped" and not (self.c_max is not None and self.c_max > 0):
            raise ConfigError("squared-clipped loss needs c_max > 0")

    @property
    def lipschitz(self) -> float:
        return 1.0 if self.kind == "absolute" else 2.0 * self.c_max

    def to_dict(self) -> dict:
        return {"kind": self.kind, "c_max": self.c_max, "K_l": self.lipschitz}


def loss_batch(spec: LossSpec, Y, Y2) -> np.ndarray:
    """Per-sample losses for outputs of shape ``(N, n_out)`` (or ``(N,)`` for one output)."""
    Y = np.asarray(Y, dtype=float)
    Y2 = np.asarray(Y2, dtype=float)
    if Y.shape != Y2.shape:
        raise ConfigError(f"output shapes differ: {Y.shape} vs {Y2.shape}")
    if Y.ndim == 1:
        Y, Y2 = Y[:, None], Y2[:, None]
    if spec.kind == "squared-clipped":
        for arr in (Y, Y2):
            bad = np.abs(arr) > spec.c_max
            if np.any(bad):
                raise ConfigError(f"value {arr[bad][0]:.6g} outside the clipped domain |y| <= {spec.c_max}")
        return np.sum((Y - Y2) ** 2, axis=-1)
    return np.linalg.norm(Y - Y2, axis=-1)


def loss(spec: LossSpec, y, y2) -> float:
    """Loss between two outputs (scalars or vectors)."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    y2 = np.atleast_1d(np.asarray(y2, dtype=float))
    return float(loss_batch(spec, y[None], y2[None])[0])


def model_outputs(sys: LpvSystem, ds: Dataset, method: str = "euler", step: float | None = None) -> np.ndarray:
    """Model outputs at ``T`` for every trajectory of ``ds``, shape ``(N, n_out)``."""
    Y, _ = simulate_batch(sys, ds.U, ds.P, ds.meta.ts, method, step)
    return Y[:, -1]


def empirical_risk(spec: LossSpec, sys: LpvSystem, ds: Dataset, method: str = "euler",
                   step: float | None = None) -> float:
    """``(1/N) sum_i loss(y_model_i(T), y_i(T))``.

    The default integrator matches :func:`lpv_paclab.signals.generate_dataset`.
    """
    if len(ds) == 0:
        raise ConfigError("empirical risk of an empty dataset")
    return float(np.mean(loss_batch(spec, model_outputs(sys, ds, method, step), ds.y_T)))


def _check_delta(delta):
    if not 0 < delta < 1:
        raise ConfigError(f"delta must lie in (0, 1), got {delta}")


def r_delta(c: float, delta: float) -> float:
    """``c (2 + 4 sqrt(2 ln(4/delta)))``."""
    _check_delta(delta)
    return c * (2.0 + 4.0 * math.sqrt(2.0 * math.log(4.0 / delta)))


def r2_delta(c: float, delta: float) -> float:
    """``c (2 + 5 sqrt(2 ln(8/delta)))``, the excess-risk analogue of :func:`r_delta`."""
    _check_delta(delta)
    return c * (2.0 + 5.0 * math.sqrt(2.0 * math.log(8.0 / delta)))


@dataclass(frozen=True)
class PacConfig:
    """Constants of the uniform bound.

    ``provenance`` maps ``L_u`` and ``c_y`` to ``"declared"`` (a priori) or
    ``"estimated-from-data"``; estimated constants make the bound heuristic.
    """

    K_l: float
    L_u: float
    c_y: float
    c_E: float
    n_p: int
    delta: float
    N: int
    provenance: dict = field(default_factory=lambda: {"L_u": "declared", "c_y": "declared"})

    def __post_init__(self):
        for name in ("K_l", "L_u", "c_y", "c_E"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ConfigError(f"{name} must be finite and >= 0, got {v}")
        if self.n_p < 0:
            raise ConfigError(f"n_p must be >= 0, got {self.n_p}")
        if self.N < 1:
            raise ConfigError(f"N must be >= 1, got {self.N}")
        _check_delta(self.delta)
        for key, val in self.provenance.items():
            if val not in ("declared", "estimated-from-data"):
                raise ConfigError(f"provenance of {key} must be 'declared' or 'estimated-from-data'")

    @property
    def heuristic(self) -> bool:
        return any(v == "estimated-from-data" for v in self.provenance.values())

    @property
    def c(self) -> float:
        return 2.0 * self.K_l * max(self.L_u * (self.n_p + 1) * self.c_E, self.c_y)

    def with_N(self, N: int) -> "PacConfig":
        return PacConfig(self.K_l, self.L_u, self.c_y, self.c_E, self.n_p, self.delta, N, dict(self.provenance))

    def to_dict(self) -> dict:
        return {
            "K_l": self.K_l,
            "L_u": self.L_u,
            "c_y": self.c_y,
            "c_E": self.c_E,
            "n_p": self.n_p,
            "delta": self.delta,
            "N": self.N,
            "provenance": dict(self.provenance),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PacConfig":
        try:
            return cls(float(d["K_l"]), float(d["L_u"]), float(d["c_y"]), float(d["c_E"]), int(d["n_p"]),
                       float(d["delta"]), int(d["N"]),
                       dict(d.get("provenance", {"L_u": "declared", "c_y": "declared"})))
        except KeyError as exc:
            raise ConfigError(f"PAC configuration lacks {exc}") from None


@dataclass(frozen=True)
class PacReport:
    c: float
    R_delta: float
    bound: float
    N: int
    delta: float
    N_m: dict
    R2_delta: float
    N_min: dict
    heuristic: bool
    config: PacConfig

    @property
    def confidence(self) -> float:
        return 1.0 - self.delta

    def to_dict(self) -> dict:
        return {
            "c": self.c,
            "R_delta": self.R_delta,
            "bound": self.bound,
            "N": self.N,
            "delta": self.delta,
            "confidence": self.confidence,
            "N_m": {str(k): v for k, v in self.N_m.items()},
            "R2_delta": self.R2_delta,
            "N_min": {str(k): v for k, v in self.N_min.items()},
            "heuristic": self.heuristic,
            "constants": self.config.to_dict(),
        }


def _eps_table(R, eps):
    table = {}
    for e in eps:
        if not e > 0:
            raise ConfigError(f"epsilon must be > 0, got {e}")
        table[float(e)] = (R / e) ** 2
    return table


def theorem1_bound(cfg: PacConfig, eps=DEFAULT_EPS) -> PacReport:
    """Uniform generalization gap ``R(delta)/sqrt(N)`` holding with probability ``1 - delta``.

    ``N_m[eps] = (R(delta)/eps)^2`` is the sample size at which the bound reaches ``eps``.
    """
    c = cfg.c
    R = r_delta(c, cfg.delta)
    R2, N_min = corollary_excess_risk(cfg, eps)
    return PacReport(c, R, R / math.sqrt(cfg.N), cfg.N, cfg.delta, _eps_table(R, eps), R2, N_min,
                     cfg.heuristic, cfg)


def theorem2_bound(rademacher: float, B_T: float, N: int, delta: float) -> float:
    """``2 rademacher + 4 B_T sqrt(2 ln(4/delta) / N)`` for losses with values in ``[0, B_T]``."""
    _check_delta(delta)
    if rademacher < 0 or B_T < 0:
        raise ConfigError("rademacher and B_T must be >= 0")
    if N < 1:
        raise ConfigError(f"N must be >= 1, got {N}")
    return 2.0 * rademacher + 4.0 * B_T * math.sqrt(2.0 * math.log(4.0 / delta) / N)


def corollary_excess_risk(cfg: PacConfig, eps=DEFAULT_EPS):
    """Return ``(R2(delta), {eps: (R2/eps)^2})`` for the excess risk of the empirical minimizer."""
    R2 = r2_delta(cfg.c, cfg.delta)
    return R2, _eps_table(R2, eps)


@dataclass(frozen=True)
class MultiOutputBound:
    bound: float
    confidence: float
    per_output: tuple


def multi_output_bound(reports, delta_each: float) -> MultiOutputBound:
    """Union bound over outputs of a loss that decomposes as a sum over outputs.

    Returns ``max_j R_j / sqrt(N)`` at confidence ``1 - n_out * delta_each``.
    """
    reports = list(reports)
    if not reports:
        raise ConfigError("need at least one per-output report")
    _check_delta(delta_each)
    if any(abs(r.delta - delta_each) > 1e-15 for r in reports):
        raise ConfigError("per-output reports must share delta_each")
    if len({r.N for r in reports}) != 1:
        raise ConfigError("per-output reports must share N")
    n_out = len(reports)
    if n_out * delta_each >= 1:
        warnings.warn(f"n_out * delta = {n_out * delta_each:.3g} >= 1: the aggregate confidence is vacuous",
                      stacklevel=2)
    per = tuple(r.bound for r in reports)
    return MultiOutputBound(max(per), 1.0 - n_out * delta_each, per)


@dataclass(frozen=True)
class RademacherEstimate:
    estimate: float
    stderr: float
    n_draws: int

    def consistent_with(self, c: float, N: int) -> bool:
        """Diagnostic ``estimate <= c / sqrt(N) + 2 stderr``."""
        return self.estimate <= c / math.sqrt(N) + 2.0 * self.stderr


def _check_losses(L):
    L = np.atleast_2d(np.asarray(L, dtype=float))
    if L.size == 0:
        raise ConfigError("empty loss grid")
    return L


def rademacher_from_losses(L, n_sigma_draws: int, seed: int) -> RademacherEstimate:
    """Monte Carlo ``E_sigma[max_g (1/N) sum_i sigma_i L[g, i]]`` for a ``(G, N)`` loss matrix."""
    L = _check_losses(L)
    if n_sigma_draws < 1:
        raise ConfigError("n_sigma_draws must be >= 1")
    N = L.shape[1]
    rng = np.random.default_rng(seed)
    sigma = rng.choice(np.array([-1.0, 1.0]), size=(n_sigma_draws, N))
    vals = np.max(sigma @ L.T, axis=1) / N
    se = float(np.std(vals, ddof=1) / math.sqrt(n_sigma_draws)) if n_sigma_draws > 1 else float("inf")
    return RademacherEstimate(float(np.mean(vals)), se, n_sigma_draws)


def exact_rademacher(L) -> float:
    """Exact expectation by enumerating all ``2^N`` sign vectors (``N <= 20``)."""
    L = _check_losses(L)
    N = L.shape[1]
    if N > 20:
        raise ConfigError(f"exact enumeration limited to N <= 20, got {N}")
    sigma = np.array(list(itertools.product((-1.0, 1.0), repeat=N)))
    return float(np.mean(np.max(sigma @ L.T, axis=1)) / N)


def empirical_rademacher(spec: LossSpec, systems, ds: Dataset, n_sigma_draws: int, seed: int,
                         method: str = "euler", step: float | None = None) -> RademacherEstimate:
    """Empirical Rademacher complexity of the loss class restricted to a finite grid of systems.

    The sup over a finite grid under-approximates the sup over the continuum,
    so this is a lower-bound diagnostic only.
    """
    systems = list(systems)
    if not systems:
        raise ConfigError("empty system grid")
    L = np.stack([loss_batch(spec, model_outputs(s, ds, method, step), ds.y_T) for s in systems])
    return rademacher_from_losses(L, n_sigma_draws, seed)
