"""Piecewise-constant signals, datasets, the data-generating law and CSV/JSON persistence.

Inputs ``u`` and scheduling ``p`` are zero-order-hold signals with ``K`` values
on ``[0, K*ts)``.  Sampled outputs carry one extra value, the sample at
``t = T = K*ts``, so the same evaluation rule ``values[floor(t/ts)]`` returns
the endpoint output directly.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DatasetFormatError

__all__ = [
    "PiecewiseConstantSignal",
    "Trajectory",
    "DistributionSpec",
    "DatasetMeta",
    "Dataset",
    "BoundsReport",
    "l2_norm",
    "paper_law",
    "input_energy_envelope",
    "horizon_steps",
    "trajectory_rng",
    "generate_dataset",
    "check_signal_bounds",
    "save_dataset",
    "load_dataset",
    "meta_path",
]

CENTERINGS = ("distribution-mean", "per-signal-empirical", "none")


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def horizon_steps(T: float, ts: float) -> int:
    """Number of sampling intervals ``K = T/ts``; raises if not an integer."""
    if ts <= 0 or T <= 0:
        raise ConfigError(f"T and ts must be positive (T={T}, ts={ts})")
    K = round(T / ts)
    if K < 1 or abs(K * ts - T) > 1e-9 * max(T, 1.0):
        raise ConfigError(f"T/ts must be a positive integer (T={T}, ts={ts})")
    return int(K)


@dataclass(frozen=True)
class PiecewiseConstantSignal:
    """Signal equal to ``values[k]`` on ``[k*ts, (k+1)*ts)``.

    Evaluation at the right endpoint ``len(values)*ts`` returns the last value.
    """

    ts: float
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.ndim != 2:
            raise ConfigError(f"signal values must be a (K, d) array, got shape {vals.shape}")
        if not self.ts > 0:
            raise ConfigError(f"sample period must be positive, got {self.ts}")
        vals.setflags(write=False)
        object.__setattr__(self, "ts", float(self.ts))
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def horizon(self) -> float:
        return len(self) * self.ts

    def index(self, t: float) -> int:
        K = len(self)
        if t < 0 or t > self.horizon * (1 + 1e-12) + 1e-15:
            raise ConfigError(f"time {t} outside signal support [0, {self.horizon}]")
        return min(int(math.floor(t / self.ts + 1e-9)), K - 1)

    def at(self, t: float) -> np.ndarray:
        return self.values[self.index(t)]

    def scaled(self, alpha: float) -> "PiecewiseConstantSignal":
        return PiecewiseConstantSignal(self.ts, alpha * self.values)


def l2_norm(u: PiecewiseConstantSignal) -> float:
    """Exact L2 norm on ``[0, horizon]`` of a piecewise-constant signal."""
    if len(u) == 0:
        raise ConfigError("L2 norm of an empty signal is undefined")
    return float(np.sqrt(u.ts * np.sum(u.values**2)))


@dataclass(frozen=True)
class Trajectory:
    u: PiecewiseConstantSignal
    p: PiecewiseConstantSignal
    y: PiecewiseConstantSignal

    def __post_init__(self):
        if not (self.u.ts == self.p.ts == self.y.ts):
            raise ConfigError("u, p and y must share the sample period")
        if len(self.u) != len(self.p) or len(self.y) != len(self.u) + 1:
            raise ConfigError(
                "expected len(u) == len(p) == K and len(y) == K + 1, got "
                f"{len(self.u)}, {len(self.p)}, {len(self.y)}"
            )

    @property
    def T(self) -> float:
        return self.u.horizon


@dataclass(frozen=True)
class DistributionSpec:
    """Sampling law of the input and scheduling values.

    Each value is drawn uniformly from its channel's ``[lo, hi]`` range, then
    centered.  ``noise_variance`` is the variance of the i.i.d. Gaussian noise
    added to every output sample.
    """

    u_range: tuple
    p_range: tuple
    centering: str = "distribution-mean"
    noise_variance: float = 0.0

    def __post_init__(self):
        u_range = tuple((float(lo), float(hi)) for lo, hi in self.u_range)
        p_range = tuple((float(lo), float(hi)) for lo, hi in self.p_range)
        for lo, hi in u_range + p_range:
            if lo > hi:
                raise ConfigError(f"range [{lo}, {hi}] has lo > hi")
        if self.centering not in CENTERINGS:
            raise ConfigError(f"unknown centering {self.centering!r}; expected one of {CENTERINGS}")
        if not self.noise_variance >= 0:
            raise ConfigError(f"noise variance must be >= 0, got {self.noise_variance}")
        object.__setattr__(self, "u_range", u_range)
        object.__setattr__(self, "p_range", p_range)
        object.__setattr__(self, "noise_variance", float(self.noise_variance))

    @property
    def n_in(self) -> int:
        return len(self.u_range)

    @property
    def n_p(self) -> int:
        return len(self.p_range)

    def offsets(self):
        """Centering offsets used for ``distribution-mean`` centering."""
        u_mid = np.array([(lo + hi) / 2 for lo, hi in self.u_range])
        p_mid = np.array([(lo + hi) / 2 for lo, hi in self.p_range])
        return u_mid, p_mid

    def to_dict(self) -> dict:
        return {
            "u_range": [list(r) for r in self.u_range],
            "p_range": [list(r) for r in self.p_range],
            "centering": self.centering,
            "noise_variance": self.noise_variance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DistributionSpec":
        try:
            return cls(
                u_range=d["u_range"],
                p_range=d["p_range"],
                centering=d.get("centering", "distribution-mean"),
                noise_variance=d.get("noise_variance", 0.0),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid distribution spec: {exc}") from exc


def paper_law(noise_variance: float = 0.05, centering: str = "distribution-mean") -> DistributionSpec:
    """Input U[0, 30], scheduling U[0, 3], centered, noisy outputs."""
    return DistributionSpec(((0.0, 30.0),), ((0.0, 3.0),), centering, noise_variance)


def input_energy_envelope(spec: DistributionSpec, T: float) -> float:
    """Worst-case L2 norm of an input drawn from ``spec`` on ``[0, T]``."""
    if spec.centering == "distribution-mean":
        mid = spec.offsets()[0]
        peak = [max(abs(lo - m), abs(hi - m)) for (lo, hi), m in zip(spec.u_range, mid)]
    elif spec.centering == "per-signal-empirical":
        peak = [hi - lo for lo, hi in spec.u_range]
    else:
        peak = [max(abs(lo), abs(hi)) for lo, hi in spec.u_range]
    return float(np.sqrt(T * np.sum(np.square(peak))))


@dataclass(frozen=True)
class DatasetMeta:
    seed: int | None
    T: float
    ts: float
    law: DistributionSpec | None = None
    system_id: str = ""

    def to_dict(self, n: int) -> dict:
        return {
            "seed": self.seed,
            "T": self.T,
            "ts": self.ts,
            "law": None if self.law is None else self.law.to_dict(),
            "n": n,
            "system_id": self.system_id,
        }


@dataclass(frozen=True)
class Dataset:
    """``N`` trajectories stored as stacked arrays.

    ``U``: (N, K, n_in), ``P``: (N, K, n_p), ``Y``: (N, K + 1, n_out).
    """

    U: np.ndarray
    P: np.ndarray
    Y: np.ndarray
    meta: DatasetMeta
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        arrays = []
        for name in ("U", "P", "Y"):
            a = np.array(getattr(self, name), dtype=float)
            if a.ndim != 3:
                raise ConfigError(f"{name} must be a 3-d array, got shape {a.shape}")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
            arrays.append(a)
        U, P, Y = arrays
        K = horizon_steps(self.meta.T, self.meta.ts)
        if not (U.shape[0] == P.shape[0] == Y.shape[0]):
            raise ConfigError("U, P, Y disagree on the number of trajectories")
        if U.shape[0] and (U.shape[1] != K or P.shape[1] != K or Y.shape[1] != K + 1):
            raise ConfigError(f"trajectory length does not match T/ts = {K}")

    def __len__(self):
        return self.U.shape[0]

    @property
    def K(self) -> int:
        return horizon_steps(self.meta.T, self.meta.ts)

    @property
    def T(self) -> float:
        return self.meta.T

    @property
    def ts(self) -> float:
        return self.meta.ts

    @property
    def y_T(self) -> np.ndarray:
        """Output samples at ``t = T``, shape (N, n_out)."""
        return self.Y[:, -1, :]

    def trajectory(self, i: int) -> Trajectory:
        ts = self.meta.ts
        return Trajectory(
            PiecewiseConstantSignal(ts, self.U[i]),
            PiecewiseConstantSignal(ts, self.P[i]),
            PiecewiseConstantSignal(ts, self.Y[i]),
        )

    @property
    def trajectories(self) -> list:
        if "traj" not in self._cache:
            self._cache["traj"] = [self.trajectory(i) for i in range(len(self))]
        return self._cache["traj"]

    def subset(self, n: int) -> "Dataset":
        return Dataset(self.U[:n], self.P[:n], self.Y[:n], self.meta)

    @classmethod
    def from_trajectories(cls, trajectories: Sequence[Trajectory], meta: DatasetMeta) -> "Dataset":
        if not trajectories:
            raise ConfigError("use Dataset.empty for an empty dataset")
        for i, tr in enumerate(trajectories):
            if abs(tr.u.ts - meta.ts) > 1e-12 * meta.ts or abs(tr.T - meta.T) > 1e-9 * meta.T:
                raise ConfigError(f"trajectory {i} does not share (T, ts) with the dataset")
        return cls(
            np.stack([tr.u.values for tr in trajectories]),
            np.stack([tr.p.values for tr in trajectories]),
            np.stack([tr.y.values for tr in trajectories]),
            meta,
        )

    @classmethod
    def empty(cls, meta: DatasetMeta, n_in: int = 1, n_p: int = 1, n_out: int = 1) -> "Dataset":
        K = horizon_steps(meta.T, meta.ts)
        return cls(np.zeros((0, K, n_in)), np.zeros((0, K, n_p)), np.zeros((0, K + 1, n_out)), meta)


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Independent generator for trajectory ``index`` of a dataset seeded by ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(index),)))


def generate_dataset(n, spec: DistributionSpec, T, ts, system, seed: int,
                     method: str = "euler", step: float | None = None,
                     system_id: str = "") -> Dataset:
    """Draw ``n`` trajectories from ``spec`` and simulate ``system`` on them.

    Trajectory ``i`` uses its own generator (see :func:`trajectory_rng`), so the
    result does not depend on how trajectories are batched.  Inputs are drawn
    first, then scheduling, then the output noise.
    """
    from .lpv_core import simulate_batch

    K = horizon_steps(T, ts)
    meta = DatasetMeta(int(seed), float(T), float(ts), spec, system_id)
    if spec.n_in != system.n_in or spec.n_p != system.n_p:
        raise ConfigError(
            f"law has n_in={spec.n_in}, n_p={spec.n_p} but the system has "
            f"n_in={system.n_in}, n_p={system.n_p}"
        )
    if n == 0:
        return Dataset.empty(meta, system.n_in, system.n_p, system.n_out)

    u_lo = np.array([r[0] for r in spec.u_range])
    u_hi = np.array([r[1] for r in spec.u_range])
    p_lo = np.array([r[0] for r in spec.p_range])
    p_hi = np.array([r[1] for r in spec.p_range])
    U = np.empty((n, K, spec.n_in))
    P = np.empty((n, K, spec.n_p))
    noise = np.empty((n, K + 1, system.n_out))
    sd = math.sqrt(spec.noise_variance)
    for i in range(n):
        rng = trajectory_rng(seed, i)
        U[i] = rng.uniform(u_lo, u_hi, size=(K, spec.n_in))
        P[i] = rng.uniform(p_lo, p_hi, size=(K, spec.n_p))
        noise[i] = rng.normal(0.0, 1.0, size=(K + 1, system.n_out))

    if spec.centering == "distribution-mean":
        u_mid, p_mid = spec.offsets()
        U -= u_mid
        P -= p_mid
    elif spec.centering == "per-signal-empirical":
        U -= U.mean(axis=1, keepdims=True)
        P -= P.mean(axis=1, keepdims=True)

    Y, _ = simulate_batch(system, U, P, ts, method=method, step=step)
    Y = Y + sd * noise
    return Dataset(U, P, Y, meta)


@dataclass(frozen=True)
class BoundsReport:
    u_ok: np.ndarray
    y_ok: np.ndarray
    max_u_norm: float
    max_abs_yT: float

    @property
    def all_ok(self) -> bool:
        return bool(np.all(self.u_ok) and np.all(self.y_ok))


def check_signal_bounds(ds: Dataset, L_u: float, c_y: float) -> BoundsReport:
    """Check the input-energy and endpoint-output bounds on every trajectory.

    The reported maxima can be used to estimate ``L_u`` and ``c_y`` from data.
    """
    if len(ds) == 0:
        return BoundsReport(np.ones(0, bool), np.ones(0, bool), 0.0, 0.0)
    u_norms = np.sqrt(ds.ts * np.sum(ds.U**2, axis=(1, 2)))
    y_abs = np.linalg.norm(ds.y_T, axis=1)
    return BoundsReport(u_norms <= L_u, y_abs <= c_y, float(u_norms.max()), float(y_abs.max()))


# -- persistence -------------------------------------------------------------


def meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def save_dataset(ds: Dataset, path, system_id: str | None = None) -> None:
    """Write ``ds`` as CSV plus a ``<name>.meta.json`` sidecar.

    Row ``k = K`` carries the endpoint output; its ``u``/``p`` columns repeat
    the last held values.
    """
    path = Path(path)
    n_in, n_p, n_out = ds.U.shape[2], ds.P.shape[2], ds.Y.shape[2]
    header = (["traj", "k", "t"] + [f"u{j}" for j in range(n_in)]
              + [f"p{j}" for j in range(n_p)] + [f"y{j}" for j in range(n_out)])
    K = ds.K
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(ds)):
            for k in range(K + 1):
                kk = min(k, K - 1)
                w.writerow(
                    [i, k, _fmt(k * ds.ts)]
                    + [_fmt(v) for v in ds.U[i, kk]]
                    + [_fmt(v) for v in ds.P[i, kk]]
                    + [_fmt(v) for v in ds.Y[i, k]]
                )
    meta = ds.meta.to_dict(len(ds))
    if system_id is not None:
        meta["system_id"] = system_id
    meta["n_in"], meta["n_p"], meta["n_out"] = n_in, n_p, n_out
    meta_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _channel_columns(header, prefix, required=True):
    cols = [h for h in header if h.startswith(prefix) and h[len(prefix):].isdigit()]
    expected = [f"{prefix}{j}" for j in range(len(cols))]
    if cols != expected:
        raise DatasetFormatError(f"columns {cols} are not numbered {expected}")
    if not cols and required:
        raise DatasetFormatError(f"missing column '{prefix}0'")
    return [header.index(c) for c in cols]


def load_dataset(path) -> Dataset:
    """Read a dataset written by :func:`save_dataset`."""
    path = Path(path)
    mpath = meta_path(path)
    meta_doc = json.loads(mpath.read_text()) if mpath.exists() else {}

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetFormatError(f"{path}: empty file") from None
        for col in ("traj", "k", "t"):
            if col not in header:
                raise DatasetFormatError(f"missing column '{col}'")
        ui = _channel_columns(header, "u")
        pi = _channel_columns(header, "p", required=meta_doc.get("n_p", 1) > 0)
        yi = _channel_columns(header, "y")
        it, ik, itime = header.index("traj"), header.index("k"), header.index("t")

        rows: dict[int, list] = {}
        order = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DatasetFormatError(f"row {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                traj, k = int(row[it]), int(row[ik])
                vals = [float(x) for x in row]
            except ValueError as exc:
                raise DatasetFormatError(f"row {lineno}: {exc}") from None
            order.append((traj, k))
            rows.setdefault(traj, []).append((lineno, k, vals))

    if order != sorted(order):
        raise DatasetFormatError("rows are not sorted by (traj, k)")
    trajs = sorted(rows)
    if trajs != list(range(len(trajs))):
        raise DatasetFormatError(f"trajectory ids must be 0..N-1, got {trajs[:5]}...")

    ts_meta = meta_doc.get("ts")
    U, P, Y = [], [], []
    K_ref = None
    ts_ref = ts_meta
    for traj in trajs:
        recs = rows[traj]
        ks = [r[1] for r in recs]
        if ks != list(range(len(ks))) or len(ks) < 2:
            raise DatasetFormatError(f"trajectory {traj}: k must run 0..K with K >= 1")
        K = len(ks) - 1
        if K_ref is None:
            K_ref = K
        elif K != K_ref:
            raise DatasetFormatError(f"trajectory {traj}: has K={K}, expected {K_ref}")
        times = np.array([r[2][itime] for r in recs])
        steps = np.diff(times)
        ts_traj = steps[0]
        if not ts_traj > 0 or np.any(np.abs(steps - ts_traj) > 1e-9 * abs(ts_traj)) or abs(times[0]) > 1e-12:
            raise DatasetFormatError(f"trajectory {traj}: mixed or invalid sample times (ts not constant)")
        if ts_ref is None:
            ts_ref = ts_traj
        elif abs(ts_traj - ts_ref) > 1e-9 * ts_ref:
            raise DatasetFormatError(f"trajectory {traj}: ts={ts_traj} differs from dataset ts={ts_ref}")
        arr = np.array([r[2] for r in recs])
        U.append(arr[:K][:, ui])
        P.append(arr[:K][:, pi] if pi else np.zeros((K, 0)))
        Y.append(arr[:, yi])

    law = meta_doc.get("law")
    T = meta_doc.get("T")
    if K_ref is None:
        if T is None or ts_ref is None:
            raise DatasetFormatError(f"{path}: no rows and no metadata to recover T, ts")
        meta = DatasetMeta(meta_doc.get("seed"), float(T), float(ts_ref),
                           DistributionSpec.from_dict(law) if law else None, meta_doc.get("system_id", ""))
        return Dataset.empty(meta, len(ui), len(pi), len(yi))
    if T is None:
        T = K_ref * ts_ref
    elif abs(T - K_ref * ts_ref) > 1e-9 * T:
        raise DatasetFormatError(f"metadata T={T} inconsistent with K={K_ref} samples of ts={ts_ref}")
    meta = DatasetMeta(meta_doc.get("seed"), float(T), float(ts_ref),
                       DistributionSpec.from_dict(law) if law else None, meta_doc.get("system_id", ""))
    return Dataset(np.stack(U), np.stack(P), np.stack(Y), meta)
