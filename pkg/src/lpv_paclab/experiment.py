"""End-to-end identification experiment, Monte Carlo coverage check of the PAC
bound, and deterministic artifacts (CSV, JSON, SVG)."""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.stats import beta

from .errors import ConfigError, LpvError
from .ident import identify
from .lpv_core import THETA_STAR, ThetaFamily, theta_system
from .pac import LossSpec, PacConfig, empirical_risk, loss_batch, model_outputs, theorem1_bound
from .signals import DistributionSpec, generate_dataset, input_energy_envelope, paper_law
from .stability_h2 import check_family

__all__ = [
    "ExperimentConfig",
    "ExperimentRow",
    "ExperimentResult",
    "CoverageReport",
    "derive_seed",
    "run_experiment",
    "write_artifacts",
    "default_panel",
    "validate_pac_montecarlo",
    "emit_plot",
]

PAPER_N_GRID = (200, 500, 1000, 2000, 5000, 10000)


def derive_seed(seed: int, *key: int) -> int:
    """Deterministic child seed of ``seed`` for the integer path ``key``."""
    return int(np.random.SeedSequence([int(seed), *map(int, key)]).generate_state(1)[0])


@dataclass(frozen=True)
class ExperimentConfig:
    theta_star: tuple = THETA_STAR
    lam: float = 1.2
    c_E: float = 2.0
    delta: float = 0.05
    N_grid: tuple = PAPER_N_GRID
    M: int = 10_000
    T: float = 0.45
    ts: float = 0.01
    law: DistributionSpec = field(default_factory=paper_law)
    seeds: dict = field(default_factory=lambda: {"data": 1, "validation": 2, "montecarlo": 3})
    method: str = "euler"
    loss: LossSpec = field(default_factory=LossSpec)

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ConfigError(f"delta must lie in (0, 1), got {self.delta}")
        grid = tuple(int(n) for n in self.N_grid)
        if not grid or any(n < 1 for n in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError(f"N_grid must be a non-empty strictly ascending list of positive counts, got {grid}")
        if self.M < 1:
            raise ConfigError(f"M must be >= 1, got {self.M}")
        missing = {"data", "validation", "montecarlo"} - set(self.seeds)
        if missing:
            raise ConfigError(f"seeds lack {sorted(missing)}")
        object.__setattr__(self, "N_grid", grid)
        object.__setattr__(self, "theta_star", tuple(float(v) for v in self.theta_star))
        object.__setattr__(self, "seeds", {k: int(v) for k, v in self.seeds.items()})

    def replication(self, r: int) -> "ExperimentConfig":
        """Same configuration with every seed replaced by a child seed for replication ``r``."""
        return replace(self, seeds={k: derive_seed(v, 1_000_003, r) for k, v in self.seeds.items()})

    @property
    def L_u(self) -> float:
        return input_energy_envelope(self.law, self.T)

    def to_dict(self) -> dict:
        return {
            "theta_star": list(self.theta_star),
            "lambda": self.lam,
            "c_E": self.c_E,
            "delta": self.delta,
            "N_grid": list(self.N_grid),
            "M": self.M,
            "T": self.T,
            "ts": self.ts,
            "law": self.law.to_dict(),
            "seeds": dict(self.seeds),
            "method": self.method,
            "loss": {"kind": self.loss.kind, "c_max": self.loss.c_max},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {"theta_star", "lambda", "c_E", "delta", "N_grid", "M", "T", "ts", "law", "seeds", "method", "loss"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown configuration keys {sorted(unknown)}")
        kw = {}
        for key, name in (("theta_star", "theta_star"), ("lambda", "lam"), ("c_E", "c_E"), ("delta", "delta"),
                          ("N_grid", "N_grid"), ("M", "M"), ("T", "T"), ("ts", "ts"), ("method", "method")):
            if key in d:
                kw[name] = d[key]
        if "law" in d:
            kw["law"] = DistributionSpec.from_dict(d["law"])
        if "seeds" in d:
            kw["seeds"] = {**cls().seeds, **d["seeds"]}
        if "loss" in d:
            kw["loss"] = LossSpec(d["loss"].get("kind", "absolute"), d["loss"].get("c_max"))
        try:
            return cls(**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid experiment configuration: {exc}") from exc

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc


@dataclass(frozen=True)
class ExperimentRow:
    N: int
    theta_hat: tuple
    empirical_risk_train: float
    empirical_risk_validation: float
    pac_bound: float
    member: bool
    status: str = "ok"

    @property
    def estimated_error(self) -> float:
        return self.empirical_risk_train + self.pac_bound

    def to_dict(self) -> dict:
        return {
            "N": self.N,
            "theta_hat": list(self.theta_hat),
            "empirical_risk_train": self.empirical_risk_train,
            "empirical_risk_validation": self.empirical_risk_validation,
            "pac_bound": self.pac_bound,
            "estimated_error": self.estimated_error,
            "member": self.member,
            "status": self.status,
        }


@dataclass(frozen=True)
class ExperimentResult:
    rows: tuple
    report: dict
    csv_text: str
    svg_text: str

    @property
    def json_text(self) -> str:
        return json.dumps(self.report, indent=2, sort_keys=True) + "\n"


def _nan_row(N, status):
    nan = float("nan")
    return ExperimentRow(N, (nan, nan, nan), nan, nan, nan, False, status)


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _rows_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["N", "theta1", "theta2", "theta3", "empirical_risk_train", "empirical_risk_validation",
                "pac_bound", "estimated_error", "member", "status"])
    for r in rows:
        w.writerow([r.N, *map(_fmt, r.theta_hat), _fmt(r.empirical_risk_train),
                    _fmt(r.empirical_risk_validation), _fmt(r.pac_bound), _fmt(r.estimated_error),
                    int(r.member), r.status])
    return buf.getvalue()


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Identify the family from training sets of every size in ``cfg.N_grid``.

    The true risk is approximated by the empirical risk on one shared
    validation set of ``cfg.M`` trajectories.  ``c_y`` is the largest
    validation output magnitude at ``T`` and is therefore flagged as
    estimated from data; ``L_u`` is the worst case of the input law.
    """
    truth = theta_system(cfg.theta_star)
    val = generate_dataset(cfg.M, cfg.law, cfg.T, cfg.ts, truth, cfg.seeds["validation"], method=cfg.method)
    c_y = float(np.max(np.linalg.norm(val.y_T, axis=1)))
    base = PacConfig(cfg.loss.lipschitz, cfg.L_u, c_y, cfg.c_E, truth.n_p, cfg.delta, 1,
                     {"L_u": "declared", "c_y": "estimated-from-data"})
    rows = []
    for j, N in enumerate(cfg.N_grid):
        try:
            train = generate_dataset(N, cfg.law, cfg.T, cfg.ts, truth, derive_seed(cfg.seeds["data"], j),
                                     method=cfg.method)
            est = identify(train, cfg.ts, cfg.lam, cfg.c_E)
            bound = theorem1_bound(base.with_N(N)).bound
            rows.append(ExperimentRow(
                N, tuple(float(v) for v in est.theta),
                empirical_risk(cfg.loss, est.system, train, cfg.method),
                empirical_risk(cfg.loss, est.system, val, cfg.method),
                bound, est.membership.member,
                "ok" if est.membership.member else f"non-member: {est.membership.reason}",
            ))
        except LpvError as exc:
            rows.append(_nan_row(N, f"failed: {exc}"))
    rows = tuple(rows)
    report = {
        "config": cfg.to_dict(),
        "constants": {**base.to_dict(), "N": None, "c": base.c, "heuristic": base.heuristic},
        "truth_membership": check_family(ThetaFamily(cfg.lam, cfg.c_E), cfg.theta_star).to_dict(),
        "identification": {"sign_convention": "derived", "k_eval": round(cfg.T / cfg.ts)},
        "rows": [r.to_dict() for r in rows],
        "true_loss_proxy": f"empirical risk on {cfg.M} validation trajectories",
    }
    ok = [r for r in rows if r.status == "ok" or r.status.startswith("non-member")]
    if ok:
        report["bound_below_first_validation"] = bool(ok[-1].estimated_error < ok[0].empirical_risk_validation)
    return ExperimentResult(rows, _jsonable(report), _rows_csv(rows), emit_plot(rows))


def write_artifacts(result: ExperimentResult, out_dir) -> dict:
    """Write ``results.csv``, ``report.json`` and ``figure.svg`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out / "results.csv", "json": out / "report.json", "svg": out / "figure.svg"}
    paths["csv"].write_text(result.csv_text)
    paths["json"].write_text(result.json_text)
    paths["svg"].write_text(result.svg_text)
    return paths


def default_panel(theta_star=THETA_STAR) -> list:
    """A 27-point grid of parameter vectors around ``theta_star``."""
    t1, t2, t3 = theta_star
    return [(t1 * a, t2 * b, t3 * c)
            for a in (0.8, 1.0, 1.2) for b in (1.5, 1.0, 0.5) for c in (0.4, 0.6, 0.7)]


@dataclass(frozen=True)
class CoverageReport:
    trials: int
    failures: int
    N: int
    delta: float
    bound: float
    panel: tuple
    excluded: tuple
    max_gap: float

    @property
    def failure_fraction(self) -> float:
        return self.failures / self.trials

    @property
    def clopper_pearson(self) -> tuple:
        """Two-sided 95% interval for the failure probability."""
        k, n = self.failures, self.trials
        lo = 0.0 if k == 0 else float(beta.ppf(0.025, k, n - k + 1))
        hi = 1.0 if k == n else float(beta.ppf(0.975, k + 1, n - k))
        return lo, hi

    @property
    def passed(self) -> bool:
        return self.failure_fraction <= self.delta

    def to_dict(self) -> dict:
        return {
            "trials": self.trials,
            "failures": self.failures,
            "failure_fraction": self.failure_fraction,
            "clopper_pearson_95": list(self.clopper_pearson),
            "N": self.N,
            "delta": self.delta,
            "bound": self.bound,
            "max_gap": self.max_gap,
            "panel": [list(t) for t in self.panel],
            "excluded": [list(t) for t in self.excluded],
            "passed": self.passed,
        }


def validate_pac_montecarlo(cfg: ExperimentConfig, trials: int, N: int = 200, panel=None,
                            bound_scale: float = 1.0) -> CoverageReport:
    """Monte Carlo check of the uniform gap bound on a finite panel of member systems.

    Each trial draws a fresh training set of size ``N``; the trial fails when
    any panel member's validation risk exceeds its training risk by more than
    ``bound_scale * R(delta)/sqrt(N)``.  A finite panel only tests a necessary
    condition of the uniform statement.
    """
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    family = ThetaFamily(cfg.lam, cfg.c_E)
    members, excluded = [], []
    for theta in (default_panel(cfg.theta_star) if panel is None else panel):
        (members if family.contains(theta) else excluded).append(tuple(float(v) for v in theta))
    if excluded:
        warnings.warn(f"{len(excluded)} panel systems failed membership and were excluded", stacklevel=2)
    if not members:
        raise ConfigError("the Monte Carlo panel has no member systems")
    truth = theta_system(cfg.theta_star)
    val = generate_dataset(cfg.M, cfg.law, cfg.T, cfg.ts, truth, cfg.seeds["validation"], method=cfg.method)
    c_y = float(np.max(np.linalg.norm(val.y_T, axis=1)))
    pac = PacConfig(cfg.loss.lipschitz, cfg.L_u, c_y, cfg.c_E, truth.n_p, cfg.delta, N,
                    {"L_u": "declared", "c_y": "estimated-from-data"})
    bound = bound_scale * theorem1_bound(pac).bound
    systems = [theta_system(t) for t in members]
    val_risk = np.array([empirical_risk(cfg.loss, s, val, cfg.method) for s in systems])
    failures, max_gap = 0, -math.inf
    for t in range(trials):
        train = generate_dataset(N, cfg.law, cfg.T, cfg.ts, truth, derive_seed(cfg.seeds["montecarlo"], t),
                                 method=cfg.method)
        train_risk = np.array([np.mean(loss_batch(cfg.loss, model_outputs(s, train, cfg.method), train.y_T))
                               for s in systems])
        gap = float(np.max(val_risk - train_risk))
        max_gap = max(max_gap, gap)
        failures += gap > bound
    return CoverageReport(trials, int(failures), N, cfg.delta, bound, tuple(members), tuple(excluded), max_gap)


_W, _H = 640, 400
_L, _R, _T, _B = 70, 20, 40, 60


def _num(x: float) -> str:
    return f"{x:.2f}"


def emit_plot(rows) -> str:
    """Deterministic SVG of estimated error and validation error against ``N`` (log axis)."""
    rows = [r for r in rows if math.isfinite(r.estimated_error) and math.isfinite(r.empirical_risk_validation)]
    if not rows:
        raise ConfigError("nothing to plot")
    xs = [math.log10(r.N) for r in rows]
    series = [("estimated error", "#1f77b4", [r.estimated_error for r in rows]),
              ("validation error", "#d62728", [r.empirical_risk_validation for r in rows])]
    ys = [v for _, _, vals in series for v in vals]
    x0, x1 = min(xs), max(xs)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    y0, y1 = min(0.0, min(ys)), max(ys)
    if y1 == y0:
        y1 = y0 + 1.0
    y1 *= 1.05

    def px(x):
        return _L + (x - x0) / (x1 - x0) * (_W - _L - _R)

    def py(y):
        return _H - _B - (y - y0) / (y1 - y0) * (_H - _T - _B)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
           f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
           f'<line x1="{_L}" y1="{_H - _B}" x2="{_W - _R}" y2="{_H - _B}" stroke="black"/>',
           f'<line x1="{_L}" y1="{_T}" x2="{_L}" y2="{_H - _B}" stroke="black"/>']
    for r, x in zip(rows, xs):
        out.append(f'<line x1="{_num(px(x))}" y1="{_H - _B}" x2="{_num(px(x))}" y2="{_H - _B + 5}" stroke="black"/>')
        out.append(f'<text x="{_num(px(x))}" y="{_H - _B + 18}" font-size="11" text-anchor="middle">{r.N}</text>')
    for i in range(5):
        y = y0 + (y1 - y0) * i / 4
        out.append(f'<text x="{_L - 6}" y="{_num(py(y) + 4)}" font-size="11" text-anchor="end">{y:.3g}</text>')
    out.append(f'<text x="{(_L + _W - _R) // 2}" y="{_H - 15}" font-size="13" text-anchor="middle">N (log scale)</text>')
    out.append(f'<text x="18" y="{(_T + _H - _B) // 2}" font-size="13" text-anchor="middle" '
               f'transform="rotate(-90 18 {(_T + _H - _B) // 2})">error</text>')
    for k, (label, color, vals) in enumerate(series):
        pts = " ".join(f"{_num(px(x))},{_num(py(v))}" for x, v in zip(xs, vals))
        if len(vals) > 1:
            out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        for x, v in zip(xs, vals):
            out.append(f'<circle cx="{_num(px(x))}" cy="{_num(py(v))}" r="3" fill="{color}"/>')
        ly = _T + 5 + 18 * k
        out.append(f'<line x1="{_W - 190}" y1="{ly}" x2="{_W - 165}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{_W - 160}" y="{ly + 4}" font-size="12">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
