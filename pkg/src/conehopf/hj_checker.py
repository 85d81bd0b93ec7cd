"""Finite-difference diagnostics: equation residuals, convergence tables,
and monotone-gradient checks for candidate solutions on the cone.

Candidate functions are only Lipschitz, so every derivative is a central
difference with a one-sided disagreement test: points where forward and
backward slopes differ by more than 10 delta are flagged as kinks and
excluded from pass fractions (the equation holds on a dense set only).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ValidationError
from .free_energy import mean_free_energy
from .hopf import SolverConfig, hopf_value
from .initial_condition import InitialCondition
from .model import DiscretePrior, InteractionSpec, nonlinearity_h
from .symcone import is_psd, loewner_leq


def sym_basis(k: int) -> list[np.ndarray]:
    """Orthonormal basis of symmetric matrices under the entry-wise dot."""
    basis = []
    for i in range(k):
        e = np.zeros((k, k))
        e[i, i] = 1.0
        basis.append(e)
    for i in range(k):
        for j in range(i + 1, k):
            e = np.zeros((k, k))
            e[i, j] = e[j, i] = 1.0 / np.sqrt(2.0)
            basis.append(e)
    return basis


@dataclass(frozen=True)
class GridSpec:
    """Interior evaluation grid: t >= delta and h - delta*I PSD everywhere."""

    t_values: np.ndarray
    h_points: list
    delta: float = 1e-3

    def __post_init__(self):
        tv = np.asarray(self.t_values, dtype=float)
        if self.delta <= 0:
            raise ValidationError("delta must be positive")
        if np.any(tv < self.delta):
            raise ValidationError("grid not interior: t < delta")
        pts = [np.asarray(h, dtype=float) for h in self.h_points]
        for h in pts:
            k = h.shape[0]
            if not is_psd(h - self.delta * np.eye(k), 1e-12):
                raise ValidationError("grid not interior: h - delta*I not PSD")
        object.__setattr__(self, "t_values", tv)
        object.__setattr__(self, "h_points", pts)


@dataclass(frozen=True)
class DerivativeProbe:
    dt: float
    grad: np.ndarray
    kink: bool


def fd_partials(f: Callable, t: float, h: np.ndarray, delta: float,
                kink_threshold: Optional[float] = None) -> DerivativeProbe:
    """Central-difference (dt, grad) of f at (t, h) with kink detection."""
    if kink_threshold is None:
        kink_threshold = 10.0 * delta
    center = f(t, h)
    fp, fm = f(t + delta, h), f(t - delta, h)
    dt = (fp - fm) / (2.0 * delta)
    kink = abs((fp - center) / delta - (center - fm) / delta) > kink_threshold
    k = h.shape[0]
    grad = np.zeros((k, k))
    for b in sym_basis(k):
        gp, gm = f(t, h + delta * b), f(t, h - delta * b)
        grad += ((gp - gm) / (2.0 * delta)) * b
        if abs((gp - center) / delta - (center - gm) / delta) > kink_threshold:
            kink = True
    return DerivativeProbe(dt=float(dt), grad=grad, kink=kink)


@dataclass(frozen=True)
class ResidualPoint:
    t: float
    h: np.ndarray
    dt: float
    grad: np.ndarray
    residual: float
    residual_half: float
    kink: bool

    def as_record(self) -> dict:
        return {
            "t": self.t,
            "h": [float(v) for v in self.h.reshape(-1)],
            "dt": self.dt,
            "residual": self.residual,
            "residual_half": self.residual_half,
            "kink": self.kink,
        }


@dataclass(frozen=True)
class ResidualReport:
    points: list
    delta: float
    tolerance: float
    pass_fraction: float
    kink_fraction: float
    quantiles: dict

    def as_record(self) -> dict:
        return {
            "delta": self.delta,
            "tolerance": self.tolerance,
            "pass_fraction": self.pass_fraction,
            "kink_fraction": self.kink_fraction,
            "quantiles": self.quantiles,
            "points": [p.as_record() for p in self.points],
        }


def residual_grid(f: Callable, spec: InteractionSpec, grid: GridSpec,
                  tolerance: float = 1e-3) -> ResidualReport:
    """Equation defect dt - H(grad) of f on an interior grid.

    Kink points (one-sided slopes disagreeing beyond 10 delta in any probed
    direction) are excluded from the pass fraction; a half-step residual
    column is included so truncation error can be told from solver noise.
    """
    points = []
    for t in grid.t_values:
        for h in grid.h_points:
            probe = fd_partials(f, float(t), h, grid.delta)
            res = probe.dt - nonlinearity_h(spec, probe.grad)
            half = fd_partials(f, float(t), h, grid.delta / 2.0,
                               kink_threshold=10.0 * grid.delta)
            res_half = half.dt - nonlinearity_h(spec, half.grad)
            points.append(ResidualPoint(
                t=float(t), h=h, dt=probe.dt, grad=probe.grad,
                residual=float(res), residual_half=float(res_half),
                kink=probe.kink,
            ))
    clean = np.array([abs(p.residual) for p in points if not p.kink])
    n_total = len(points)
    kink_fraction = 1.0 - clean.shape[0] / n_total if n_total else 0.0
    if clean.shape[0]:
        pass_fraction = float((clean <= tolerance).mean())
        quantiles = {
            "q50": float(np.quantile(clean, 0.5)),
            "q90": float(np.quantile(clean, 0.9)),
            "max": float(clean.max()),
        }
    else:
        pass_fraction = 0.0
        quantiles = {"q50": float("nan"), "q90": float("nan"),
                     "max": float("nan")}
    return ResidualReport(points=points, delta=grid.delta, tolerance=tolerance,
                          pass_fraction=pass_fraction,
                          kink_fraction=kink_fraction, quantiles=quantiles)


@dataclass(frozen=True)
class ConvergenceRow:
    n: int
    estimate: float
    std_error: float
    hopf: float
    gap: float

    def as_record(self) -> dict:
        return {"n": self.n, "estimate": self.estimate,
                "std_error": self.std_error, "hopf": self.hopf,
                "gap": self.gap}


@dataclass(frozen=True)
class ConvergenceReport:
    rows: list
    t: float
    h: np.ndarray
    hopf_value: float
    monotone_fraction: float
    first_last_significant: bool

    def as_record(self) -> dict:
        return {
            "t": self.t,
            "h": [float(v) for v in self.h.reshape(-1)],
            "hopf_value": self.hopf_value,
            "monotone_fraction": self.monotone_fraction,
            "first_last_significant": self.first_last_significant,
            "rows": [r.as_record() for r in self.rows],
        }


def convergence_report(spec: InteractionSpec, prior: DiscretePrior, t: float, h,
                       n_list: list[int], n_disorder: int, seed: int,
                       cfg: SolverConfig = SolverConfig(), threads: int = 1,
                       ic: Optional[InitialCondition] = None) -> ConvergenceReport:
    """Finite-size estimates against the variational limit over a list of N.

    The trend statistic is the fraction of consecutive |gap| pairs that do
    not increase beyond combined 3-sigma noise, plus a first-vs-last
    significance flag.
    """
    h = np.asarray(h, dtype=float)
    if ic is None:
        mode = "gauss-hermite" if prior.k <= 3 else "monte-carlo"
        ic = InitialCondition(prior=prior, mode=mode)
    limit = hopf_value(ic, spec, t, h, cfg).value
    rows = []
    for n in n_list:
        est = mean_free_energy(spec, prior, n, t, h, n_disorder, seed,
                               threads=threads)
        rows.append(ConvergenceRow(n=n, estimate=est.value,
                                   std_error=est.std_error, hopf=limit,
                                   gap=est.value - limit))
    ok_pairs = 0
    comparisons = 0
    for a, b in zip(rows, rows[1:]):
        comparisons += 1
        slack = 3.0 * np.hypot(a.std_error, b.std_error)
        if abs(b.gap) <= abs(a.gap) + slack:
            ok_pairs += 1
    first, last = rows[0], rows[-1]
    significant = (abs(first.gap) - abs(last.gap)
                   > 3.0 * np.hypot(first.std_error, last.std_error))
    return ConvergenceReport(
        rows=rows, t=t, h=h, hopf_value=limit,
        monotone_fraction=ok_pairs / comparisons if comparisons else 1.0,
        first_last_significant=bool(significant),
    )


@dataclass(frozen=True)
class PairCheck:
    ok: bool
    kink: bool
    dt_low: float
    dt_high: float


@dataclass(frozen=True)
class MonotoneGradientReport:
    checks: list
    passed: bool
    n_kink: int


def monotone_gradient_check(f: Callable, pairs: list,
                            delta: float = 1e-3) -> MonotoneGradientReport:
    """(dt, grad) ordering of f along ordered pairs of (t, h) points.

    Each pair must be ordered (t rises, h rises in the Loewner order); the
    finite-difference derivatives must then be ordered within 10 delta at
    non-kink points.
    """
    tol = 10.0 * delta
    checks = []
    for (t1, h1), (t2, h2) in pairs:
        h1 = np.asarray(h1, dtype=float)
        h2 = np.asarray(h2, dtype=float)
        if t2 < t1 or not loewner_leq(h1, h2, 1e-10):
            raise ValidationError("pair is not ordered")
        p1 = fd_partials(f, t1, h1, delta)
        p2 = fd_partials(f, t2, h2, delta)
        kink = p1.kink or p2.kink
        ok = (p1.dt <= p2.dt + tol) and loewner_leq(p1.grad, p2.grad, tol)
        checks.append(PairCheck(ok=bool(ok), kink=kink,
                                dt_low=p1.dt, dt_high=p2.dt))
    active = [c for c in checks if not c.kink]
    passed = all(c.ok for c in active) and bool(active)
    return MonotoneGradientReport(checks=checks, passed=passed,
                                  n_kink=sum(c.kink for c in checks))
