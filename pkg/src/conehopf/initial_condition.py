"""Single-site free energy psi(h), its gradient, and 1-D convex conjugation.

psi(h) is the expected log of a finite sum over prior atoms against a
Gaussian: the atom sum is exact, the Gaussian expectation is tensorized
Gauss-Hermite quadrature (K <= 3) or seeded Monte Carlo.  The gradient is
the Gibbs-bracket identity E[<x>^T <x>], which is PSD by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from .errors import NotPsdError, RadiusExhaustedError, ValidationError
from .model import DiscretePrior
from .symcone import eig_sym, sqrt_psd

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
_Z_CHUNK = 2**14


def _z_rule(k: int, nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Tensorized probabilists' Gauss-Hermite rule for E over N(0, I_K)."""
    x, w = hermegauss(nodes)
    w = w / np.sqrt(2.0 * np.pi)
    pts = np.array(np.meshgrid(*([x] * k), indexing="ij")).reshape(k, -1).T
    wts = np.ones(pts.shape[0])
    for axis in range(k):
        grid = np.array(np.meshgrid(*([w] * k), indexing="ij"))[axis].reshape(-1)
        wts *= grid
    return pts, wts


@dataclass
class InitialCondition:
    """Evaluator for the decoupled (t = 0) free energy of a discrete prior.

    mode is "gauss-hermite" (exact to quadrature accuracy, K <= 3) or
    "monte-carlo" (seeded, with a reported standard error).  Evaluations
    project slightly off-cone queries back onto the PSD cone and record the
    projection distance instead of failing, so optimizers can probe freely.
    """

    prior: DiscretePrior
    mode: str = "gauss-hermite"
    gh_nodes: int = 64
    mc_samples: int = 20000
    mc_seed: int = 0
    cache_enabled: bool = True
    last_projection_distance: float = 0.0
    _value_cache: dict = field(default_factory=dict, repr=False)
    _grad_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.mode not in ("gauss-hermite", "monte-carlo"):
            raise ValidationError(f"unknown eval mode {self.mode!r}")
        if self.mode == "gauss-hermite" and self.prior.k > 3:
            raise ValidationError("quadrature mode supports K <= 3 only")

    @property
    def lipschitz(self) -> float:
        """Bound on |grad psi|: the largest squared atom norm."""
        return float((self.prior.atoms**2).sum(axis=1).max())

    def _z_points(self) -> tuple[np.ndarray, np.ndarray]:
        k = self.prior.k
        if self.mode == "gauss-hermite":
            return _z_rule(k, self.gh_nodes)
        key = np.array([np.uint64(self.mc_seed & (2**64 - 1)), np.uint64(7)])
        rng = np.random.Generator(np.random.Philox(key=key))
        pts = rng.standard_normal((self.mc_samples, k))
        return pts, np.full(self.mc_samples, 1.0 / self.mc_samples)

    def value(self, h) -> float:
        return psi(self, h)

    def grad(self, h) -> np.ndarray:
        return grad_psi(self, h)


def _cone_query(ic: InitialCondition, h) -> np.ndarray:
    """Project a query onto the cone, tracking how far outside it was."""
    a = np.asarray(h, dtype=float)
    a = 0.5 * (a + a.T)
    dec = eig_sym(a)
    scale = 1.0 + np.abs(dec.values).max()
    if dec.values[0] < -1e-6 * scale:
        raise NotPsdError(f"h is not PSD: min eigenvalue {dec.values[0]:.3e}")
    neg = np.minimum(dec.values, 0.0)
    ic.last_projection_distance = float(np.sqrt((neg**2).sum()))
    if ic.last_projection_distance == 0.0:
        return a
    vals = np.maximum(dec.values, 0.0)
    return (dec.vectors * vals) @ dec.vectors.T


def _eval(ic: InitialCondition, h: np.ndarray, want_grad: bool):
    """Shared core: per-z-point values and (optionally) the bracket gradient."""
    prior = ic.prior
    atoms, weights = prior.atoms, prior.weights
    logw = np.log(weights)
    sqrt2h = sqrt_psd(2.0 * h)
    pair = 2.0 * atoms @ h @ atoms.T            # (a, b): 2 x_a h X_b^T
    self_term = np.einsum("ak,kl,al->a", atoms, h, atoms)
    v = atoms @ sqrt2h
    zpts, zwts = ic._z_points()
    n_z = zpts.shape[0]
    col_values = np.empty(n_z)
    grad = np.zeros((prior.k, prior.k))
    base = logw[:, None] + pair - self_term[:, None]   # (a, b)
    for start in range(0, n_z, _Z_CHUNK):
        stop = min(start + _Z_CHUNK, n_z)
        tz = v @ zpts[start:stop].T                    # (a, g)
        sc = base[:, :, None] + tz[:, None, :]         # (a, b, g)
        mx = sc.max(axis=0)
        lse = mx + np.log(np.exp(sc - mx).sum(axis=0))  # (b, g)
        col_values[start:stop] = weights @ lse
        if want_grad:
            omega = np.exp(sc - lse[None])
            xb = np.einsum("abg,ak->bgk", omega, atoms, optimize=True)
            grad += np.einsum(
                "b,g,bgk,bgl->kl", weights, zwts[start:stop], xb, xb,
                optimize=True,
            )
    return col_values, zwts, grad


def psi_with_error(ic: InitialCondition, h) -> tuple[float, float]:
    """psi(h) plus its Monte Carlo standard error (zero in quadrature mode)."""
    hq = _cone_query(ic, h)
    key = hq.tobytes()
    if ic.cache_enabled and key in ic._value_cache:
        return ic._value_cache[key]
    col, zwts, _ = _eval(ic, hq, want_grad=False)
    value = float(col @ zwts)
    se = 0.0
    if ic.mode == "monte-carlo" and col.shape[0] > 1:
        se = float(col.std(ddof=1) / np.sqrt(col.shape[0]))
    if ic.cache_enabled:
        ic._value_cache[key] = (value, se)
    return value, se


def psi(ic: InitialCondition, h) -> float:
    """Single-site free energy at PSD h; psi(0) = 0 exactly."""
    return psi_with_error(ic, h)[0]


def grad_psi(ic: InitialCondition, h) -> np.ndarray:
    """Gradient of psi under the entry-wise inner product: E[<x>^T <x>]."""
    hq = _cone_query(ic, h)
    key = hq.tobytes()
    if ic.cache_enabled and key in ic._grad_cache:
        return ic._grad_cache[key].copy()
    _, _, grad = _eval(ic, hq, want_grad=True)
    grad = 0.5 * (grad + grad.T)
    if ic.cache_enabled:
        ic._grad_cache[key] = grad.copy()
    return grad


@dataclass
class ScalarConvexFunction:
    """A convex nondecreasing function on [0, inf) with a declared slope bound."""

    fn: Callable[[float], float]
    lipschitz: float
    tol: float = 1e-9
    deriv: Optional[Callable[[float], float]] = None

    def __call__(self, x: float) -> float:
        return self.fn(x)

    def slope(self, x: float) -> float:
        if self.deriv is not None:
            return self.deriv(x)
        step = 1e-6 * (1.0 + abs(x))
        lo = max(0.0, x - step)
        return (self.fn(x + step) - self.fn(lo)) / (x + step - lo)


def scalar_layer(atoms, weights, nodes: int = 64) -> ScalarConvexFunction:
    """The one-coordinate psi of a scalar prior, as a ScalarConvexFunction."""
    prior = DiscretePrior(atoms=np.asarray(atoms, dtype=float).reshape(-1, 1),
                          weights=np.asarray(weights, dtype=float))
    ic = InitialCondition(prior=prior, gh_nodes=nodes)
    return ScalarConvexFunction(
        fn=lambda c: psi(ic, np.array([[float(c)]])),
        lipschitz=ic.lipschitz,
        deriv=lambda c: float(grad_psi(ic, np.array([[float(c)]]))[0, 0]),
    )


def _golden_max(g: Callable[[float], float], lo: float, hi: float,
                xtol: float) -> tuple[float, float]:
    """Golden-section maximizer of a unimodal g on [lo, hi]."""
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    gc, gd = g(c), g(d)
    while (b - a) > xtol:
        if gc >= gd:
            b, d, gd = d, c, gc
            c = b - _GOLDEN * (b - a)
            gc = g(c)
        else:
            a, c, gc = c, d, gd
            d = a + _GOLDEN * (b - a)
            gd = g(d)
    x = 0.5 * (a + b)
    return x, g(x)


def conjugate_1d_with_argmax(f: ScalarConvexFunction, y: float,
                             radius: Optional[float] = None,
                             xtol: float = 1e-8) -> tuple[float, float]:
    """sup over x in [0, R] of x*y - f(x), with the maximizer.

    The objective is concave, so golden section finds the global maximum.
    A maximizer at the right edge means the radius was too small.
    """
    if y < 0:
        raise ValidationError("conjugate_1d requires y >= 0")
    if not np.isfinite(f.lipschitz):
        raise ValidationError("conjugate_1d requires a finite Lipschitz bound")
    r = radius if radius is not None else 10.0 * (1.0 + f.lipschitz)
    g = lambda x: x * y - f(x)
    x_star, val = _golden_max(g, 0.0, r, xtol)
    if x_star >= r - 10.0 * xtol * (1.0 + r) and g(r) >= g(r * (1.0 - 1e-9)):
        raise RadiusExhaustedError(
            f"conjugate supremum at the search radius {r:.3g} for y = {y:.6g}"
        )
    # Endpoint x = 0 can beat the interior bracket when the maximand is
    # decreasing from the start.
    v0 = g(0.0)
    if v0 >= val:
        return v0, 0.0
    return val, x_star


def conjugate_1d(f: ScalarConvexFunction, y: float,
                 radius: Optional[float] = None, xtol: float = 1e-8) -> float:
    """Monotone convex conjugate sup_{x >= 0} (x*y - f(x)) on a bounded range."""
    return conjugate_1d_with_argmax(f, y, radius, xtol)[0]
