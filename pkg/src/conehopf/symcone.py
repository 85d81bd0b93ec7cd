"""Linear algebra on real symmetric matrices and the positive semi-definite cone.

Everything here is dependency-light and sized for small matrices (K <= 6):
eigendecomposition is a cyclic Jacobi iteration, norms are Frobenius, and
cone membership is always tested against an explicit tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InternalError, NotPsdError, ValidationError

# Default tolerance for every cone-membership test in the package: well above
# Jacobi round-off, well below any model scale.
PSD_TOL = 1e-10

_JACOBI_THRESHOLD = 1e-12


def _as_sym(m, name: str = "matrix") -> np.ndarray:
    """Validate and return a square, finite, symmetric float array."""
    a = np.asarray(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"{name} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{name} has non-finite entries")
    scale = 1.0 + np.abs(a).max(initial=0.0)
    if np.abs(a - a.T).max(initial=0.0) > 1e-8 * scale:
        raise ValidationError(f"{name} is not symmetric")
    return 0.5 * (a + a.T)


def pack_upper(m: np.ndarray) -> np.ndarray:
    """Pack the upper triangle of a symmetric matrix, row-major."""
    a = np.asarray(m, dtype=float)
    k = a.shape[0]
    iu = np.triu_indices(k)
    return a[iu].copy()


def unpack_upper(entries: np.ndarray, dim: int) -> np.ndarray:
    """Rebuild the full symmetric matrix from packed upper-triangle entries."""
    v = np.asarray(entries, dtype=float)
    if v.shape != (dim * (dim + 1) // 2,):
        raise ValidationError(
            f"packed entries must have length {dim * (dim + 1) // 2}, got {v.shape}"
        )
    m = np.zeros((dim, dim))
    iu = np.triu_indices(dim)
    m[iu] = v
    m.T[iu] = v
    return m


@dataclass(frozen=True)
class SymMatrix:
    """A K x K real symmetric matrix stored as its packed upper triangle."""

    dim: int
    entries: np.ndarray

    def __post_init__(self):
        if self.dim < 1:
            raise ValidationError("dim must be a positive integer")
        v = np.asarray(self.entries, dtype=float)
        if v.shape != (self.dim * (self.dim + 1) // 2,):
            raise ValidationError(
                f"expected {self.dim * (self.dim + 1) // 2} packed entries, "
                f"got shape {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise ValidationError("entries must be finite")
        object.__setattr__(self, "entries", v)

    @classmethod
    def from_full(cls, m) -> "SymMatrix":
        a = _as_sym(m, "SymMatrix input")
        return cls(dim=a.shape[0], entries=pack_upper(a))

    def full(self) -> np.ndarray:
        return unpack_upper(self.entries, self.dim)


@dataclass(frozen=True)
class EigenDecomposition:
    """Eigenvalues sorted ascending; eigenvector i is column i of `vectors`."""

    values: np.ndarray
    vectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.vectors * self.values) @ self.vectors.T


def eig_sym(m) -> EigenDecomposition:
    """Eigendecompose a symmetric matrix by cyclic Jacobi rotations.

    Deterministic for a fixed input; converges for every symmetric matrix.
    The off-diagonal threshold is 1e-12 relative to the input scale.
    """
    a = _as_sym(m, "eig_sym input")
    k = a.shape[0]
    v = np.eye(k)
    if k == 1:
        return EigenDecomposition(values=a[0].copy(), vectors=v)
    scale = 1.0 + np.sqrt((a * a).sum())
    max_sweeps = 100 * k * k
    for _ in range(max_sweeps):
        off = np.sqrt(2.0 * (np.triu(a, 1) ** 2).sum())
        if off <= _JACOBI_THRESHOLD * scale:
            break
        for p in range(k - 1):
            for q in range(p + 1, k):
                apq = a[p, q]
                if abs(apq) <= _JACOBI_THRESHOLD * scale / (k * k):
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(tau) if tau != 0 else 1.0
                t = t / (abs(tau) + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                rot = np.eye(k)
                rot[p, p] = rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
                a = 0.5 * (a + a.T)
                v = v @ rot
    else:
        raise InternalError("Jacobi iteration cap exceeded")
    values = np.diag(a).copy()
    order = np.argsort(values, kind="stable")
    return EigenDecomposition(values=values[order], vectors=v[:, order])


def is_psd(m, tol: float = PSD_TOL) -> bool:
    """True iff the minimum eigenvalue is >= -tol."""
    if tol < 0:
        raise ValidationError("tol must be nonnegative")
    return eig_sym(m).values[0] >= -tol


def loewner_leq(a, b, tol: float = PSD_TOL) -> bool:
    """Loewner order test: a <= b iff b - a is PSD within tol."""
    fa = _as_sym(a, "loewner_leq lhs")
    fb = _as_sym(b, "loewner_leq rhs")
    if fa.shape != fb.shape:
        raise ValidationError(f"dimension mismatch: {fa.shape} vs {fb.shape}")
    return is_psd(fb - fa, tol)


def psd_project(m) -> np.ndarray:
    """Frobenius-nearest PSD matrix: clip negative eigenvalues to zero."""
    dec = eig_sym(m)
    vals = np.maximum(dec.values, 0.0)
    return (dec.vectors * vals) @ dec.vectors.T


def sqrt_psd(m) -> np.ndarray:
    """Symmetric square root of a PSD matrix.

    Eigenvalues within tolerance below zero are clipped to zero first;
    genuinely negative eigenvalues raise NotPsdError.
    """
    a = _as_sym(m, "sqrt_psd input")
    dec = eig_sym(a)
    scale = 1.0 + np.abs(dec.values).max()
    if dec.values[0] < -PSD_TOL * scale:
        raise NotPsdError(
            f"matrix is not PSD: min eigenvalue {dec.values[0]:.3e}"
        )
    vals = np.sqrt(np.maximum(dec.values, 0.0))
    return (dec.vectors * vals) @ dec.vectors.T


def frobenius_dot(a, b) -> float:
    """Entry-wise inner product of two same-shape (not necessarily square) arrays."""
    fa = np.asarray(a, dtype=float)
    fb = np.asarray(b, dtype=float)
    if fa.shape != fb.shape:
        raise ValidationError(f"shape mismatch: {fa.shape} vs {fb.shape}")
    return float((fa * fb).sum())


def frobenius_norm(a) -> float:
    fa = np.asarray(a, dtype=float)
    return float(np.sqrt((fa * fa).sum()))


def condition_number(h) -> float:
    """|h| * |h^-1| in Frobenius norms for positive definite h, else +inf."""
    a = _as_sym(h, "condition_number input")
    dec = eig_sym(a)
    scale = 1.0 + np.abs(dec.values).max()
    if dec.values[0] < -PSD_TOL * scale:
        raise NotPsdError("condition_number requires a PSD matrix")
    if dec.values[0] <= 0.0:
        return float("inf")
    return float(
        np.sqrt((dec.values**2).sum()) * np.sqrt((dec.values**-2).sum())
    )
