"""Model data and Hamiltonian for the finite-rank tensor observation channel.

The fixed data is (K, L, p, A): a signal matrix X with N rows in R^K is
observed through the order-p interaction x -> x^(tensor p) A plus Gaussian
noise, and through a linear channel controlled by a PSD matrix h.  The
polynomial q -> (A A^T) . q^(tensor p) on K x K matrices drives everything:
it reduces every signal-signal tensor contraction to a K x K overlap, which
is what makes exact enumeration at desk scale possible.
"""

from __future__ import annotations

import string
from dataclasses import dataclass
from pathlib import Path

import numpy as np

try:
    import tomllib as _toml
except ImportError:  # Python < 3.11
    import tomli as _toml

from .errors import CapExceededError, NotPsdError, ValidationError
from .symcone import PSD_TOL, is_psd, sqrt_psd

# Desk-scale guards: A may not exceed 10^6 rows; the explicit noise tensor W
# may not exceed 2^24 entries; the naive tensor path is capped separately.
MAX_A_ROWS = 10**6
MAX_W_ENTRIES = 2**24
MAX_NAIVE_ENTRIES = 10**6

_MODE_LETTERS = string.ascii_lowercase[3:]  # batch/contracted letters reserved


@dataclass(frozen=True)
class InteractionSpec:
    """Fixed model data: dimensions (K, L, p) and interaction matrix A.

    A has K^p rows indexed by the base-K multi-index (j_1, ..., j_p) in
    lexicographic order with j_1 most significant, and L columns.
    """

    k: int
    l: int
    p: int
    a: np.ndarray

    def __post_init__(self):
        for name in ("k", "l", "p"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"InteractionSpec.{name} must be >= 1")
        if self.k**self.p > MAX_A_ROWS:
            raise CapExceededError(
                f"K^p = {self.k ** self.p} exceeds the desk-scale cap {MAX_A_ROWS}"
            )
        a = np.asarray(self.a, dtype=float)
        if a.shape != (self.k**self.p, self.l):
            raise ValidationError(
                f"InteractionSpec.a must have shape ({self.k ** self.p}, {self.l}),"
                f" got {a.shape}"
            )
        if not np.all(np.isfinite(a)):
            raise ValidationError("InteractionSpec.a has non-finite entries")
        object.__setattr__(self, "a", a)

    def a_tensor(self) -> np.ndarray:
        """A reshaped to one K-axis per tensor slot plus the trailing L-axis."""
        return self.a.reshape((self.k,) * self.p + (self.l,))


def diagonal_indicator_spec(k: int, p: int) -> InteractionSpec:
    """L = 1 interaction whose A indicates equal multi-indices j_1 = ... = j_p.

    The induced polynomial is q -> sum over (k, k') of q_{k k'}^p.
    """
    a = np.zeros((k**p, 1))
    for j in range(k):
        idx = sum(j * k**n for n in range(p))
        a[idx, 0] = 1.0
    return InteractionSpec(k=k, l=1, p=p, a=a)


def adjacent_pairs_spec(k: int) -> InteractionSpec:
    """Order-2 chain interaction coupling consecutive coordinates.

    The induced polynomial is q -> sum_{r < K} q_{r r} q_{r+1 r+1}, which
    depends on the diagonal of q only.
    """
    if k < 2:
        raise ValidationError("adjacent_pairs_spec requires k >= 2")
    a = np.zeros((k * k, k - 1))
    for r in range(k - 1):
        a[r * k + (r + 1), r] = 1.0
    return InteractionSpec(k=k, l=k - 1, p=2, a=a)


@dataclass(frozen=True)
class DiscretePrior:
    """Finitely supported row prior on R^K with atom norms bounded by sqrt(K)."""

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.atleast_2d(np.asarray(self.atoms, dtype=float))
        weights = np.asarray(self.weights, dtype=float)
        if atoms.ndim != 2 or atoms.shape[0] < 1:
            raise ValidationError("DiscretePrior.atoms must be a nonempty m x K array")
        if weights.shape != (atoms.shape[0],):
            raise ValidationError("DiscretePrior.weights must match the atom count")
        if not np.all(np.isfinite(atoms)):
            raise ValidationError("DiscretePrior.atoms has non-finite entries")
        if np.any(weights <= 0):
            raise ValidationError("DiscretePrior.weights must be positive")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValidationError("DiscretePrior.weights must sum to 1 within 1e-12")
        k = atoms.shape[1]
        norms = np.sqrt((atoms**2).sum(axis=1))
        if norms.max() > np.sqrt(k) + 1e-12:
            raise ValidationError(
                f"DiscretePrior atom norm {norms.max():.6g} exceeds sqrt(K) = "
                f"{np.sqrt(k):.6g}"
            )
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @property
    def k(self) -> int:
        return self.atoms.shape[1]

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[0]


def rademacher_prior(k: int = 1) -> DiscretePrior:
    """Product of K symmetric +/-1 coordinates (2^K equally weighted atoms)."""
    m = 2**k
    atoms = np.array(
        [[1.0 if (i >> b) & 1 else -1.0 for b in range(k)] for i in range(m)]
    )
    return DiscretePrior(atoms=atoms, weights=np.full(m, 1.0 / m))


def single_atom_prior(v) -> DiscretePrior:
    return DiscretePrior(atoms=np.atleast_2d(np.asarray(v, dtype=float)),
                         weights=np.array([1.0]))


def product_prior(coords: list[tuple[np.ndarray, np.ndarray]]) -> DiscretePrior:
    """Prior with independent coordinates given per-coordinate (atoms, weights)."""
    atoms = np.array([[1.0]])
    weights = np.array([1.0])
    out_atoms = None
    for ca, cw in coords:
        ca = np.asarray(ca, dtype=float).reshape(-1)
        cw = np.asarray(cw, dtype=float).reshape(-1)
        if out_atoms is None:
            out_atoms = ca[:, None]
            weights = cw.copy()
        else:
            m0, m1 = out_atoms.shape[0], ca.shape[0]
            out_atoms = np.hstack(
                [np.repeat(out_atoms, m1, axis=0), np.tile(ca, m0)[:, None]]
            )
            weights = (weights[:, None] * cw[None, :]).reshape(-1)
    return DiscretePrior(atoms=out_atoms, weights=weights)


@dataclass(frozen=True)
class Disorder:
    """One realization of (X, W, Z), a pure function of (seed, stream, N, model)."""

    x: np.ndarray
    w: np.ndarray
    z: np.ndarray
    seed: int
    stream: int


def draw_disorder(seed: int, n: int, spec: InteractionSpec, prior: DiscretePrior,
                  stream: int = 0) -> Disorder:
    """Draw X (prior rows), W and Z (standard Gaussians) from a Philox stream.

    The generator is counter-based and keyed by (seed, stream), so draws are
    reproducible and distinct streams can run concurrently.
    """
    if n < 1:
        raise ValidationError("n must be >= 1")
    if prior.k != spec.k:
        raise ValidationError("prior and spec disagree on K")
    if n**spec.p * spec.l > MAX_W_ENTRIES:
        raise CapExceededError(
            f"noise tensor would need {n ** spec.p * spec.l} entries "
            f"(cap {MAX_W_ENTRIES})"
        )
    key = np.array([np.uint64(seed & (2**64 - 1)), np.uint64(stream & (2**64 - 1))])
    rng = np.random.Generator(np.random.Philox(key=key))
    cumw = np.cumsum(prior.weights)
    idx = np.minimum(
        np.searchsorted(cumw, rng.random(n), side="right"), prior.n_atoms - 1
    )
    x = prior.atoms[idx]
    w = rng.standard_normal((n**spec.p, spec.l))
    z = rng.standard_normal((n, spec.k))
    return Disorder(x=x, w=w, z=z, seed=seed, stream=stream)


def _batch_apply_tensor(qs: np.ndarray, tens: np.ndarray, n_modes: int) -> np.ndarray:
    """Apply a batch of matrices along each of the first n_modes axes of tens.

    qs has shape (C, K, J); axis m of tens (length J) is contracted with the
    second index of qs, leaving a K-axis in place.  Trailing axes of tens are
    untouched.  Never materializes a tensor power of qs.
    """
    c = qs.shape[0]
    s = np.broadcast_to(tens, (c,) + tens.shape)
    extra = tens.ndim - n_modes
    letters = list(_MODE_LETTERS[: n_modes + extra])
    for m in range(n_modes):
        lhs = letters.copy()
        lhs[m] = "b"
        rhs = letters.copy()
        rhs[m] = "a"
        s = np.einsum(
            "cab,c" + "".join(lhs) + "->c" + "".join(rhs), qs, s, optimize=True
        )
    return s


def nonlinearity_h(spec: InteractionSpec, q) -> float:
    """Evaluate the interaction polynomial (A A^T) . q^(tensor p).

    q is any K x K matrix (symmetry is not required).  The value is the sum
    over multi-index pairs (j, j') of (A A^T)_{j j'} prod_n q_{j_n j'_n},
    computed by applying q mode by mode so the K^p x K^p tensor power is
    never materialized.
    """
    return float(nonlinearity_h_batch(spec, np.asarray(q, dtype=float)[None])[0])


def nonlinearity_h_batch(spec: InteractionSpec, qs: np.ndarray) -> np.ndarray:
    """Vectorized nonlinearity over a (C, K, K) batch of matrices."""
    qs = np.asarray(qs, dtype=float)
    if qs.ndim != 3 or qs.shape[1:] != (spec.k, spec.k):
        raise ValidationError(
            f"expected batch of {spec.k} x {spec.k} matrices, got {qs.shape}"
        )
    tens = spec.a_tensor()
    s = _batch_apply_tensor(qs, tens, spec.p)
    sub = "".join(_MODE_LETTERS[: spec.p + 1])
    return np.einsum("c" + sub + "," + sub + "->c", s, tens, optimize=True)


def _grad_h_full(spec: InteractionSpec, q: np.ndarray) -> np.ndarray:
    """Gradient of the polynomial in all K^2 entries of q (no symmetry folding)."""
    k, p = spec.k, spec.p
    tens = spec.a_tensor()
    grad = np.zeros((k, k))
    letters = list(_MODE_LETTERS[: p + 1])
    for n in range(p):
        w = tens[None]
        for m in range(p):
            if m == n:
                continue
            lhs = letters.copy()
            lhs[m] = "b"
            rhs = letters.copy()
            rhs[m] = "a"
            w = np.einsum(
                "cab,c" + "".join(lhs) + "->c" + "".join(rhs),
                q[None],
                w,
                optimize=True,
            )
        lhs_t = letters.copy()
        lhs_t[n] = "a"
        rhs_w = letters.copy()
        rhs_w[n] = "b"
        grad += np.einsum(
            "".join(lhs_t) + "," + "".join(rhs_w) + "->ab", tens, w[0], optimize=True
        )
    return grad


def grad_h(spec: InteractionSpec, q) -> np.ndarray:
    """Gradient of the nonlinearity in the upper-triangle parameterization.

    Entry (k, l) with k != l is dH/dq_{kl} + dH/dq_{lk} of the polynomial;
    diagonal entries are dH/dq_{kk}.  Requires symmetric q.
    """
    qf = np.asarray(q, dtype=float)
    if qf.shape != (spec.k, spec.k):
        raise ValidationError(f"expected {spec.k} x {spec.k} matrix, got {qf.shape}")
    if np.abs(qf - qf.T).max(initial=0.0) > 1e-8 * (1.0 + np.abs(qf).max()):
        raise ValidationError("grad_h requires a symmetric matrix")
    g = _grad_h_full(spec, qf)
    out = g + g.T
    np.fill_diagonal(out, np.diag(g))
    return out


def grad_h_frobenius(spec: InteractionSpec, q) -> np.ndarray:
    """Gradient under the entry-wise inner product: dH(q)[d] = <grad, d>_F."""
    g = _grad_h_full(spec, np.asarray(q, dtype=float))
    return 0.5 * (g + g.T)


def _tensor_image(x: np.ndarray, spec: InteractionSpec) -> np.ndarray:
    """Materialize x^(tensor p) A, an N^p x L matrix (naive, guarded path)."""
    n = x.shape[0]
    if n**spec.p * max(spec.k**spec.p, spec.l) > MAX_NAIVE_ENTRIES:
        raise CapExceededError(
            "naive tensor materialization exceeds the desk-scale guard"
        )
    xp = x
    for _ in range(spec.p - 1):
        xp = np.kron(xp, x)
    return xp @ spec.a


def overlap_identity_check(spec: InteractionSpec, x, xp) -> tuple[float, float]:
    """Compute (x^(tensor p) A) . (x'^(tensor p) A) two ways.

    Returns the naive value (materializing both N^p x L images) and the
    reduction through the nonlinearity applied to the K x K overlap x^T x'.
    The two must agree; the reduction is what every fast path relies on.
    """
    xa = np.asarray(x, dtype=float)
    xb = np.asarray(xp, dtype=float)
    if xa.shape != xb.shape or xa.ndim != 2 or xa.shape[1] != spec.k:
        raise ValidationError("x and x' must both be N x K")
    naive = float((_tensor_image(xa, spec) * _tensor_image(xb, spec)).sum())
    reduced = nonlinearity_h(spec, xa.T @ xb)
    return naive, reduced


def noise_term_batch(spec: InteractionSpec, xs: np.ndarray, w: np.ndarray) -> np.ndarray:
    """(x^(tensor p) A) . W for a batch xs of shape (C, N, K).

    W is contracted mode by mode against xs, costing O(C K N^p L) without
    ever forming per-configuration N^p tensors for the signal part.
    """
    c, n, _ = xs.shape
    g = w.reshape((n,) * spec.p + (spec.l,))
    s = _batch_apply_tensor(np.swapaxes(xs, 1, 2), g, spec.p)
    sub = "".join(_MODE_LETTERS[: spec.p + 1])
    return np.einsum("c" + sub + "," + sub + "->c", s, spec.a_tensor(), optimize=True)


def hamiltonian_batch(spec: InteractionSpec, t: float, h, xs: np.ndarray,
                      d: Disorder) -> np.ndarray:
    """Hamiltonian of every configuration in xs (shape (C, N, K)) at (t, h).

    Signal-signal contractions and the self-overlap term go through the
    nonlinearity (overlap identity); only (x^(tensor p) A) . W touches the
    explicit noise tensor.
    """
    if t < 0:
        raise ValidationError("t must be nonnegative")
    hf = np.asarray(h, dtype=float)
    if not is_psd(hf, PSD_TOL):
        raise NotPsdError("h must be PSD")
    xs = np.asarray(xs, dtype=float)
    n = d.x.shape[0]
    if xs.ndim != 3 or xs.shape[1:] != (n, spec.k):
        raise ValidationError(f"configurations must have shape (C, {n}, {spec.k})")
    scale = t / float(n ** (spec.p - 1))
    sqrt2h = sqrt_psd(2.0 * hf)
    ybar = d.x @ sqrt2h + d.z
    q_x = np.einsum("cnk,nl->ckl", xs, d.x, optimize=True)
    q_self = np.einsum("cnk,cnl->ckl", xs, xs, optimize=True)
    ham = 2.0 * scale * nonlinearity_h_batch(spec, q_x)
    ham -= scale * nonlinearity_h_batch(spec, q_self)
    if t > 0:
        ham += np.sqrt(2.0 * scale) * noise_term_batch(spec, xs, d.w)
    r = np.einsum("cnk,nl->ckl", xs, ybar, optimize=True)
    ham += np.einsum("kl,ckl->c", sqrt2h, r, optimize=True)
    ham -= np.einsum("kl,ckl->c", hf, q_self, optimize=True)
    return ham


def hamiltonian(spec: InteractionSpec, t: float, h, x, d: Disorder) -> float:
    """Hamiltonian of a single configuration x (N x K) at (t, h)."""
    return float(hamiltonian_batch(spec, t, h, np.asarray(x, dtype=float)[None], d)[0])


def load_toml(path) -> dict:
    return _toml.loads(Path(path).read_text(encoding="utf-8"))


def load_model_dict(cfg: dict) -> tuple[InteractionSpec, DiscretePrior]:
    """Build (InteractionSpec, DiscretePrior) from parsed model-file sections.

    The [model] table carries k, p and either the named preset
    "diagonal-indicator" / "adjacent-pairs" or a dense row-major list for a
    with an explicit l.  The [prior] table carries atoms and weights.
    Violations of any type invariant are rejected with the field named.
    """
    if "model" not in cfg:
        raise ValidationError("missing [model] section")
    if "prior" not in cfg:
        raise ValidationError("missing [prior] section")
    m = cfg["model"]
    for key in ("k", "p", "a"):
        if key not in m:
            raise ValidationError(f"missing model.{key}")
    k, p, a = int(m["k"]), int(m["p"]), m["a"]
    if isinstance(a, str):
        if a == "diagonal-indicator":
            spec = diagonal_indicator_spec(k, p)
        elif a == "adjacent-pairs":
            if p != 2:
                raise ValidationError("model.a 'adjacent-pairs' requires p = 2")
            spec = adjacent_pairs_spec(k)
        else:
            raise ValidationError(f"unknown model.a preset {a!r}")
    else:
        if "l" not in m:
            raise ValidationError("missing model.l (required for a dense model.a)")
        l = int(m["l"])
        arr = np.asarray(a, dtype=float)
        if arr.size != k**p * l:
            raise ValidationError(
                f"model.a must list K^p * L = {k ** p * l} entries row-major, "
                f"got {arr.size}"
            )
        spec = InteractionSpec(k=k, l=l, p=p, a=arr.reshape(k**p, l))
    pr = cfg["prior"]
    for key in ("atoms", "weights"):
        if key not in pr:
            raise ValidationError(f"missing prior.{key}")
    prior = DiscretePrior(atoms=np.asarray(pr["atoms"], dtype=float),
                          weights=np.asarray(pr["weights"], dtype=float))
    if prior.k != spec.k:
        raise ValidationError("prior.atoms dimension disagrees with model.k")
    return spec, prior


def load_model(path) -> tuple[InteractionSpec, DiscretePrior]:
    """Load a model file (structured text with [model] and [prior] tables)."""
    return load_model_dict(load_toml(path))
