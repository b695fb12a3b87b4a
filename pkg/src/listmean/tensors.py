"""Symmetric tensor arithmetic and Hermite polynomial machinery.

Dense order-``t`` tensors over R^d are stored as flat float64 arrays in
lexicographic multi-index layout: the entry for ``(i_1, ..., i_t)`` lives at
``sum_j i_j * d**(t-1-j)`` (C-order ravel).  Everything here is a pure
function of its inputs; tensors are value objects.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

DEFAULT_ENTRY_CAP = 10_000_000
MAX_ORDER = 8
MAX_FACTORIAL = 20


class TensorSizeError(ValueError):
    """Requested dense tensor exceeds the entry cap or the order limit."""


def _check_size(dim: int, order: int, entry_cap: int) -> None:
    if order > MAX_ORDER:
        raise TensorSizeError(f"tensor order {order} exceeds limit {MAX_ORDER}")
    if dim ** order > entry_cap:
        raise TensorSizeError(
            f"dense tensor with {dim}**{order} entries exceeds cap {entry_cap}")


def factorial(k: int) -> float:
    """Floating-point factorial, rejecting k > 20 (never needed at desk scale)."""
    if k < 0:
        raise ValueError("factorial of negative order")
    if k > MAX_FACTORIAL:
        raise ValueError(f"factorial order {k} exceeds supported limit {MAX_FACTORIAL}")
    return float(math.factorial(k))


@dataclass(frozen=True)
class SymmetricTensor:
    """Dense symmetric tensor; ``data`` has length ``dim ** order``."""

    order: int
    dim: int
    data: np.ndarray

    def __post_init__(self):
        expected = self.dim ** self.order
        if self.data.shape != (expected,):
            raise ValueError(
                f"data length {self.data.shape} does not match dim**order {expected}")

    @classmethod
    def from_ndarray(cls, arr: np.ndarray, dim: int | None = None) -> "SymmetricTensor":
        arr = np.asarray(arr, dtype=float)
        if arr.ndim == 0:
            return cls(0, 1 if dim is None else dim, arr.reshape(1))
        d = arr.shape[0] if dim is None else dim
        return cls(arr.ndim, d, arr.reshape(-1).copy())

    def as_ndarray(self) -> np.ndarray:
        if self.order == 0:
            return self.data.reshape(())
        return self.data.reshape((self.dim,) * self.order)

    def norm(self) -> float:
        """Euclidean norm of the tensor viewed as a d**t vector."""
        return float(np.linalg.norm(self.data))


@dataclass(frozen=True)
class FlatMatrix:
    """First-mode flattening of an order-t tensor: d rows, d**(t-1) columns."""

    rows: int
    cols: int
    data: np.ndarray

    def __post_init__(self):
        if self.data.shape != (self.rows, self.cols):
            raise ValueError("FlatMatrix data shape mismatch")

    def frobenius(self) -> float:
        return float(np.linalg.norm(self.data))


def hermite_scalar(k: int, x):
    """Degree-k probabilists' Hermite polynomial via the three-term recursion.

    ``x`` can be a scalar or an ndarray (evaluated elementwise).
    """
    if k < 0:
        raise ValueError("negative Hermite degree")
    x = np.asarray(x, dtype=float)
    h_prev = np.ones_like(x)
    if k == 0:
        return h_prev if h_prev.ndim else float(h_prev)
    h_cur = x.copy()
    for j in range(1, k):
        h_prev, h_cur = h_cur, x * h_cur - j * h_prev
    return h_cur if h_cur.ndim else float(h_cur)


@lru_cache(maxsize=None)
def _pair_partitions(t: int):
    """All partitions of range(t) into singletons and pairs."""
    out = []

    def rec(rem, pairs, singles):
        if not rem:
            out.append((tuple(pairs), tuple(singles)))
            return
        a = rem[0]
        rest = rem[1:]
        rec(rest, pairs, singles + (a,))
        for i in range(len(rest)):
            rec(rest[:i] + rest[i + 1:], pairs + ((a, rest[i]),), singles)

    rec(tuple(range(t)), (), ())
    return tuple(out)


@lru_cache(maxsize=None)
def _perfect_matchings(t: int):
    if t % 2:
        return ()
    out = []

    def rec(rem, pairs):
        if not rem:
            out.append(tuple(pairs))
            return
        a = rem[0]
        rest = rem[1:]
        for i in range(len(rest)):
            rec(rest[:i] + rest[i + 1:], pairs + ((a, rest[i]),))

    rec(tuple(range(t)), ())
    return tuple(out)


_LETTERS = "abcdefghijklmnop"


def _pattern(dim: int, order: int, pairs, singles, single_factors) -> np.ndarray:
    """Order-``order`` array with identity factors on ``pairs`` and the given
    vectors/tensor block on ``singles`` positions."""
    if order == 0:
        return np.array(1.0)
    eye = np.eye(dim)
    ops, subs = [], []
    for a, b in pairs:
        ops.append(eye)
        subs.append(_LETTERS[a] + _LETTERS[b])
    if singles:
        ops.append(single_factors)
        subs.append("".join(_LETTERS[c] for c in singles))
    out = "".join(_LETTERS[:order])
    return np.einsum(",".join(subs) + "->" + out, *ops)


def sym_outer(a: SymmetricTensor, b: SymmetricTensor,
              entry_cap: int = DEFAULT_ENTRY_CAP) -> SymmetricTensor:
    """Symmetrized tensor product: binomial-weighted average over all ways of
    interleaving the two factors' modes."""
    if a.dim != b.dim and a.order and b.order:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    dim = a.dim if a.order else b.dim
    order = a.order + b.order
    _check_size(dim, order, entry_cap)
    if a.order == 0:
        return SymmetricTensor(b.order, dim, float(a.data[0]) * b.data)
    if b.order == 0:
        return SymmetricTensor(a.order, dim, float(b.data[0]) * a.data)
    base = np.multiply.outer(a.as_ndarray(), b.as_ndarray())
    acc = np.zeros((dim,) * order)
    splits = list(itertools.combinations(range(order), a.order))
    for s1 in splits:
        acc += np.moveaxis(base, range(a.order), s1)
    acc /= len(splits)
    return SymmetricTensor(order, dim, acc.reshape(-1))


def hermite_tensor(k: int, x: np.ndarray,
                   entry_cap: int = DEFAULT_ENTRY_CAP) -> SymmetricTensor:
    """Degree-k Hermite tensor of ``x`` via the symmetrized recursion
    ``H_{k+1} = Sym(x (x) H_k) - k Sym(I (x) H_{k-1})``."""
    x = np.asarray(x, dtype=float)
    d = x.shape[0]
    _check_size(d, k, entry_cap)
    if k == 0:
        return SymmetricTensor(0, d, np.array([1.0]))
    if k == 1:
        return SymmetricTensor(1, d, x.copy())
    eye = np.eye(d)
    h_prev = np.array(1.0)
    h_cur = x.copy()
    for j in range(1, k):
        order = j + 1
        # Sym(x (x) H_j): average of x placed at each of the j+1 positions.
        base = np.multiply.outer(x, h_cur)
        acc = base.copy()
        for pos in range(1, order):
            acc += np.moveaxis(base, 0, pos)
        acc /= order
        # Sym(I (x) H_{j-1}): average of I's two modes over position pairs.
        base2 = np.multiply.outer(eye, h_prev)
        acc2 = np.zeros((d,) * order)
        pairs = list(itertools.combinations(range(order), 2))
        for p, q in pairs:
            acc2 += np.moveaxis(base2, (0, 1), (p, q))
        acc2 /= len(pairs)
        h_prev, h_cur = h_cur, acc - j * acc2
    return SymmetricTensor(k, d, h_cur.reshape(-1))


def hermite_tensor_partition(k: int, x: np.ndarray,
                             entry_cap: int = DEFAULT_ENTRY_CAP) -> SymmetricTensor:
    """Degree-k Hermite tensor via the explicit sum over partitions of the
    mode set into singletons (x factors) and pairs (-I factors)."""
    x = np.asarray(x, dtype=float)
    d = x.shape[0]
    _check_size(d, k, entry_cap)
    if k == 0:
        return SymmetricTensor(0, d, np.array([1.0]))
    acc = np.zeros((d,) * k)
    for pairs, singles in _pair_partitions(k):
        block = _vector_power(x, len(singles))
        acc += (-1.0) ** len(pairs) * _pattern(d, k, pairs, singles, block)
    return SymmetricTensor(k, d, acc.reshape(-1))


def _vector_power(x: np.ndarray, m: int) -> np.ndarray:
    out = np.array(1.0)
    for _ in range(m):
        out = np.multiply.outer(out, x)
    return out


def hermite_tensor_batch(k: int, X: np.ndarray,
                         entry_cap: int = DEFAULT_ENTRY_CAP) -> np.ndarray:
    """H_k for each row of X, returned as an (n, d**k) array."""
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    _check_size(d, k, entry_cap)
    if k == 0:
        return np.ones((n, 1))
    eye = np.eye(d)
    acc = np.zeros((n,) + (d,) * k)
    for pairs, singles in _pair_partitions(k):
        sign = (-1.0) ** len(pairs)
        if not singles:
            acc += sign * _pattern(d, k, pairs, (), None)[None]
            continue
        ops, subs = [], []
        for a, b in pairs:
            ops.append(eye)
            subs.append(_LETTERS[a] + _LETTERS[b])
        for c in singles:
            ops.append(X)
            subs.append("z" + _LETTERS[c])
        out = "z" + "".join(_LETTERS[:k])
        acc += sign * np.einsum(",".join(subs) + "->" + out, *ops)
    return acc.reshape(n, -1)


def hermite_tensor_sum(k: int, X: np.ndarray,
                       entry_cap: int = DEFAULT_ENTRY_CAP) -> SymmetricTensor:
    """Sum of H_k over the rows of X, assembled from raw moment sums.

    Uses linearity of the partition expansion: the x factors on singleton
    positions sum to the raw moment tensor of matching order, so only one
    pass over the data per order is needed.
    """
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    _check_size(d, k, entry_cap)
    if k == 0:
        return SymmetricTensor(0, d, np.array([float(n)]))
    # raw[m] = sum_i x_i^{(x)m}, built once per needed order
    raw = {}
    for m in {len(s) for _, s in _pair_partitions(k)}:
        if m:
            subs = ["z" + _LETTERS[c] for c in range(m)]
            raw[m] = np.einsum(
                ",".join(subs) + "->" + "".join(_LETTERS[:m]), *([X] * m))
    acc = np.zeros((d,) * k)
    for pairs, singles in _pair_partitions(k):
        if singles:
            term = _pattern(d, k, pairs, singles, raw[len(singles)])
        else:
            term = _pattern(d, k, pairs, (), None) * float(n)
        acc += (-1.0) ** len(pairs) * term
    return SymmetricTensor(k, d, acc.reshape(-1))


def gaussian_moment_tensor(k: int, d: int,
                           entry_cap: int = DEFAULT_ENTRY_CAP) -> SymmetricTensor:
    """E[Z^{(x)k}] for Z ~ N(0, I_d): the Isserlis pairing sum.

    Entry (i_1..i_k) counts the perfect matchings of the k modes whose paired
    indices agree; odd orders vanish.
    """
    _check_size(d, k, entry_cap)
    if k == 0:
        return SymmetricTensor(0, d, np.array([1.0]))
    if k % 2:
        return SymmetricTensor(k, d, np.zeros(d ** k))
    acc = np.zeros((d,) * k)
    for pairs in _perfect_matchings(k):
        acc += _pattern(d, k, pairs, (), None)
    return SymmetricTensor(k, d, acc.reshape(-1))


def hermite_square_moment(k: int, shift: float) -> float:
    """Mean of h_k(X + shift)^2 for X ~ N(0,1): k! sum_j C(k,j) shift^{2j} / j!."""
    factorial(k)
    total = 0.0
    for j in range(k + 1):
        total += math.comb(k, j) * shift ** (2 * j) / math.factorial(j)
    return float(math.factorial(k)) * total


def hermite_second_moment(k: int, mu: np.ndarray,
                          entry_cap: int = DEFAULT_ENTRY_CAP) -> SymmetricTensor:
    """E[H_k(X) (x) H_k(X)] for X ~ N(mu, I), as an order-2k tensor.

    Sums identity factors over matched mode pairs (one mode from each copy)
    and mean factors on the unmatched modes.
    """
    mu = np.asarray(mu, dtype=float)
    d = mu.shape[0]
    _check_size(d, 2 * k, entry_cap)
    if k == 0:
        return SymmetricTensor(0, d, np.array([1.0]))
    eye = np.eye(d)
    acc = np.zeros((d,) * (2 * k))
    modes = range(k)
    for size in range(k + 1):
        for s1 in itertools.combinations(modes, size):
            for s2 in itertools.combinations(modes, size):
                for perm in itertools.permutations(s2):
                    ops, subs = [], []
                    for a, b in zip(s1, perm):
                        ops.append(eye)
                        subs.append(_LETTERS[a] + _LETTERS[k + b])
                    for c in modes:
                        if c not in s1:
                            ops.append(mu)
                            subs.append(_LETTERS[c])
                        if c not in s2:
                            ops.append(mu)
                            subs.append(_LETTERS[k + c])
                    out = "".join(_LETTERS[:2 * k])
                    acc += np.einsum(",".join(subs) + "->" + out, *ops)
    return SymmetricTensor(2 * k, d, acc.reshape(-1))


def flatten(T: SymmetricTensor) -> FlatMatrix:
    """Reshape an order-t tensor into its d x d**(t-1) first-mode flattening."""
    if T.order < 1:
        raise ValueError("cannot flatten an order-0 tensor")
    cols = T.dim ** (T.order - 1)
    return FlatMatrix(T.dim, cols, T.data.reshape(T.dim, cols).copy())


def jacobi_eigh(G: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100):
    """Cyclic Jacobi eigendecomposition of a small symmetric matrix.

    Returns (eigenvalues, eigenvectors) sorted by descending eigenvalue.
    Off-diagonal rotation threshold is ``tol`` relative to the Frobenius norm.
    """
    A = np.array(G, dtype=float)
    d = A.shape[0]
    V = np.eye(d)
    scale = max(np.linalg.norm(A), 1e-300)
    for _ in range(max_sweeps):
        off = 0.0
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = A[p, q]
                off = max(off, abs(apq))
                if abs(apq) <= tol * scale:
                    continue
                theta = 0.5 * (A[q, q] - A[p, p]) / apq
                t = np.sign(theta) / (abs(theta) + np.hypot(1.0, theta))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.hypot(1.0, t)
                s = t * c
                rot = np.eye(d)
                rot[p, p] = c
                rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                A = rot.T @ A @ rot
                V = V @ rot
        if off <= tol * scale:
            break
    vals = np.diag(A).copy()
    order = np.argsort(-vals)
    return vals[order], V[:, order]


def top_left_singular_vectors(M, s: int, rank_tol: float = 1e-10) -> list[np.ndarray]:
    """Top-s left singular vectors of M, via Jacobi on the d x d Gram matrix.

    Vectors come back orthonormal, ordered by descending singular value;
    directions whose singular value falls below ``rank_tol`` times the top one
    are dropped.  Raises on non-finite input.
    """
    if s < 1:
        raise ValueError("s must be positive")
    A = M.data if isinstance(M, FlatMatrix) else np.asarray(M, dtype=float)
    if not np.all(np.isfinite(A)):
        raise ValueError("non-finite entries in flattened matrix")
    G = A @ A.T
    vals, vecs = jacobi_eigh(G)
    svals = np.sqrt(np.clip(vals, 0.0, None))
    if svals.size == 0 or svals[0] <= 0.0:
        return []
    out = []
    for i in range(min(s, svals.size)):
        if svals[i] < rank_tol * svals[0]:
            break
        v = vecs[:, i]
        j = int(np.argmax(np.abs(v)))
        if v[j] < 0:
            v = -v
        out.append(v.copy())
    return out


def gauss_hermite_nodes(n: int = 64):
    """Golub-Welsch nodes/weights for the probabilists' weight N(0,1).

    Built from the Jacobi matrix of the h_k recursion (off-diagonals sqrt(k));
    weights sum to one.
    """
    if n < 1:
        raise ValueError("need at least one node")
    off = np.sqrt(np.arange(1, n, dtype=float))
    J = np.diag(off, 1) + np.diag(off, -1)
    vals, vecs = np.linalg.eigh(J)
    weights = vecs[0, :] ** 2
    return vals, weights


@lru_cache(maxsize=None)
def hermite_product_coeffs(order: int, dim: int) -> np.ndarray:
    """Coefficient table for <H_t(x), H_t(y)> as a polynomial in
    a = <x, y> and bc = |x|^2 + |y|^2.

    Derived from the generating function
    sum_t <H_t(x),H_t(y)> u^t / t! = (1-u^2)^{-d/2} exp((a u - bc u^2 / 2)/(1-u^2)).
    Entry [p, q] multiplies a**p * bc**q.
    """
    factorial(order)
    coef = np.zeros((order + 1, order // 2 + 1))
    for i in range(order + 1):
        for j in range((order - i) // 2 + 1):
            rem = order - i - 2 * j
            if rem < 0 or rem % 2:
                continue
            half = rem // 2
            total = 0.0
            for l in range(half + 1):
                m = half - l
                c1 = 1.0
                for r in range(1, l + 1):
                    c1 *= (dim / 2.0 + l - r) / r
                c2 = 1.0
                for r in range(1, m + 1):
                    c2 *= (i + j + r - 1) / r
                total += c1 * c2
            coef[i, j] += (math.factorial(order) * (-0.5) ** j
                           / (math.factorial(i) * math.factorial(j))) * total
    return coef


def hermite_pair_product(order: int, a, bc, dim: int):
    """<H_t(x), H_t(y)> from a = <x,y> and bc = |x|^2 + |y|^2 (elementwise)."""
    coef = hermite_product_coeffs(order, dim)
    a = np.asarray(a, dtype=float)
    bc = np.asarray(bc, dtype=float)
    out = np.zeros(np.broadcast(a, bc).shape)
    ap = np.ones_like(out)
    for p in range(coef.shape[0]):
        if p:
            ap = ap * a
        inner = np.zeros_like(out)
        bq = np.ones_like(out)
        for q in range(coef.shape[1]):
            if q:
                bq = bq * bc
            if coef[p, q] != 0.0:
                inner += coef[p, q] * bq
        out += ap * inner
    return out if out.ndim else float(out)


def _npairs(t: int, p: int) -> float:
    return math.factorial(t) / (2 ** p * math.factorial(p) * math.factorial(t - 2 * p))


def hermite_contractions(order: int, X: np.ndarray, tensor: SymmetricTensor) -> np.ndarray:
    """<H_t(x_i), M> for each row x_i, for a symmetric order-t tensor M.

    Expands H_t over partitions; by symmetry of M every partition with p
    pairs contributes the same contraction, so only the partial traces of M
    are needed: sum_p (-1)^p N(t,p) <x^{(x)(t-2p)}, Tr^p M>.
    """
    X = np.asarray(X, dtype=float)
    if tensor.order != order:
        raise ValueError("tensor order mismatch")
    out = np.zeros(X.shape[0])
    W = tensor.as_ndarray()
    for p in range(order // 2 + 1):
        m = order - 2 * p
        if m == 0:
            term = np.full(X.shape[0], float(W))
        else:
            cur = np.broadcast_to(W, (X.shape[0],) + W.shape)
            for _ in range(m):
                cur = np.einsum('n...i,ni->n...', cur, X)
            term = cur
        out += (-1.0) ** p * _npairs(order, p) * term
        if m >= 2:
            W = np.trace(W, axis1=0, axis2=1)
    return out
