"""Block-structured linear algebra.

Matrices are plain ``numpy.ndarray`` (dense) or ``scipy.sparse.csr_matrix``
(sparse, canonical form: duplicates summed, indices sorted).  Variables living
in a symmetric-matrix space are handled in vectorized form through
:func:`svec` / :func:`smat`, which preserve the trace inner product, so every
linear map in the package is an ordinary matrix acting on vectors.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import Breakdown, DimensionMismatch, NotPositiveDefinite

# Sparse matrices denser than this are stored dense (Schur complements and
# SMW intermediates densify anyway).
DENSE_FALLBACK_DENSITY = 0.25

_CHOL_PIVOT_RTOL = 1e-13
_SPLU_DIM_CUTOFF = 4000


# ---------------------------------------------------------------------------
# construction and canonical forms
# ---------------------------------------------------------------------------

def sparse_from_triplets(shape, rows, cols, vals):
    """Build a canonical CSR matrix from triplet data.

    Duplicate (row, col) entries are summed.  The result has sorted indices
    and no duplicates, so two structurally identical matrices compare equal
    entry by entry.
    """
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    vals = np.asarray(vals, dtype=np.float64)
    if not (rows.shape == cols.shape == vals.shape):
        raise DimensionMismatch("triplet arrays must have equal length")
    m, n = shape
    if rows.size and (rows.min() < 0 or rows.max() >= m or cols.min() < 0 or cols.max() >= n):
        raise DimensionMismatch("triplet index out of range for shape %s" % (shape,))
    mat = sp.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


def canonicalize(mat):
    """Return ``mat`` as a canonical CSR matrix (dense input left dense)."""
    if isinstance(mat, np.ndarray):
        return mat
    out = sp.csr_matrix(mat)
    out.sum_duplicates()
    out.sort_indices()
    return out


def same_canonical(a, b):
    """Exact structural and numerical equality of two canonical matrices."""
    a_sparse = sp.issparse(a)
    if a_sparse != sp.issparse(b):
        return False
    if a.shape != b.shape:
        return False
    if not a_sparse:
        return np.array_equal(a, b)
    a = canonicalize(a)
    b = canonicalize(b)
    return (
        np.array_equal(a.indptr, b.indptr)
        and np.array_equal(a.indices, b.indices)
        and np.array_equal(a.data, b.data)
    )


def density(mat):
    if isinstance(mat, np.ndarray):
        return 1.0
    size = mat.shape[0] * mat.shape[1]
    return mat.nnz / size if size else 0.0


def to_dense(mat):
    return mat if isinstance(mat, np.ndarray) else np.asarray(mat.todense())


def maybe_densify(mat):
    """Apply the density fallback rule: dense storage above 25% fill."""
    if sp.issparse(mat) and density(mat) > DENSE_FALLBACK_DENSITY:
        return to_dense(mat)
    return mat


def mv(op, x):
    """Matrix-vector product returning a 1-d ndarray for dense or sparse op."""
    return np.asarray(op @ x).ravel()


def transposed(mat):
    """Materialized transpose (sparse transposes are views; hot loops need
    the CSR copy built once)."""
    if mat is None:
        return None
    if isinstance(mat, np.ndarray):
        return np.ascontiguousarray(mat.T)
    return mat.T.tocsr()


_MATVEC_DENSE_SIZE = 16384


def compact_for_matvec(mat):
    """Per-call dispatch overhead dwarfs the arithmetic on tiny sparse
    blocks; store those dense for the matvec path."""
    if mat is None or isinstance(mat, np.ndarray):
        return mat
    m, n = mat.shape
    if m * n <= _MATVEC_DENSE_SIZE or density(mat) > DENSE_FALLBACK_DENSITY:
        return to_dense(mat)
    return mat


# ---------------------------------------------------------------------------
# symmetric-matrix vectorization
# ---------------------------------------------------------------------------

_SQRT2 = np.sqrt(2.0)


def svec_dim(d):
    return d * (d + 1) // 2


def svec_indices(d):
    """Row-major upper-triangle index pair arrays for dimension ``d``."""
    return np.triu_indices(d)


def svec(x):
    """Vectorize a symmetric matrix: upper triangle, off-diagonals scaled by
    sqrt(2) so that ``svec(x) @ svec(y) == trace(x @ y)``."""
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[0]
    iu, ju = np.triu_indices(d)
    out = x[iu, ju].copy()
    out[iu != ju] *= _SQRT2
    return out


def smat(v, d):
    """Inverse of :func:`svec`."""
    v = np.asarray(v, dtype=np.float64)
    if v.size != svec_dim(d):
        raise DimensionMismatch("svec length %d does not match dimension %d" % (v.size, d))
    iu, ju = np.triu_indices(d)
    vals = v.copy()
    vals[iu != ju] /= _SQRT2
    out = np.zeros((d, d))
    out[iu, ju] = vals
    out[ju, iu] = vals
    return out


class SymDense:
    """Symmetric dense matrix stored as its lower triangle, row-major.

    Symmetry holds by construction; the full matrix is expanded only where an
    eigensolve or factorization needs it.
    """

    __slots__ = ("dim", "packed")

    def __init__(self, dim, packed):
        packed = np.asarray(packed, dtype=np.float64)
        if packed.size != svec_dim(dim):
            raise DimensionMismatch(
                "packed length %d does not match dim %d" % (packed.size, dim))
        self.dim = dim
        self.packed = packed

    @classmethod
    def from_full(cls, x):
        x = np.asarray(x, dtype=np.float64)
        d = x.shape[0]
        x = 0.5 * (x + x.T)
        il, jl = np.tril_indices(d)
        return cls(d, x[il, jl].copy())

    def full(self):
        d = self.dim
        il, jl = np.tril_indices(d)
        out = np.zeros((d, d))
        out[il, jl] = self.packed
        out[jl, il] = self.packed
        return out

    def __eq__(self, other):
        return (
            isinstance(other, SymDense)
            and self.dim == other.dim
            and np.array_equal(self.packed, other.packed)
        )

    def __hash__(self):  # pragma: no cover - identity hashing is enough
        return id(self)


# ---------------------------------------------------------------------------
# block operators
# ---------------------------------------------------------------------------

class StackedOp:
    """Vertical stack [B_1; ...; B_N] of maps sharing one domain."""

    def __init__(self, blocks):
        blocks = [canonicalize(b) for b in blocks]
        if not blocks:
            raise DimensionMismatch("StackedOp needs at least one block")
        n = blocks[0].shape[1]
        for k, blk in enumerate(blocks):
            if blk.shape[1] != n:
                raise DimensionMismatch(
                    "block %d has %d columns, expected %d" % (k, blk.shape[1], n))
        self.blocks = blocks
        self.n = n
        self.row_sizes = [b.shape[0] for b in blocks]
        self.m = sum(self.row_sizes)
        self.offsets = np.concatenate(([0], np.cumsum(self.row_sizes)))
        # identical blocks allow one product per apply; otherwise the blocks
        # are assembled into a single matrix so an apply is one matvec
        self.shared = all(same_canonical(blocks[0], b) for b in blocks[1:])
        if self.shared:
            self._one = compact_for_matvec(blocks[0])
            self._one_t = transposed(self._one)
            self._assembled = None
            self._assembled_t = None
        else:
            stack = sp.vstack([sp.csr_matrix(b) for b in blocks]).tocsr()
            self._assembled = compact_for_matvec(stack)
            self._assembled_t = transposed(self._assembled)

    def apply(self, x):
        if self.shared:
            return np.tile(mv(self._one, x), len(self.blocks))
        return mv(self._assembled, x)

    def apply_adjoint(self, ybar):
        if self.shared:
            total = ybar.reshape(len(self.blocks), -1).sum(axis=0)
            return mv(self._one_t, total)
        return mv(self._assembled_t, ybar)

    def block(self, i):
        return self.blocks[i]


class BlockDiagOp:
    """Block diagonal operator diag(Bbar_1, ..., Bbar_N)."""

    def __init__(self, blocks):
        blocks = [canonicalize(b) for b in blocks]
        if not blocks:
            raise DimensionMismatch("BlockDiagOp needs at least one block")
        self.blocks = blocks
        self.row_sizes = [b.shape[0] for b in blocks]
        self.col_sizes = [b.shape[1] for b in blocks]
        self.m = sum(self.row_sizes)
        self.n = sum(self.col_sizes)
        self.row_offsets = np.concatenate(([0], np.cumsum(self.row_sizes)))
        self.col_offsets = np.concatenate(([0], np.cumsum(self.col_sizes)))
        diag = sp.block_diag([sp.csr_matrix(b) for b in blocks]).tocsr()
        self._assembled = compact_for_matvec(diag)
        self._assembled_t = transposed(self._assembled)

    def apply(self, xbar):
        return mv(self._assembled, xbar)

    def apply_adjoint(self, ybar):
        return mv(self._assembled_t, ybar)


# ---------------------------------------------------------------------------
# factorizations and iterative solves
# ---------------------------------------------------------------------------

class CholFactor:
    """Handle for solving S x = h with S symmetric positive definite."""

    def __init__(self, kind, data, dim):
        self._kind = kind
        self._data = data
        self.dim = dim

    def solve(self, h):
        h = np.asarray(h, dtype=np.float64)
        if self._kind == "dense":
            return sla.cho_solve((self._data, True), h)
        return self._data.solve(h)


def chol_factor(S):
    """Factor a symmetric positive definite matrix and return a solve handle.

    Raises :class:`NotPositiveDefinite` when a pivot falls at or below
    ``1e-13 * max(diag(S))``.  Sparse inputs are densified up to a size
    cutoff; very large sparse matrices go through a sparse LU behind the
    same handle.
    """
    if sp.issparse(S) and S.shape[0] > _SPLU_DIM_CUTOFF:
        try:
            import scipy.sparse.linalg as spla

            lu = spla.splu(S.tocsc())
        except RuntimeError as exc:  # singular factorization
            raise NotPositiveDefinite(str(exc)) from exc
        if np.any(lu.U.diagonal() <= 0):
            raise NotPositiveDefinite("nonpositive pivot in sparse factorization")
        return CholFactor("splu", lu, S.shape[0])

    dense = to_dense(S)
    if dense.shape[0] != dense.shape[1]:
        raise DimensionMismatch("matrix must be square")
    max_diag = float(np.max(np.abs(np.diag(dense)))) if dense.size else 0.0
    tol = _CHOL_PIVOT_RTOL * max_diag
    try:
        low = sla.cholesky(dense, lower=True, check_finite=False)
    except sla.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc
    if dense.size and float(np.min(np.diag(low)) ** 2) <= tol:
        raise NotPositiveDefinite("pivot below tolerance %.3e" % tol)
    return CholFactor("dense", low, dense.shape[0])


def pcg_solve(apply_op, h, precond=None, tol=1e-10, maxit=500):
    """Preconditioned conjugate gradient for SPD operators.

    Parameters are callables: ``apply_op(x)`` evaluates the operator and
    ``precond(r)`` applies an approximate inverse (identity when ``None``).
    Returns ``(x, iters, relres)`` where ``relres = ||apply_op(x) - h|| / ||h||``.
    Raises :class:`Breakdown` on nonpositive curvature.
    """
    h = np.asarray(h, dtype=np.float64)
    norm_h = float(np.linalg.norm(h))
    if norm_h == 0.0:
        return np.zeros_like(h), 0, 0.0
    if precond is None:
        precond = lambda r: r

    x = np.zeros_like(h)
    r = h.copy()
    z = precond(r)
    p = z.copy()
    rz = float(r @ z)
    iters = 0
    while iters < maxit:
        if np.linalg.norm(r) <= tol * norm_h:
            # recurrence says converged; confirm with a true residual
            r_true = h - apply_op(x)
            if np.linalg.norm(r_true) <= tol * norm_h:
                break
            r = r_true
            z = precond(r)
            p = z.copy()
            rz = float(r @ z)
        ap = apply_op(p)
        curv = float(p @ ap)
        if curv <= 0.0:
            raise Breakdown("nonpositive curvature %.3e" % curv)
        alpha = rz / curv
        x += alpha * p
        r -= alpha * ap
        iters += 1
        z = precond(r)
        rz_new = float(r @ z)
        beta = rz_new / rz
        rz = rz_new
        p = z + beta * p
    relres = float(np.linalg.norm(h - apply_op(x)) / norm_h)
    return x, iters, relres


def power_lambda_max(apply_op, dim, tol=1e-8, maxit=500):
    """Largest eigenvalue of a symmetric PSD operator by power iteration.

    Deterministic normalized all-ones start.  Returns ``(value, converged)``;
    hitting ``maxit`` returns the best estimate with ``converged=False``.
    """
    if dim == 0:
        return 0.0, True
    v = np.ones(dim) / np.sqrt(dim)
    lam = 0.0
    for _ in range(maxit):
        w = apply_op(v)
        norm_w = float(np.linalg.norm(w))
        if norm_w == 0.0:
            return 0.0, True
        v = w / norm_w
        lam_new = float(v @ apply_op(v))
        if abs(lam_new - lam) <= tol * max(abs(lam_new), 1e-300):
            return lam_new, True
        lam = lam_new
    return lam, False


def op_norm_2(C, tol=1e-8, maxit=500):
    """Spectral norm of a rectangular map via power iteration on the Gram
    operator of the smaller side."""
    m, n = C.shape
    Ct = C.T
    if m <= n:
        gram = lambda y: mv(C, mv(Ct, y))
        dim = m
    else:
        gram = lambda x: mv(Ct, mv(C, x))
        dim = n
    lam, _ = power_lambda_max(gram, dim, tol=tol, maxit=maxit)
    return float(np.sqrt(max(lam, 0.0)))
