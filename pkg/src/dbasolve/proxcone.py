"""Projections onto closed convex sets and proximal machinery.

Cones over a symmetric-matrix space act on the vectorized (:func:`svec`)
coordinates, which preserve the trace inner product, so every projection and
proximal map below takes and returns 1-d arrays.

The conjugate-side maps come from the Moreau identity

    x = Prox_{t f}(x) + t Prox_{f*/t}(x / t),

so ``Prox_{f*/t}(x) = x - Prox_{t f}(t x) / t``.
"""

from __future__ import annotations

import numpy as np

from .blocklinalg import SymDense, chol_factor, smat, svec, svec_dim
from .errors import DimensionMismatch, SingularSystem

_PSD_EIG_TOL = 1e-10


# ---------------------------------------------------------------------------
# cones
# ---------------------------------------------------------------------------

class Cone:
    """Closed convex set with a computable projection and support function."""

    dim = 0  # length of the vectorized representation

    def project(self, x):
        raise NotImplementedError

    def support(self, w, feas_tol):
        """Support function delta*_K(w), with a relative feasibility clamp for
        the indicator cases (slight violations count as 0)."""
        raise NotImplementedError

    def contains(self, x, tol):
        return np.linalg.norm(x - self.project(x)) <= tol * (1.0 + np.linalg.norm(x))


class FreeSpace(Cone):
    def __init__(self, n):
        self.dim = int(n)

    def project(self, x):
        return np.asarray(x, dtype=np.float64)

    def support(self, w, feas_tol):
        w = np.asarray(w)
        if np.linalg.norm(w) <= feas_tol * (1.0 + np.linalg.norm(w)):
            return 0.0
        return np.inf


class NonnegOrthant(Cone):
    def __init__(self, n):
        self.dim = int(n)

    def project(self, x):
        return np.maximum(np.asarray(x, dtype=np.float64), 0.0)

    def support(self, w, feas_tol):
        w = np.asarray(w)
        if w.size == 0 or np.max(w) <= feas_tol * (1.0 + np.linalg.norm(w)):
            return 0.0
        return np.inf


class Box(Cone):
    """Box with elementwise bounds; ``-inf`` / ``inf`` entries are allowed."""

    def __init__(self, lower, upper):
        lower = np.asarray(lower, dtype=np.float64)
        upper = np.asarray(upper, dtype=np.float64)
        if lower.shape != upper.shape:
            raise DimensionMismatch("box bounds must have equal length")
        if np.any(lower > upper):
            raise DimensionMismatch("box requires lower <= upper elementwise")
        self.lower = lower
        self.upper = upper
        self.dim = lower.size

    def project(self, x):
        return np.clip(np.asarray(x, dtype=np.float64), self.lower, self.upper)

    def support(self, w, feas_tol):
        w = np.asarray(w, dtype=np.float64)
        tol = feas_tol * (1.0 + np.linalg.norm(w))
        pos = np.maximum(w, 0.0)
        neg = np.minimum(w, 0.0)
        # an infinite bound contributes only when the matching coefficient is
        # genuinely nonzero
        if np.any((pos > tol) & np.isinf(self.upper)):
            return np.inf
        if np.any((neg < -tol) & np.isinf(self.lower)):
            return np.inf
        val = 0.0
        fin_u = np.isfinite(self.upper)
        fin_l = np.isfinite(self.lower)
        val += float(self.upper[fin_u] @ pos[fin_u])
        val += float(self.lower[fin_l] @ neg[fin_l])
        return val


class PsdCone(Cone):
    """Positive semidefinite matrices of order ``d`` in svec coordinates."""

    def __init__(self, d):
        self.d = int(d)
        self.dim = svec_dim(self.d)

    def project(self, x):
        mat = smat(np.asarray(x, dtype=np.float64), self.d)
        vals, vecs = np.linalg.eigh(mat)
        vals = np.maximum(vals, 0.0)
        return svec((vecs * vals) @ vecs.T)

    def support(self, w, feas_tol):
        mat = smat(np.asarray(w, dtype=np.float64), self.d)
        lam_max = float(np.linalg.eigvalsh(mat)[-1])
        if lam_max <= feas_tol * (1.0 + np.linalg.norm(w)):
            return 0.0
        return np.inf


class NonnegSymMatrices(Cone):
    """Entrywise nonnegative symmetric matrices of order ``d``.

    Entrywise clipping commutes with the positive svec scaling, so both the
    projection and the support test reduce to the orthant ones on the
    vectorized coordinates.
    """

    def __init__(self, d):
        self.d = int(d)
        self.dim = svec_dim(self.d)

    def project(self, x):
        return np.maximum(np.asarray(x, dtype=np.float64), 0.0)

    def support(self, w, feas_tol):
        w = np.asarray(w)
        if np.max(w) <= feas_tol * (1.0 + np.linalg.norm(w)):
            return 0.0
        return np.inf


def project_cone(cone, x):
    x = np.asarray(x, dtype=np.float64)
    if x.size != cone.dim:
        raise DimensionMismatch(
            "point of length %d does not match cone dim %d" % (x.size, cone.dim))
    return cone.project(x)


# ---------------------------------------------------------------------------
# separable convex functions
# ---------------------------------------------------------------------------

class SeparableFunction:
    """Proper closed convex function with computable prox and conjugate."""

    dim = 0

    def value(self, x):
        """Smooth part of the function value (indicators report 0; feasibility
        lives with the cone residues)."""
        raise NotImplementedError

    def prox(self, t, x):
        raise NotImplementedError

    def conjugate(self, w, feas_tol):
        raise NotImplementedError

    @property
    def is_zero(self):
        return False


class Zero(SeparableFunction):
    def __init__(self, n):
        self.dim = int(n)

    def value(self, x):
        return 0.0

    def prox(self, t, x):
        return np.asarray(x, dtype=np.float64)

    def conjugate(self, w, feas_tol):
        w = np.asarray(w)
        if np.linalg.norm(w) <= feas_tol:
            return 0.0
        return np.inf

    @property
    def is_zero(self):
        return True


class DiagQuadratic(SeparableFunction):
    """f(x) = (1/2) <x, diag(q) x> with q >= 0 elementwise."""

    def __init__(self, diag):
        diag = np.asarray(diag, dtype=np.float64)
        if np.any(diag < 0):
            raise DimensionMismatch("diagonal quadratic requires q >= 0")
        self.diag = diag
        self.dim = diag.size

    def value(self, x):
        return 0.5 * float(self.diag @ (np.asarray(x) ** 2))

    def prox(self, t, x):
        return np.asarray(x, dtype=np.float64) / (1.0 + t * self.diag)

    def conjugate(self, w, feas_tol):
        w = np.asarray(w, dtype=np.float64)
        zero = self.diag == 0.0
        if np.any(np.abs(w[zero]) > feas_tol):
            return np.inf
        pos = ~zero
        return 0.5 * float(np.sum(w[pos] ** 2 / self.diag[pos]))


class DenseQuadratic(SeparableFunction):
    """f(x) = (1/2) <x, Q x> with Q symmetric positive semidefinite."""

    def __init__(self, Q):
        if isinstance(Q, np.ndarray):
            Q = SymDense.from_full(Q)
        self.Q = Q
        self.dim = Q.dim
        full = Q.full()
        if full.size and float(np.linalg.eigvalsh(full)[0]) < -1e-10:
            raise DimensionMismatch("dense quadratic requires Q >= 0")
        self._full = full
        self._prox_factors = {}  # keyed by t; factors of I + t Q
        self._conj_factor = None

    def value(self, x):
        x = np.asarray(x)
        return 0.5 * float(x @ (self._full @ x))

    def prox(self, t, x):
        fac = self._prox_factors.get(t)
        if fac is None:
            sys = np.eye(self.dim) + t * self._full
            try:
                fac = chol_factor(sys)
            except Exception as exc:  # cannot happen for PSD Q
                raise SingularSystem(str(exc)) from exc
            self._prox_factors[t] = fac
        return fac.solve(np.asarray(x, dtype=np.float64))

    def conjugate(self, w, feas_tol):
        w = np.asarray(w, dtype=np.float64)
        if self._conj_factor is None:
            try:
                self._conj_factor = chol_factor(self._full)
            except Exception:
                self._conj_factor = "singular"
        if self._conj_factor == "singular":
            # PSD but singular: value is finite only on the range of Q
            vals, vecs = np.linalg.eigh(self._full)
            keep = vals > 1e-12 * max(1.0, vals[-1] if vals.size else 1.0)
            coef = vecs.T @ w
            if np.linalg.norm(coef[~keep]) > feas_tol * (1.0 + np.linalg.norm(w)):
                return np.inf
            return 0.5 * float(np.sum(coef[keep] ** 2 / vals[keep]))
        return 0.5 * float(w @ self._conj_factor.solve(w))


class IndicatorCone(SeparableFunction):
    def __init__(self, cone):
        self.cone = cone
        self.dim = cone.dim

    def value(self, x):
        return 0.0

    def prox(self, t, x):
        return self.cone.project(x)

    def conjugate(self, w, feas_tol):
        return self.cone.support(w, feas_tol)


# ---------------------------------------------------------------------------
# module-level operations
# ---------------------------------------------------------------------------

def prox(f, t, x):
    """Prox_{t f}(x) for t > 0."""
    if t <= 0:
        raise DimensionMismatch("prox parameter must be positive")
    x = np.asarray(x, dtype=np.float64)
    if x.size != f.dim:
        raise DimensionMismatch(
            "point of length %d does not match function dim %d" % (x.size, f.dim))
    return f.prox(t, x)


def prox_conjugate(f, t, x):
    """Prox_{f*/t}(x) via the Moreau identity."""
    x = np.asarray(x, dtype=np.float64)
    return x - prox(f, t, t * x) / t


def conjugate_value(f, w, feas_tol=1e-8):
    """f*(w), with indicator conjugates clamped to 0 for violations within
    ``feas_tol`` (relative).  Returns ``inf`` beyond the clamp."""
    w = np.asarray(w, dtype=np.float64)
    if isinstance(f, Cone):
        return f.support(w, feas_tol)
    return f.conjugate(w, feas_tol)


def scale_function(f, alpha):
    """The function alpha * f for alpha > 0 (indicators are invariant)."""
    if alpha <= 0:
        raise DimensionMismatch("scale must be positive")
    if isinstance(f, Zero) or isinstance(f, IndicatorCone):
        return f
    if isinstance(f, DiagQuadratic):
        return DiagQuadratic(alpha * f.diag)
    if isinstance(f, DenseQuadratic):
        return DenseQuadratic(SymDense(f.Q.dim, alpha * f.Q.packed))
    raise DimensionMismatch("cannot scale function of type %s" % type(f).__name__)


def add_diag_quadratic(f, eps):
    """The function f + (eps/2)||.||^2 for the quadratic extension."""
    if eps == 0.0:
        return f
    if isinstance(f, Zero):
        return DiagQuadratic(np.full(f.dim, eps))
    if isinstance(f, DiagQuadratic):
        return DiagQuadratic(f.diag + eps)
    if isinstance(f, DenseQuadratic):
        return DenseQuadratic(f._full + eps * np.eye(f.dim))
    raise DimensionMismatch(
        "cannot add a quadratic term to %s" % type(f).__name__)
