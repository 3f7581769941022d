"""Problem data model, primal/dual state, objectives and KKT residues.

A problem couples one optional first-stage equality block ``A x = b`` with
``N`` scenario rows ``B_i x + Bbar_i xbar_i = bbar_i``; the objective is
``theta(x) + <c, x> + sum_i (thetabar_i(xbar_i) + <cbar_i, xbar_i>)`` over
``x in K``, ``xbar_i in K_i``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blocklinalg import (BlockDiagOp, StackedOp, canonicalize,
                          compact_for_matvec, mv, to_dense, transposed)
from .errors import DimensionMismatch
from .proxcone import (Box, Cone, DiagQuadratic, FreeSpace, IndicatorCone,
                       NonnegOrthant, NonnegSymMatrices, SeparableFunction,
                       Zero, conjugate_value, prox)

_RANK_CHECK_DIM = 500


def stack_cones(cones):
    """One cone over the stacked scenario space when every block cone acts
    elementwise and shares a variant; None otherwise (e.g. PSD blocks)."""
    total = sum(c.dim for c in cones)
    if all(isinstance(c, NonnegOrthant) for c in cones):
        return NonnegOrthant(total)
    if all(isinstance(c, FreeSpace) for c in cones):
        return FreeSpace(total)
    if all(isinstance(c, (NonnegOrthant, NonnegSymMatrices)) for c in cones):
        # entrywise-nonnegative blocks: projection is an elementwise clip
        return NonnegOrthant(total)
    if all(isinstance(c, Box) for c in cones):
        return Box(np.concatenate([c.lower for c in cones]),
                   np.concatenate([c.upper for c in cones]))
    return None


def stack_functions(funcs):
    """Stacked separable function when all blocks share a variant with an
    elementwise prox; None otherwise."""
    total = sum(f.dim for f in funcs)
    if all(isinstance(f, Zero) for f in funcs):
        return Zero(total)
    if all(isinstance(f, DiagQuadratic) for f in funcs):
        return DiagQuadratic(np.concatenate([f.diag for f in funcs]))
    if all(isinstance(f, IndicatorCone) for f in funcs):
        cone = stack_cones([f.cone for f in funcs])
        return IndicatorCone(cone) if cone is not None else None
    return None


@dataclass
class ScenarioBlock:
    """One scenario: coupling map B, recourse map Bbar, rhs, cost, cone and
    separable objective for the second-stage variable."""

    B: object
    Bbar: object
    bbar: np.ndarray
    cbar: np.ndarray
    cone: Cone
    theta: SeparableFunction

    def __post_init__(self):
        self.B = canonicalize(self.B)
        self.Bbar = canonicalize(self.Bbar)
        self.bbar = np.asarray(self.bbar, dtype=np.float64)
        self.cbar = np.asarray(self.cbar, dtype=np.float64)

    @property
    def m(self):
        return self.B.shape[0]

    @property
    def n(self):
        return self.Bbar.shape[1]


class DBAProblem:
    """Immutable problem data plus stacked operators and offsets."""

    def __init__(self, A, b, c, cone, theta, scenarios, meta=None):
        if not scenarios:
            raise DimensionMismatch("problem needs at least one scenario block")
        self.c = np.asarray(c, dtype=np.float64)
        self.cone = cone
        self.theta = theta
        self.scenarios = list(scenarios)
        self.meta = dict(meta or {})

        self.n0 = self.c.size
        if A is not None:
            self.A = canonicalize(A)
            self.A_mv = compact_for_matvec(self.A)
            self.A_T = transposed(self.A_mv)
            self.b = np.asarray(b, dtype=np.float64)
            self.m0 = self.A.shape[0]
        else:
            self.A = None
            self.A_mv = None
            self.A_T = None
            self.b = None
            self.m0 = 0

        self.N = len(self.scenarios)
        self.B = StackedOp([s.B for s in self.scenarios])
        self.Bbar = BlockDiagOp([s.Bbar for s in self.scenarios])
        self.m_i = [s.m for s in self.scenarios]
        self.n_i = [s.n for s in self.scenarios]
        self.mbar = sum(self.m_i)
        self.nbar = sum(self.n_i)
        self.y_offsets = self.B.offsets
        self.x_offsets = self.Bbar.col_offsets
        self.bbar = np.concatenate([s.bbar for s in self.scenarios])
        self.cbar = np.concatenate([s.cbar for s in self.scenarios])
        # stacked fast paths when all scenario cones/objectives share an
        # elementwise variant
        self.scen_cone_stacked = stack_cones([s.cone for s in self.scenarios])
        self.scen_theta_stacked = stack_functions(
            [s.theta for s in self.scenarios])

    def y_slice(self, i):
        return slice(self.y_offsets[i], self.y_offsets[i + 1])

    def x_slice(self, i):
        return slice(self.x_offsets[i], self.x_offsets[i + 1])


@dataclass
class PrimalPoint:
    x: np.ndarray
    xbar: list

    def stacked(self):
        return np.concatenate(self.xbar)


@dataclass
class DualPoint:
    y: np.ndarray          # empty when A is absent
    ybar: np.ndarray       # stacked over scenarios
    z: np.ndarray
    zbar: np.ndarray       # stacked
    v: np.ndarray
    vbar: np.ndarray       # stacked


def zero_primal(problem):
    return PrimalPoint(np.zeros(problem.n0),
                       [np.zeros(n) for n in problem.n_i])


def zero_dual(problem):
    return DualPoint(
        y=np.zeros(problem.m0),
        ybar=np.zeros(problem.mbar),
        z=np.zeros(problem.n0),
        zbar=np.zeros(problem.nbar),
        v=np.zeros(problem.n0),
        vbar=np.zeros(problem.nbar),
    )


@dataclass
class KktResidues:
    eta_P: float
    eta_D: float
    eta_K: float
    eta_theta: float
    eta_Pbar: float
    eta_Dbar: float
    eta_Kbar: float
    eta_thetabar: float
    eta: float
    eta_gap: float

    FIELDS = ("eta_P", "eta_D", "eta_K", "eta_theta", "eta_Pbar",
              "eta_Dbar", "eta_Kbar", "eta_thetabar", "eta", "eta_gap")

    def as_dict(self):
        return {k: getattr(self, k) for k in self.FIELDS}


def validate(problem, rank_check=True):
    """Check dimension consistency; optionally estimate constraint ranks.

    Raises :class:`DimensionMismatch` on hard inconsistencies.  Returns a list
    of warning strings (rank deficiencies are warnings, not errors, and are
    only checked at small dimensions).
    """
    warnings = []
    n0 = problem.n0
    if problem.A is not None:
        if problem.A.shape[1] != n0:
            raise DimensionMismatch(
                "A has %d columns but c has length %d" % (problem.A.shape[1], n0))
        if problem.b.size != problem.A.shape[0]:
            raise DimensionMismatch(
                "b has length %d but A has %d rows" % (problem.b.size, problem.A.shape[0]))
    if problem.theta.dim != n0:
        raise DimensionMismatch(
            "theta dim %d does not match n0=%d" % (problem.theta.dim, n0))
    if problem.cone.dim != n0:
        raise DimensionMismatch(
            "first-stage cone dim %d does not match n0=%d" % (problem.cone.dim, n0))
    for i, s in enumerate(problem.scenarios):
        if s.B.shape[1] != n0:
            raise DimensionMismatch(
                "block %d: B has %d columns, expected n0=%d" % (i, s.B.shape[1], n0))
        if s.B.shape[0] != s.Bbar.shape[0]:
            raise DimensionMismatch(
                "block %d: B has %d rows but Bbar has %d" %
                (i, s.B.shape[0], s.Bbar.shape[0]))
        if s.bbar.size != s.m:
            raise DimensionMismatch(
                "block %d: bbar has length %d, expected %d" % (i, s.bbar.size, s.m))
        if s.cbar.size != s.n:
            raise DimensionMismatch(
                "block %d: cbar has length %d, expected %d" % (i, s.cbar.size, s.n))
        if s.cone.dim != s.n:
            raise DimensionMismatch(
                "block %d: cone dim %d does not match n_i=%d" % (i, s.cone.dim, s.n))
        if s.theta.dim != s.n:
            raise DimensionMismatch(
                "block %d: theta dim %d does not match n_i=%d" % (i, s.theta.dim, s.n))

    if rank_check:
        if problem.A is not None and max(problem.A.shape) <= _RANK_CHECK_DIM:
            r = _qr_rank(to_dense(problem.A))
            if r < problem.m0:
                warnings.append(
                    "A appears rank deficient (rank %d of %d rows)" % (r, problem.m0))
        if problem.mbar <= _RANK_CHECK_DIM and problem.n0 + problem.nbar <= _RANK_CHECK_DIM:
            full = np.hstack([
                np.vstack([to_dense(s.B) for s in problem.scenarios]),
                _blockdiag_dense(problem),
            ])
            r = _qr_rank(full)
            if r < problem.mbar:
                warnings.append(
                    "[B, Bbar] appears rank deficient (rank %d of %d rows)"
                    % (r, problem.mbar))
    return warnings


def _qr_rank(mat):
    if mat.size == 0:
        return 0
    import scipy.linalg as sla

    r = sla.qr(mat.T, mode="r", pivoting=True)[0]
    diag = np.abs(np.diag(r))
    if diag.size == 0:
        return 0
    tol = diag.max() * max(mat.shape) * np.finfo(float).eps
    return int(np.sum(diag > tol))


def _blockdiag_dense(problem):
    out = np.zeros((problem.mbar, problem.nbar))
    for i, s in enumerate(problem.scenarios):
        out[problem.y_slice(i), problem.x_slice(i)] = to_dense(s.Bbar)
    return out


def _scenario_theta_value(problem, xbar):
    st = problem.scen_theta_stacked
    if st is not None:
        return st.value(xbar)
    return sum(s.theta.value(xbar[problem.x_slice(i)])
               for i, s in enumerate(problem.scenarios))


def primal_objective(problem, point):
    """theta(x) + <c, x> + sum_i (thetabar_i(xbar_i) + <cbar_i, xbar_i>).

    Indicator components contribute 0; their feasibility is measured by the
    cone residues instead.
    """
    xbar = point.stacked()
    return (problem.theta.value(point.x) + float(problem.c @ point.x)
            + _scenario_theta_value(problem, xbar)
            + float(problem.cbar @ xbar))


def _blockwise_norms(w, offsets):
    sq = np.add.reduceat(w * w, offsets[:-1])
    return np.sqrt(np.maximum(sq, 0.0))


def _scenario_support_sum(problem, w, feas_tol):
    """sum_i delta*_{K_i}(w_i) over the stacked vector, with the same
    per-block clamping as the scalar path."""
    cones = [s.cone for s in problem.scenarios]
    offs = problem.x_offsets
    if all(isinstance(c, (NonnegOrthant, NonnegSymMatrices)) for c in cones):
        maxs = np.maximum.reduceat(w, offs[:-1])
        tols = feas_tol * (1.0 + _blockwise_norms(w, offs))
        return 0.0 if np.all(maxs <= tols) else np.inf
    total = 0.0
    for i, c in enumerate(cones):
        val = c.support(w[problem.x_slice(i)], feas_tol)
        if not np.isfinite(val):
            return np.inf
        total += val
    return total


def _scenario_conjugate_sum(problem, w, feas_tol):
    """sum_i thetabar_i*(w_i) over the stacked vector."""
    funcs = [s.theta for s in problem.scenarios]
    offs = problem.x_offsets
    if all(isinstance(f, Zero) for f in funcs):
        norms = _blockwise_norms(w, offs)
        return 0.0 if np.all(norms <= feas_tol) else np.inf
    if all(isinstance(f, DiagQuadratic) for f in funcs):
        q = problem.scen_theta_stacked.diag
        zero = q == 0.0
        if np.any(np.abs(w[zero]) > feas_tol):
            return np.inf
        pos = ~zero
        return 0.5 * float(np.sum(w[pos] ** 2 / q[pos]))
    total = 0.0
    for i, f in enumerate(funcs):
        val = f.conjugate(w[problem.x_slice(i)], feas_tol)
        if not np.isfinite(val):
            return np.inf
        total += val
    return total


def dual_objective(problem, dual, feas_tol=1e-8):
    """-theta*(-v) - delta*_K(-z) + <b,y> - sum_i(...) + <bbar, ybar>.

    Returns ``-inf`` when any conjugate is infinite beyond the clamp."""
    total = 0.0
    conj = conjugate_value(problem.theta, -dual.v, feas_tol)
    if not np.isfinite(conj):
        return -np.inf
    total -= conj
    conj = conjugate_value(problem.cone, -dual.z, feas_tol)
    if not np.isfinite(conj):
        return -np.inf
    total -= conj
    if problem.A is not None:
        total += float(problem.b @ dual.y)
    conj = _scenario_conjugate_sum(problem, -dual.vbar, feas_tol)
    if not np.isfinite(conj):
        return -np.inf
    total -= conj
    conj = _scenario_support_sum(problem, -dual.zbar, feas_tol)
    if not np.isfinite(conj):
        return -np.inf
    total -= conj
    total += float(problem.bbar @ dual.ybar)
    return total


def kkt_residues(problem, point, dual, feas_tol=1e-8):
    """Relative KKT residues, their weighted maximum and the duality gap."""
    return kkt_full(problem, point, dual, feas_tol)[0]


def kkt_full(problem, point, dual, feas_tol=1e-8):
    """Residues plus both objective values (computed once)."""
    x = point.x
    xbar = point.stacked()
    nrm = np.linalg.norm

    if problem.A is not None:
        eta_P = nrm(mv(problem.A_mv, x) - problem.b) / (1.0 + nrm(problem.b))
        Aty = mv(problem.A_T, dual.y)
    else:
        eta_P = 0.0
        Aty = 0.0

    d_res = Aty + problem.B.apply_adjoint(dual.ybar) + dual.z + dual.v - problem.c
    eta_D = nrm(d_res) / (1.0 + nrm(problem.c))

    eta_K = nrm(x - problem.cone.project(x - dual.z)) / (1.0 + nrm(x) + nrm(dual.z))
    eta_theta = nrm(x - prox(problem.theta, 1.0, x - dual.v)) / (
        1.0 + nrm(x) + nrm(dual.v))

    p_res = problem.B.apply(x) + problem.Bbar.apply(xbar) - problem.bbar
    eta_Pbar = nrm(p_res) / (1.0 + nrm(problem.bbar))

    d_res_bar = problem.Bbar.apply_adjoint(dual.ybar) + dual.zbar + dual.vbar - problem.cbar
    eta_Dbar = nrm(d_res_bar) / (1.0 + nrm(problem.cbar))

    if problem.scen_cone_stacked is not None:
        proj_bar = problem.scen_cone_stacked.project(xbar - dual.zbar)
    else:
        proj_bar = np.empty_like(xbar)
        for i, s in enumerate(problem.scenarios):
            sl = problem.x_slice(i)
            proj_bar[sl] = s.cone.project(xbar[sl] - dual.zbar[sl])
    if problem.scen_theta_stacked is not None:
        prox_bar = prox(problem.scen_theta_stacked, 1.0, xbar - dual.vbar)
    else:
        prox_bar = np.empty_like(xbar)
        for i, s in enumerate(problem.scenarios):
            sl = problem.x_slice(i)
            prox_bar[sl] = prox(s.theta, 1.0, xbar[sl] - dual.vbar[sl])
    eta_Kbar = nrm(xbar - proj_bar) / (1.0 + nrm(xbar) + nrm(dual.zbar))
    eta_thetabar = nrm(xbar - prox_bar) / (1.0 + nrm(xbar) + nrm(dual.vbar))

    eta = max(eta_P, eta_D, 0.2 * eta_K, 0.2 * eta_theta,
              eta_Pbar, eta_Dbar, 0.2 * eta_Kbar, 0.2 * eta_thetabar)

    obj_p = primal_objective(problem, point)
    obj_d = dual_objective(problem, dual, feas_tol)
    if np.isfinite(obj_d):
        eta_gap = abs(obj_p - obj_d) / (1.0 + abs(obj_p) + abs(obj_d))
    else:
        eta_gap = np.inf

    res = KktResidues(
        eta_P=float(eta_P), eta_D=float(eta_D), eta_K=float(eta_K),
        eta_theta=float(eta_theta), eta_Pbar=float(eta_Pbar),
        eta_Dbar=float(eta_Dbar), eta_Kbar=float(eta_Kbar),
        eta_thetabar=float(eta_thetabar), eta=float(eta),
        eta_gap=float(eta_gap),
    )
    return res, obj_p, obj_d
