"""Constructors turning application models into block-angular problems:
two-stage stochastic programs, facility-location relaxations, and random
QP / SDP instance generators.

Random instances plant a feasible primal point (and, where the objective is
linear, a feasible dual point as well) so that every generated problem is
solvable and cross-solver objective agreement can serve as an oracle.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .blocklinalg import sparse_from_triplets, svec, svec_dim
from .errors import DimensionMismatch
from .model import DBAProblem, ScenarioBlock
from .proxcone import (Cone, DenseQuadratic, DiagQuadratic, IndicatorCone,
                       NonnegOrthant, NonnegSymMatrices, PsdCone,
                       SeparableFunction, Zero, add_diag_quadratic,
                       scale_function)

_PROB_TOL = 1e-10


@dataclass
class ScenarioData:
    """Raw (unweighted) data of one sampled scenario."""

    probability: float
    c_tilde: np.ndarray
    b_tilde: np.ndarray
    B_tilde: object            # coupling map, maps first stage to scenario rows
    Bbar_tilde: object         # recourse map
    cone: Cone
    theta: SeparableFunction


def build_two_stage(A, b, c, cone, theta, scenarios, quad_eps=0.0):
    """Assemble the deterministic equivalent of a sampled two-stage program.

    Scenario costs and objectives are folded with their probabilities
    (cbar_i = p_i * c_tilde_i, thetabar_i = p_i * theta_tilde_i).  With
    ``quad_eps > 0``, the term (quad_eps/2)||.||^2 is added to theta and to
    every folded thetabar_i, which turns a linear model into its quadratic
    extension.
    """
    probs = np.array([s.probability for s in scenarios], dtype=np.float64)
    if np.any(probs <= 0):
        raise DimensionMismatch("scenario probabilities must be positive")
    total = probs.sum()
    if abs(total - 1.0) > _PROB_TOL:
        warnings.warn("scenario probabilities sum to %.12g; normalizing" % total)
        probs = probs / total

    blocks = []
    for p_i, s in zip(probs, scenarios):
        theta_i = scale_function(s.theta, p_i)
        theta_i = add_diag_quadratic(theta_i, quad_eps)
        blocks.append(ScenarioBlock(
            B=s.B_tilde, Bbar=s.Bbar_tilde, bbar=s.b_tilde,
            cbar=p_i * np.asarray(s.c_tilde, dtype=np.float64),
            cone=s.cone, theta=theta_i))

    theta0 = add_diag_quadratic(theta, quad_eps)
    meta = {"two_stage": True, "probabilities": probs.tolist(),
            "quad_eps": quad_eps}
    return DBAProblem(A, b, c, cone, theta0, blocks, meta=meta)


# ---------------------------------------------------------------------------
# facility location
# ---------------------------------------------------------------------------

@dataclass
class UflInstance:
    """Uncapacitated facility location data: opening costs c (p,), linear
    allocation costs P (p, q) and separable quadratic allocation costs
    Q (p, q), all nonnegative."""

    c: np.ndarray
    P: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=np.float64)
        self.P = np.atleast_2d(np.asarray(self.P, dtype=np.float64))
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=np.float64))
        if self.P.shape != self.Q.shape or self.P.shape[0] != self.c.size:
            raise DimensionMismatch("cost arrays have inconsistent shapes")
        if np.any(self.c < 0) or np.any(self.P < 0) or np.any(self.Q < 0):
            raise DimensionMismatch("facility costs must be nonnegative")

    @property
    def p(self):
        return self.c.size

    @property
    def q(self):
        return self.P.shape[1]


def _ufl_first_stage_rows(p):
    """svec rows of the first-stage constraint matrices over S^{1+p}:
    row 0 picks the corner entry, row i reads u_i - U_ii."""
    d = 1 + p
    rows = np.zeros((d, svec_dim(d)))
    a0 = np.zeros((d, d))
    a0[0, 0] = 1.0
    rows[0] = svec(a0)
    for i in range(1, d):
        ai = np.zeros((d, d))
        ai[0, i] = ai[i, 0] = 0.5
        ai[i, i] = -1.0
        rows[i] = svec(ai)
    return rows


def _ufl_coupling_rows(p):
    """svec rows reading (0, u): row 0 is zero, row i reads u_i."""
    d = 1 + p
    rows = np.zeros((d, svec_dim(d)))
    for i in range(1, d):
        ei = np.zeros((d, d))
        ei[0, i] = ei[i, 0] = 0.5
        rows[i] = svec(ei)
    return rows


def build_ufl_dnn(inst):
    """Doubly nonnegative relaxation of the facility location problem as a
    block-angular program.

    The first-stage variable is the lifted matrix [[alpha, u^T], [u, U]] in
    S^{1+p}, constrained to be PSD and entrywise nonnegative; every customer
    contributes one scenario block on (S_j; Z_j) in R^{2p} with identical
    coupling and recourse maps across customers.
    """
    p, q = inst.p, inst.q
    d = 1 + p
    n0 = svec_dim(d)

    A = sp.csr_matrix(_ufl_first_stage_rows(p))
    b = np.zeros(d)
    b[0] = 1.0

    cmat = np.zeros((d, d))
    cmat[0, 1:] = inst.c / 2.0
    cmat[1:, 0] = inst.c / 2.0
    c = svec(cmat)

    B = sp.csr_matrix(_ufl_coupling_rows(p))
    Bbar = sp.csr_matrix(np.block([
        [np.ones((1, p)), np.zeros((1, p))],
        [-np.eye(p), -np.eye(p)],
    ]))
    bbar = np.zeros(d)
    bbar[0] = 1.0

    blocks = []
    for j in range(q):
        cbar = np.concatenate([inst.P[:, j], np.zeros(p)])
        theta_j = DiagQuadratic(np.concatenate([inst.Q[:, j], np.zeros(p)]))
        blocks.append(ScenarioBlock(B=B, Bbar=Bbar, bbar=bbar, cbar=cbar,
                                    cone=NonnegOrthant(2 * p), theta=theta_j))

    theta = IndicatorCone(NonnegSymMatrices(d))
    meta = {"ufl_p": p, "ufl_q": q}
    return DBAProblem(A, b, c, PsdCone(d), theta, blocks, meta=meta)


def ufl_extra_constraints(problem, H, beta):
    """Append lifted linear constraints H u = beta of the original binary
    variable: each row h_k adds <H_k, U> = beta_k and <H_k_hat, U> = beta_k^2
    with H_k = [[0, h^T/2], [h/2, 0]] and H_k_hat = [[0, 0], [0, h h^T]]."""
    p = problem.meta.get("ufl_p")
    if p is None:
        raise DimensionMismatch("extra constraints apply to facility problems")
    H = np.atleast_2d(np.asarray(H, dtype=np.float64))
    beta = np.atleast_1d(np.asarray(beta, dtype=np.float64))
    if H.shape[1] != p or H.shape[0] != beta.size:
        raise DimensionMismatch("H must be (m, p) with matching beta")
    d = 1 + p
    new_rows = []
    new_rhs = []
    for h, bk in zip(H, beta):
        hk = np.zeros((d, d))
        hk[0, 1:] = h / 2.0
        hk[1:, 0] = h / 2.0
        new_rows.append(svec(hk))
        new_rhs.append(bk)
        hhat = np.zeros((d, d))
        hhat[1:, 1:] = np.outer(h, h)
        new_rows.append(svec(hhat))
        new_rhs.append(bk ** 2)
    A_new = sp.vstack([sp.csr_matrix(problem.A), sp.csr_matrix(np.array(new_rows))])
    b_new = np.concatenate([problem.b, new_rhs])
    return DBAProblem(A_new.tocsr(), b_new, problem.c, problem.cone,
                      problem.theta, problem.scenarios, meta=dict(problem.meta))


def random_ufl(p, q, seed, quadratic=True, cost_scale=10.0):
    """Random facility-location instance with nonnegative costs."""
    rng = np.random.default_rng(seed)
    c = rng.uniform(0.5, 1.0, p) * cost_scale
    P = rng.uniform(0.1, 1.0, (p, q)) * cost_scale
    Q = rng.uniform(0.1, 1.0, (p, q)) * cost_scale if quadratic else np.zeros((p, q))
    return UflInstance(c=c, P=P, Q=Q)


# ---------------------------------------------------------------------------
# random generators
# ---------------------------------------------------------------------------

def _sprand(rng, m, n, dens):
    """Sparse uniform(0,1)-valued matrix with every row nonempty (full row
    rank needs no zero rows)."""
    nnz_target = max(int(round(dens * m * n)), m)
    idx = rng.choice(m * n, size=min(nnz_target, m * n), replace=False)
    rows, cols = np.unravel_index(idx, (m, n))
    rows = list(rows)
    cols = list(cols)
    present = set(rows)
    for r in range(m):
        if r not in present:
            rows.append(r)
            cols.append(int(rng.integers(n)))
    vals = rng.uniform(0.0, 1.0, len(rows))
    return sparse_from_triplets((m, n), rows, cols, vals)


def _sparse_spd(rng, n, dens):
    m = _sprand(rng, n, n, dens)
    full = np.asarray((m.T @ m).todense()) + 1e-3 * np.eye(n)
    return full


def random_qp(m0, n0, mi, ni, N, seed):
    """Random convex QP with block-angular rows, orthant sets and sparse
    positive definite quadratic terms; feasible by a planted point."""
    rng = np.random.default_rng(seed)
    A = _sprand(rng, m0, n0, 10.0 / n0)
    Q = DenseQuadratic(_sparse_spd(rng, n0, 2.0 / n0))
    c = rng.standard_normal(n0)
    x0 = rng.uniform(0.0, 1.0, n0)
    b = A @ x0
    blocks = []
    for _ in range(N):
        B = _sprand(rng, mi, n0, 10.0 / n0)
        Bbar = _sprand(rng, mi, ni, 10.0 / ni)
        Qi = DenseQuadratic(_sparse_spd(rng, ni, 2.0 / ni))
        cbar = rng.standard_normal(ni)
        xb0 = rng.uniform(0.0, 1.0, ni)
        bbar = B @ x0 + Bbar @ xb0
        blocks.append(ScenarioBlock(B=B, Bbar=Bbar, bbar=bbar, cbar=cbar,
                                    cone=NonnegOrthant(ni), theta=Qi))
    meta = {"generator": "rand-qp", "seed": seed,
            "params": {"m0": m0, "n0": n0, "mi": mi, "ni": ni, "N": N}}
    return DBAProblem(A, b, c, NonnegOrthant(n0), Q, blocks, meta=meta)


def _rand_psd_rows(rng, count, d, dens):
    """Constraint rows <C C^T, .> from sparse C, in svec coordinates."""
    rows = np.empty((count, svec_dim(d)))
    for k in range(count):
        C = _sprand(rng, d, d, dens)
        rows[k] = svec(np.asarray((C @ C.T).todense()))
    return rows


def random_sdp(m0, n0, mi, ni, N, seed):
    """Random linear SDP with block-angular rows and PSD constraint matrices.

    Both a primal point (PSD) and a dual point (multipliers plus PSD slacks)
    are planted, so the instance is solvable with a finite optimal value.
    """
    rng = np.random.default_rng(seed)
    A = _rand_psd_rows(rng, m0, n0, 0.2)
    R = rng.standard_normal((n0, n0))
    X0 = svec(R @ R.T)
    b = A @ X0
    y0 = rng.standard_normal(m0)
    R = rng.standard_normal((n0, n0))
    c = A.T @ y0 + svec(R @ R.T)
    blocks = []
    bty = np.zeros(svec_dim(n0))
    for _ in range(N):
        B = _rand_psd_rows(rng, mi, n0, 5.0 / ni)
        Bbar = _rand_psd_rows(rng, mi, ni, 5.0 / ni)
        R = rng.standard_normal((ni, ni))
        Xb0 = svec(R @ R.T)
        bbar = B @ X0 + Bbar @ Xb0
        ybar0 = rng.standard_normal(mi)
        R = rng.standard_normal((ni, ni))
        cbar = Bbar.T @ ybar0 + svec(R @ R.T)
        bty += B.T @ ybar0
        blocks.append(ScenarioBlock(
            B=B, Bbar=Bbar, bbar=bbar, cbar=cbar, cone=PsdCone(ni),
            theta=Zero(svec_dim(ni))))
    c = c + bty
    meta = {"generator": "rand-sdp", "seed": seed,
            "params": {"m0": m0, "n0": n0, "mi": mi, "ni": ni, "N": N}}
    return DBAProblem(A, b, c, PsdCone(n0), Zero(svec_dim(n0)), blocks,
                      meta=meta)


def random_two_stage(m0, n0, mi, ni, N, seed, quad_eps=0.0):
    """Random two-stage stochastic LP (optionally with the quadratic
    extension) carrying scenario probabilities for scenario-splitting
    methods.  Primal and dual feasible points are planted."""
    rng = np.random.default_rng(seed)
    A = _sprand(rng, m0, n0, min(1.0, 10.0 / n0))
    x0 = rng.uniform(0.1, 1.0, n0)
    b = A @ x0
    y0 = rng.standard_normal(m0)
    z0 = rng.uniform(0.0, 1.0, n0)
    c = np.asarray((A.T @ y0)).ravel() + z0

    probs = rng.uniform(0.5, 1.5, N)
    probs = probs / probs.sum()
    scenarios = []
    bty = np.zeros(n0)
    for i in range(N):
        B = _sprand(rng, mi, n0, min(1.0, 10.0 / n0))
        Bbar = _sprand(rng, mi, ni, min(1.0, 10.0 / ni))
        xb0 = rng.uniform(0.1, 1.0, ni)
        bbar = B @ x0 + Bbar @ xb0
        ybar0 = rng.standard_normal(mi)
        zbar0 = rng.uniform(0.0, 1.0, ni)
        cbar_folded = np.asarray((Bbar.T @ ybar0)).ravel() + zbar0
        bty += np.asarray((B.T @ ybar0)).ravel()
        scenarios.append(ScenarioData(
            probability=float(probs[i]), c_tilde=cbar_folded / probs[i],
            b_tilde=bbar, B_tilde=B, Bbar_tilde=Bbar,
            cone=NonnegOrthant(ni), theta=Zero(ni)))
    c = c + bty
    prob = build_two_stage(A, b, c, NonnegOrthant(n0), Zero(n0), scenarios,
                           quad_eps=quad_eps)
    prob.meta.update({"generator": "two-stage", "seed": seed,
                      "params": {"m0": m0, "n0": n0, "mi": mi, "ni": ni,
                                 "N": N, "quad_eps": quad_eps}})
    return prob
