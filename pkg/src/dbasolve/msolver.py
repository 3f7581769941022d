"""Structured solvers for the coupled system M ybar = h.

M = B B* + Bbar Bbar* + Jbar couples all scenarios through the first-stage
columns of B.  Strategies:

* ``chol``       factor M assembled once (small row totals);
* ``smw``        Sherman-Morrison-Woodbury with Jbar = 0:
                 M^{-1} h = D^{-1} h - D^{-1} B G^{-1} B* D^{-1} h with
                 D_i = Bbar_i Bbar_i* and G = I + sum_i B_i* D_i^{-1} B_i;
* ``smw-diag``   Jbar_i = lam_max(Bbar_i Bbar_i*) I - Bbar_i Bbar_i*, making
                 D_i diagonal and G sparser;
* ``block-diag`` Jbar chosen so that M becomes block diagonal and each
                 scenario solves independently;
* ``shared``     identical B_i (and optionally Bbar_i) collapse G to
                 I + B_1*(sum_i D_i^{-1})B_1 or I + N B_1* D_1^{-1} B_1;
* ``ufl``        shared blocks plus the analytic inverse of Bbar_j Bbar_j*
                 available for facility-location relaxations.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .blocklinalg import (canonicalize, chol_factor, maybe_densify, mv,
                          op_norm_2, pcg_solve, power_lambda_max, same_canonical,
                          to_dense)
from .errors import NotPositiveDefinite, StrategyPrecondition

STRATEGIES = ("chol", "smw", "smw-diag", "block-diag", "shared", "ufl")

_G_CHOL_DIM = 2000
_EBJ_MAX_N = 64


def auto_strategy(problem):
    """Strategy selection by problem structure and total scenario rows."""
    if problem.meta.get("ufl_p") is not None:
        return "ufl"
    if _blocks_shared(problem):
        return "shared"
    mbar = problem.mbar
    if mbar < 5000:
        return "chol"
    if mbar < 50000:
        return "smw"
    return "smw-diag"


def _blocks_shared(problem):
    return problem.B.shared


def _bbar_shared(problem):
    blocks = [s.Bbar for s in problem.scenarios]
    return all(same_canonical(blocks[0], b) for b in blocks[1:])


def assemble_m_dense(problem, jbar=None):
    """Dense M = B B^T + diag(Bbar_i Bbar_i^T) + Jbar (oracle/tests helper)."""
    Bd = np.vstack([to_dense(s.B) for s in problem.scenarios])
    M = Bd @ Bd.T
    for i, s in enumerate(problem.scenarios):
        bb = to_dense(s.Bbar)
        sl = problem.y_slice(i)
        M[sl, sl] += bb @ bb.T
    if jbar is not None:
        M = M + to_dense(jbar)
    return M


def std_block_diag_J(problem):
    """Dense Jbar_std = (N+1) diag(B_i B_i^T) - B B^T (conservative block-
    diagonalizing proximal term, PSD by the norm inequality)."""
    N = problem.N
    Bd = np.vstack([to_dense(s.B) for s in problem.scenarios])
    J = -(Bd @ Bd.T)
    for i, s in enumerate(problem.scenarios):
        bi = to_dense(s.B)
        sl = problem.y_slice(i)
        J[sl, sl] += (N + 1) * (bi @ bi.T)
    return J


def ebj_block_diag_J(problem, norms=None):
    """Dense block-diagonalizing Jbar built from pairwise coupling norms:
    diag(B_i B_i^T + sum_{j != i} ||B_i B_j^T||_2 I) - B B^T."""
    if norms is None:
        norms = pairwise_coupling_norms(problem)
    Bd = np.vstack([to_dense(s.B) for s in problem.scenarios])
    J = -(Bd @ Bd.T)
    for i, s in enumerate(problem.scenarios):
        bi = to_dense(s.B)
        sl = problem.y_slice(i)
        J[sl, sl] += bi @ bi.T + norms[i] * np.eye(s.m)
    return J


_EXACT_NORM_DIM = 256


def pairwise_coupling_norms(problem):
    """nu_i = sum_{j != i} ||B_i B_j^T||_2, computed once and cached on the
    problem metadata (O(N^2) products of small row blocks).

    Small products get an exact SVD so the block-diagonalizing proximal term
    stays PSD to machine precision; larger ones use power iteration with a
    small safety inflation to cover its one-sided error.
    """
    cached = problem.meta.get("_ebj_norms")
    if cached is not None:
        return cached
    N = problem.N
    norm = np.zeros((N, N))
    for i in range(N):
        Bi = problem.scenarios[i].B
        for j in range(i + 1, N):
            prod = Bi @ problem.scenarios[j].B.T
            if min(prod.shape) <= _EXACT_NORM_DIM:
                val = float(np.linalg.svd(to_dense(prod), compute_uv=False)[0])
            else:
                val = op_norm_2(canonicalize(prod), tol=1e-10) * (1.0 + 1e-8)
            norm[i, j] = norm[j, i] = val
    nus = norm.sum(axis=1)
    problem.meta["_ebj_norms"] = nus
    return nus


class MSolver:
    """Precomputed solver for M ybar = h under a chosen strategy."""

    def __init__(self, problem, strategy, apply_jbar, solve_impl, pcg_tol):
        self.problem = problem
        self.strategy = strategy
        self._apply_jbar = apply_jbar
        self._solve_impl = solve_impl
        self.pcg_tol = pcg_tol
        self.last_relres = 0.0
        self.last_inner_iters = 0

    def apply_m(self, w):
        """M w, including the strategy's own Jbar."""
        p = self.problem
        out = p.B.apply(p.B.apply_adjoint(w)) + p.Bbar.apply(p.Bbar.apply_adjoint(w))
        if self._apply_jbar is not None:
            out += self._apply_jbar(w)
        return out

    def solve(self, h, tol=None, check_residual=False):
        stats = {"inner_iters": 0}
        y = self._solve_impl(h, tol if tol is not None else self.pcg_tol,
                             stats=stats)
        self.last_inner_iters = stats["inner_iters"]
        if check_residual:
            nh = np.linalg.norm(h)
            self.last_relres = float(
                np.linalg.norm(self.apply_m(y) - h) / nh) if nh > 0 else 0.0
        return y


def build_msolver(problem, strategy="auto", jbar=None, pcg_tol=1e-10,
                  prefer_pcg=False):
    """Precompute a structured solver for this problem's M system.

    ``jbar`` overrides the strategy default: ``None`` keeps it, an explicit
    matrix is added to M (``chol`` only), and for ``block-diag`` the strings
    ``"ebj"`` / ``"std"`` pick the coupling-norm or conservative variant.
    """
    if strategy == "auto":
        strategy = auto_strategy(problem)
    if strategy not in STRATEGIES:
        raise StrategyPrecondition("unknown strategy %r" % (strategy,))

    if strategy == "chol":
        return _build_chol(problem, jbar, pcg_tol)
    if strategy == "smw":
        return _build_smw(problem, pcg_tol, prefer_pcg, diagonal=False)
    if strategy == "smw-diag":
        return _build_smw(problem, pcg_tol, prefer_pcg, diagonal=True)
    if strategy == "block-diag":
        return _build_block_diag(problem, jbar, pcg_tol)
    if strategy == "shared":
        return _build_shared(problem, pcg_tol, prefer_pcg, analytic_ufl=False)
    return _build_shared(problem, pcg_tol, prefer_pcg, analytic_ufl=True)


# ---------------------------------------------------------------------------
# strategy builders
# ---------------------------------------------------------------------------

def _build_chol(problem, jbar, pcg_tol):
    Bs = sp.vstack([canonicalize(sp.csr_matrix(s.B)) for s in problem.scenarios])
    M = (Bs @ Bs.T) + sp.block_diag(
        [sp.csr_matrix(s.Bbar) @ sp.csr_matrix(s.Bbar).T for s in problem.scenarios])
    apply_jbar = None
    if jbar is not None:
        M = M + sp.csr_matrix(jbar)
        jmat = canonicalize(jbar)
        apply_jbar = lambda w: mv(jmat, w)
    fac = chol_factor(maybe_densify(M.tocsr()))
    return MSolver(problem, "chol", apply_jbar,
                   lambda h, tol, stats=None: fac.solve(h), pcg_tol)


def _build_smw(problem, pcg_tol, prefer_pcg, diagonal):
    n0 = problem.n0
    if diagonal:
        lams = []
        for s in problem.scenarios:
            bb = canonicalize(sp.csr_matrix(s.Bbar))
            gram = bb @ bb.T
            lam, _ = power_lambda_max(lambda w: mv(gram, w), s.m)
            if lam <= 0:
                raise StrategyPrecondition(
                    "smw-diag needs Bbar_i Bbar_i^T with positive spectrum")
            lams.append(lam)
        dinv_apply = _make_blockwise(problem, [
            (lambda lam: (lambda h: h / lam))(lam) for lam in lams])
        G = sp.identity(n0, format="csr")
        for lam, s in zip(lams, problem.scenarios):
            Bi = sp.csr_matrix(s.B)
            G = G + (Bi.T @ Bi) / lam
        grams = [canonicalize(sp.csr_matrix(s.Bbar) @ sp.csr_matrix(s.Bbar).T)
                 for s in problem.scenarios]

        def apply_jbar(w):
            out = np.empty_like(w)
            for i, (lam, gram) in enumerate(zip(lams, grams)):
                sl = problem.y_slice(i)
                out[sl] = lam * w[sl] - mv(gram, w[sl])
            return out
    else:
        facs = []
        for i, s in enumerate(problem.scenarios):
            bb = canonicalize(sp.csr_matrix(s.Bbar))
            try:
                facs.append(chol_factor(to_dense(bb @ bb.T)))
            except NotPositiveDefinite as exc:
                raise StrategyPrecondition(
                    "smw requires Bbar_%d Bbar_%d^T positive definite: %s"
                    % (i, i, exc)) from exc
        dinv_apply = _make_blockwise(problem, [f.solve for f in facs])
        G = np.eye(n0)
        for f, s in zip(facs, problem.scenarios):
            Bd = to_dense(s.B)
            G += Bd.T @ f.solve(Bd)
        apply_jbar = None

    g_solve = _make_g_solver(maybe_densify(G if isinstance(G, np.ndarray) else G.tocsr()),
                             prefer_pcg)
    impl = _make_smw_solve(problem, dinv_apply, g_solve)
    return MSolver(problem, "smw-diag" if diagonal else "smw", apply_jbar, impl, pcg_tol)


def _build_block_diag(problem, jbar, pcg_tol):
    variant = jbar if jbar in ("ebj", "std") else None
    if variant is None:
        variant = "std" if problem.N > _EBJ_MAX_N else "ebj"
    N = problem.N
    if variant == "ebj":
        nus = pairwise_coupling_norms(problem)
    facs = []
    grams = []
    for i, s in enumerate(problem.scenarios):
        Bd = to_dense(s.B)
        bbd = to_dense(s.Bbar)
        E = bbd @ bbd.T
        if variant == "ebj":
            E += Bd @ Bd.T + nus[i] * np.eye(s.m)
        else:
            E += (N + 1) * (Bd @ Bd.T)
        facs.append(chol_factor(E))
        grams.append((canonicalize(sp.csr_matrix(s.B)),
                      canonicalize(sp.csr_matrix(s.Bbar))))

    def impl(h, tol, stats=None):
        out = np.empty_like(h)
        for i, f in enumerate(facs):
            sl = problem.y_slice(i)
            out[sl] = f.solve(h[sl])
        return out

    B_op = problem.B

    if variant == "ebj":
        def apply_jbar(w):
            out = -B_op.apply(B_op.apply_adjoint(w))
            for i, (Bi, _) in enumerate(grams):
                sl = problem.y_slice(i)
                out[sl] += mv(Bi, mv(Bi.T, w[sl])) + nus[i] * w[sl]
            return out
    else:
        def apply_jbar(w):
            out = -B_op.apply(B_op.apply_adjoint(w))
            for i, (Bi, _) in enumerate(grams):
                sl = problem.y_slice(i)
                out[sl] += (N + 1) * mv(Bi, mv(Bi.T, w[sl]))
            return out

    solver = MSolver(problem, "block-diag", apply_jbar, impl, pcg_tol)
    solver.jbar_variant = variant
    return solver


def _build_shared(problem, pcg_tol, prefer_pcg, analytic_ufl):
    if not _blocks_shared(problem):
        raise StrategyPrecondition(
            "shared strategy requires bit-identical coupling blocks B_i")
    bbar_shared = _bbar_shared(problem)
    n0 = problem.n0
    B1 = problem.scenarios[0].B
    B1d = to_dense(B1)
    N = problem.N

    if analytic_ufl:
        p = problem.meta.get("ufl_p")
        if p is None or not bbar_shared:
            raise StrategyPrecondition(
                "ufl strategy requires a facility-location problem with "
                "shared recourse blocks")
        dinv1 = lambda h: ufl_bbar_gram_inv_apply(h, p)
        dinv_apply = _make_blockwise(problem, [dinv1] * N)
        dinv1_matrix = _apply_to_columns(dinv1, np.eye(problem.scenarios[0].m))
        G = np.eye(n0) + N * (B1d.T @ (dinv1_matrix @ B1d))
    else:
        if bbar_shared:
            bb = canonicalize(sp.csr_matrix(problem.scenarios[0].Bbar))
            try:
                fac = chol_factor(to_dense(bb @ bb.T))
            except NotPositiveDefinite as exc:
                raise StrategyPrecondition(
                    "shared strategy needs Bbar_1 Bbar_1^T positive definite: %s"
                    % exc) from exc
            dinv_apply = _make_blockwise(problem, [fac.solve] * N)
            G = np.eye(n0) + N * (B1d.T @ fac.solve(B1d))
        else:
            facs = []
            for i, s in enumerate(problem.scenarios):
                bb = canonicalize(sp.csr_matrix(s.Bbar))
                try:
                    facs.append(chol_factor(to_dense(bb @ bb.T)))
                except NotPositiveDefinite as exc:
                    raise StrategyPrecondition(
                        "shared strategy needs Bbar_%d Bbar_%d^T positive "
                        "definite: %s" % (i, i, exc)) from exc
            dinv_apply = _make_blockwise(problem, [f.solve for f in facs])
            Wsum = sum(f.solve(np.eye(problem.scenarios[0].m)) for f in facs)
            G = np.eye(n0) + B1d.T @ (Wsum @ B1d)

    g_solve = _make_g_solver(G, prefer_pcg)
    impl = _make_smw_solve(problem, dinv_apply, g_solve)
    return MSolver(problem, "ufl" if analytic_ufl else "shared", None, impl, pcg_tol)


def ufl_bbar_gram_inv_apply(h, p):
    """Apply the closed-form inverse of Bbar_j Bbar_j^T for the facility
    relaxation block [[e^T, 0], [-I, -I]]: the inverse is
    [[0, 0], [0, I/2]] + (1/(2p)) [2; e][2; e]^T."""
    h = np.asarray(h, dtype=np.float64)
    scale = (2.0 * h[0] + np.sum(h[1:])) / (2.0 * p)
    out = np.empty_like(h)
    out[0] = 2.0 * scale
    out[1:] = 0.5 * h[1:] + scale
    return out


def _apply_to_columns(fn, mat):
    cols = [fn(mat[:, j]) for j in range(mat.shape[1])]
    return np.column_stack(cols)


def _make_blockwise(problem, solvers):
    def apply(h):
        out = np.empty_like(h)
        for i, f in enumerate(solvers):
            sl = problem.y_slice(i)
            out[sl] = f(h[sl])
        return out
    return apply


def _make_g_solver(G, prefer_pcg):
    """Factor G when small and dense-friendly; otherwise PCG with a Jacobi
    preconditioner (tolerance threaded per solve)."""
    n = G.shape[0]
    if not prefer_pcg and n <= _G_CHOL_DIM:
        fac = chol_factor(to_dense(G) if sp.issparse(G) else G)
        return lambda g, tol: (fac.solve(g), 0)
    diag = np.asarray(G.diagonal()).ravel() if sp.issparse(G) else np.diag(G).copy()
    diag = np.where(diag > 0, diag, 1.0)
    gop = (lambda x: mv(G, x))

    def solve(g, tol):
        x, iters, _ = pcg_solve(gop, g, precond=lambda r: r / diag,
                                tol=max(tol, 1e-14), maxit=10 * n + 100)
        return x, iters
    return solve


def _make_smw_solve(problem, dinv_apply, g_solve):
    B_op = problem.B

    def impl(h, tol, stats=None):
        u = dinv_apply(h)
        g = B_op.apply_adjoint(u)
        w, iters = g_solve(g, tol)
        if stats is not None:
            stats["inner_iters"] = iters
        return u - dinv_apply(B_op.apply(w))
    return impl
