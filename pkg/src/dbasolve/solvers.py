"""Main iteration loops: the two-group proximal ADMM on the dual, the
proximal ALM variant for problems without smooth objective terms, and the
semismooth Newton subproblem solver for the (z, y) block.

Both loops keep all iterates stacked over scenarios and terminate on the
relative KKT residue together with the duality gap.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ._parallel import pmap, resolve_threads
from .blocklinalg import chol_factor, maybe_densify, mv, power_lambda_max, to_dense
from .errors import (LineSearchFailure, NotPositiveDefinite,
                     UnsupportedObjective)
from .model import (DualPoint, PrimalPoint, dual_objective, kkt_full,
                    primal_objective, validate)
from .msolver import build_msolver
from .proxcone import Box, FreeSpace, NonnegOrthant, prox_conjugate

TAU_ADMM_MAX = (1.0 + np.sqrt(5.0)) / 2.0
TAU_ALM_MAX = 2.0

LOG_COLUMNS = ("k", "eta_P", "eta_D", "eta_K", "eta_theta", "eta_Pbar",
               "eta_Dbar", "eta_Kbar", "eta_thetabar", "eta", "eta_gap",
               "sigma", "obj_P", "obj_D", "inner_iters")

_SSN_POLYHEDRAL = (NonnegOrthant, Box, FreeSpace)
_A_FACTOR_DIM_CAP = 20000


@dataclass
class SolverConfig:
    sigma0: float | None = None
    tau: float | None = None            # 1.618 for ADMM, 1.9 for ALM
    tol_kkt: float = 1e-5
    tol_gap: float = 1e-4
    max_iter: int = 50000
    eps0: float = 1e-4
    strategy: str = "auto"
    jbar: object = None
    ssn: str = "auto"                   # auto | on | off
    sigma_fixed: bool = False
    sigma_period: int = 25
    sigma_period_growth: float = 1.5    # interval grows after each change
    sigma_factor: float = 1.4
    sigma_ratio: float = 5.0
    sigma_min: float = 1e-6
    sigma_max: float = 1e6
    stall_window: int = 2000
    stall_rel: float = 1e-3
    log_every: int = 0                  # console progress; 0 disables
    threads: int | None = None
    check_inner: bool = False           # assert recorded inner errors <= eps_k
    feas_tol: float = 1e-8


@dataclass
class PrimalDualState:
    x: np.ndarray
    xbar: np.ndarray
    y: np.ndarray
    ybar: np.ndarray
    z: np.ndarray
    zbar: np.ndarray
    v: np.ndarray
    vbar: np.ndarray

    def copy(self):
        return PrimalDualState(*(getattr(self, f).copy() for f in
                                 ("x", "xbar", "y", "ybar", "z", "zbar", "v", "vbar")))


@dataclass
class SolveReport:
    status: str                          # Converged | MaxIter | Stalled
    iterations: int
    kkt: object
    obj_p: float
    obj_d: float
    primal: PrimalPoint
    dual: DualPoint
    sigma: float
    elapsed: float
    log_rows: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def converged(self):
        return self.status == "Converged"


def eps_schedule(k, eps0=1e-4):
    """Summable inner-tolerance sequence eps0 / (k+1)^1.5."""
    return eps0 / (k + 1) ** 1.5


def sigma_update(residues, sigma, params=None):
    """Rebalance the penalty from the residue ratio.

    The penalty weights the dual-constraint terms of the augmented
    Lagrangian, so when the dual-side residues dominate the primal-side ones
    by more than ``sigma_ratio`` the penalty is scaled up by
    ``sigma_factor``; in the opposite regime it is scaled down.  Clamped to
    [sigma_min, sigma_max].
    """
    cfg = params or SolverConfig()
    prim = max(residues.eta_P, residues.eta_Pbar)
    dual = max(residues.eta_D, residues.eta_Dbar)
    ratio = dual / max(prim, 1e-300)
    if ratio > cfg.sigma_ratio:
        sigma = sigma * cfg.sigma_factor
    elif ratio < 1.0 / cfg.sigma_ratio:
        sigma = sigma / cfg.sigma_factor
    return min(max(sigma, cfg.sigma_min), cfg.sigma_max)


def default_sigma0(problem):
    cinf = np.max(np.abs(problem.c)) if problem.c.size else 0.0
    cbinf = np.max(np.abs(problem.cbar)) if problem.cbar.size else 0.0
    return 1.0 / (1.0 + cinf + cbinf)


def zero_state(problem):
    return PrimalDualState(
        x=np.zeros(problem.n0), xbar=np.zeros(problem.nbar),
        y=np.zeros(problem.m0), ybar=np.zeros(problem.mbar),
        z=np.zeros(problem.n0), zbar=np.zeros(problem.nbar),
        v=np.zeros(problem.n0), vbar=np.zeros(problem.nbar))


def _split_primal(problem, state):
    return PrimalPoint(state.x.copy(), [state.xbar[problem.x_slice(i)].copy()
                                        for i in range(problem.N)])


def _dual_point(state):
    return DualPoint(y=state.y.copy(), ybar=state.ybar.copy(), z=state.z.copy(),
                     zbar=state.zbar.copy(), v=state.v.copy(), vbar=state.vbar.copy())


class _AFactor:
    """Solver for (A A* + J) d = h with J = 0 by default; when factoring A A*
    is too large or the product is singular (rank-deficient rows), the choice
    J = lam_max(A A*) I - A A* turns the system diagonal at the cost of a
    larger proximal term."""

    def __init__(self, A):
        self.A = A
        AAt = A @ A.T
        self._factor = None
        self._lam = None
        if A.shape[0] <= _A_FACTOR_DIM_CAP:
            try:
                self._factor = chol_factor(maybe_densify(AAt))
            except NotPositiveDefinite:
                pass
        if self._factor is None:
            lam, _ = power_lambda_max(lambda w: mv(AAt, w), A.shape[0])
            self._lam = lam

    def solve(self, h):
        if self._factor is not None:
            return self._factor.solve(h)
        return h / self._lam


def _proj_conj(cone, sigma, u):
    """-Prox_{sigma^{-1} delta*_K}(u) = Pi_K(sigma u)/sigma - u."""
    return cone.project(sigma * u) / sigma - u


def _ssn_eligible(problem, cfg):
    if problem.A is None or not isinstance(problem.cone, _SSN_POLYHEDRAL):
        return False
    if cfg.ssn == "on":
        return True
    if cfg.ssn == "off":
        return False
    return problem.m0 <= 10 and problem.n0 <= 20 and problem.N >= 100


# ---------------------------------------------------------------------------
# semismooth Newton solver for the joint (z, y) subproblem
# ---------------------------------------------------------------------------

def ssn_zy(A, b, cone, sigma, chat, y0=None, tol=1e-10, max_newton=200):
    """Solve min_y -<b,y> + sigma M_{delta*_K/sigma}(A*y - chat) by a
    semismooth Newton method, then recover z.

    Returns ``(y, z, newton_iters)``; the gradient of the objective is
    ``-b + A Pi_K(sigma (A*y - chat))`` and the envelope value has the closed
    form ``(||w||^2 - dist(w, K)^2) / (2 sigma)`` at ``w = sigma (A*y - chat)``.
    """
    if not isinstance(cone, _SSN_POLYHEDRAL):
        raise UnsupportedObjective(
            "semismooth Newton needs a polyhedral first-stage set")
    m = A.shape[0]
    y = np.zeros(m) if y0 is None else y0.copy()
    Ad = to_dense(A)
    Adt = Ad.T

    def phi_grad(yv):
        u = Adt @ yv - chat
        w = sigma * u
        pw = cone.project(w)
        val = -float(b @ yv) + (float(w @ w) - float((w - pw) @ (w - pw))) / (2 * sigma)
        grad = -b + Ad @ pw
        return val, grad, w, pw

    val, grad, w, pw = phi_grad(y)
    iters = 0
    while np.linalg.norm(grad) > tol and iters < max_newton:
        mask = _jacobian_mask(cone, w)
        Am = Ad * mask[None, :]
        rho = 1e-12 * (1.0 + np.linalg.norm(grad))
        H = sigma * (Am @ Ad.T) + rho * np.eye(m)
        d = np.linalg.solve(H, -grad)
        slope = float(grad @ d)
        if slope >= 0:
            d = -grad
            slope = -float(grad @ grad)
        step = 1.0
        for _ in range(50):
            cand = y + step * d
            cval = phi_grad(cand)[0]
            if cval <= val + 1e-4 * step * slope:
                break
            step *= 0.5
        else:
            raise LineSearchFailure("no sufficient decrease after 50 backtracks")
        y = y + step * d
        val, grad, w, pw = phi_grad(y)
        iters += 1
    z = pw / sigma - (w / sigma)
    return y, z, iters


def _jacobian_mask(cone, w):
    """Diagonal 0/1 generalized-Jacobian element of the projection at w."""
    if isinstance(cone, FreeSpace):
        return np.ones_like(w)
    if isinstance(cone, NonnegOrthant):
        return (w > 0).astype(float)
    return ((w > cone.lower) & (w < cone.upper)).astype(float)


# ---------------------------------------------------------------------------
# main loops
# ---------------------------------------------------------------------------

def admm_solve(problem, config=None, initial=None):
    """Two-group inexact sGS proximal ADMM on the dual problem."""
    cfg = config or SolverConfig()
    tau = cfg.tau if cfg.tau is not None else 1.618
    if not 0.0 < tau < TAU_ADMM_MAX:
        raise ValueError("ADMM step length must lie in (0, (1+sqrt(5))/2)")
    return _run_loop(problem, cfg, tau, initial, mode="admm")


def alm_solve(problem, config=None, initial=None):
    """sGS proximal ALM; requires all separable objective terms to vanish."""
    if not problem.theta.is_zero or not all(s.theta.is_zero for s in problem.scenarios):
        raise UnsupportedObjective(
            "the ALM variant requires zero theta terms; use admm_solve")
    cfg = config or SolverConfig()
    tau = cfg.tau if cfg.tau is not None else 1.9
    if not 0.0 < tau < TAU_ALM_MAX:
        raise ValueError("ALM step length must lie in (0, 2)")
    return _run_loop(problem, cfg, tau, initial, mode="alm")


def _run_loop(problem, cfg, tau, initial, mode):
    validate(problem, rank_check=False)
    t0 = time.perf_counter()
    threads = resolve_threads(cfg.threads)
    sigma = cfg.sigma0 if cfg.sigma0 is not None else default_sigma0(problem)

    msol = build_msolver(problem, cfg.strategy, jbar=cfg.jbar)
    facA = _AFactor(problem.A) if problem.A is not None else None
    use_ssn = _ssn_eligible(problem, cfg)

    st = initial.copy() if initial is not None else zero_state(problem)

    log_rows = []
    status = "MaxIter"
    best_eta = np.inf
    best_eta_at = 0
    res = None
    k = 0
    inner_iters = 0
    sigma_period = cfg.sigma_period
    next_sigma_check = cfg.sigma_period - 1
    # surrogate data for the relative-error rate criteria: recorded inner
    # residual against the iterate movement (debug only, never enforced)
    error_ratio_log = [] if cfg.check_inner else None
    prev_vec = None

    for k in range(cfg.max_iter):
        eps_k = eps_schedule(k, cfg.eps0)
        if mode == "admm":
            inner_iters = _admm_iteration(problem, st, sigma, tau, msol, facA,
                                          use_ssn, eps_k, cfg, threads)
        else:
            inner_iters = alm_ssn_step(problem, st, sigma, tau, msol, facA,
                                       eps_k, cfg, threads) if use_ssn else \
                _alm_iteration(problem, st, sigma, tau, msol, facA, eps_k, cfg,
                               threads)

        if error_ratio_log is not None:
            vec = np.concatenate([st.x, st.xbar, st.y, st.ybar, st.z,
                                  st.zbar, st.v, st.vbar])
            if prev_vec is not None:
                move = float(np.linalg.norm(vec - prev_vec))
                error_ratio_log.append((k, msol.last_relres, move))
            prev_vec = vec

        primal = _split_primal(problem, st)
        dual = _dual_point(st)
        res, obj_p, obj_d = kkt_full(problem, primal, dual, cfg.feas_tol)
        row = (k, res.eta_P, res.eta_D, res.eta_K, res.eta_theta, res.eta_Pbar,
               res.eta_Dbar, res.eta_Kbar, res.eta_thetabar, res.eta,
               res.eta_gap, sigma, obj_p, obj_d, inner_iters)
        log_rows.append(row)
        if cfg.log_every and (k % cfg.log_every == 0):
            print("iter %6d  eta %.3e  gap %.3e  sigma %.3e" %
                  (k, res.eta, res.eta_gap, sigma))

        if res.eta <= cfg.tol_kkt and res.eta_gap <= cfg.tol_gap:
            status = "Converged"
            k += 1
            break

        if res.eta < best_eta * (1.0 - cfg.stall_rel):
            best_eta = res.eta
            best_eta_at = k
        elif k - best_eta_at >= cfg.stall_window:
            status = "Stalled"
            k += 1
            break

        if not cfg.sigma_fixed and k >= next_sigma_check:
            new_sigma = sigma_update(res, sigma, cfg)
            if new_sigma != sigma:
                # lengthen the interval after each change so the penalty
                # eventually settles and the iteration can converge
                sigma_period = min(sigma_period * cfg.sigma_period_growth, 2500.0)
                sigma = new_sigma
            next_sigma_check = k + int(sigma_period)
    else:
        k = cfg.max_iter

    primal = _split_primal(problem, st)
    dual = _dual_point(st)
    return SolveReport(
        status=status, iterations=k, kkt=res,
        obj_p=primal_objective(problem, primal),
        obj_d=dual_objective(problem, dual, cfg.feas_tol),
        primal=primal, dual=dual, sigma=sigma,
        elapsed=time.perf_counter() - t0, log_rows=log_rows,
        extra={"mode": mode, "ssn": use_ssn, "strategy": msol.strategy,
               "state": st, "error_ratio_log": error_ratio_log},
    )


def _msolve_with_tol(msol, rhs, sigma, eps_k, cfg):
    tol = min(1e-8, eps_k / (sigma * (1.0 + np.linalg.norm(rhs))))
    y = msol.solve(rhs, tol=max(tol, 1e-14), check_residual=cfg.check_inner)
    if cfg.check_inner:
        delta = sigma * msol.last_relres * np.linalg.norm(rhs)
        assert delta <= max(eps_k, 1e-9), \
            "inner residual %.3e exceeds eps_k %.3e" % (delta, eps_k)
    return y, msol.last_inner_iters


def _admm_iteration(problem, st, sigma, tau, msol, facA, use_ssn, eps_k, cfg,
                    threads):
    A = problem.A_mv
    B, Bbar = problem.B, problem.Bbar
    c, cbar, bbar, b = problem.c, problem.cbar, problem.bbar, problem.b
    inner = 0

    ck = c - st.x / sigma
    cbk = cbar - st.xbar / sigma
    At = problem.A_T
    Aty = mv(At, st.y) if A is not None else 0.0
    Bty = B.apply_adjoint(st.ybar)
    R1 = Aty + Bty + st.z + st.v - ck
    R2 = Bbar.apply_adjoint(st.ybar) + st.zbar + st.vbar - cbk

    # first group: zbar scenario-separable prox, then the (z, y) pair
    if problem.scen_cone_stacked is not None:
        zbar_new = _proj_conj(problem.scen_cone_stacked, sigma, R2 - st.zbar)
    else:
        zbar_new = np.empty_like(st.zbar)

        def zbar_task(i):
            sl = problem.x_slice(i)
            return _proj_conj(problem.scenarios[i].cone, sigma,
                              R2[sl] - st.zbar[sl])
        for i, part in enumerate(pmap(zbar_task, problem.N, threads)):
            zbar_new[problem.x_slice(i)] = part

    if A is not None and use_ssn:
        chat = ck - Bty - st.v
        y_new, z_new, it = ssn_zy(A, b, problem.cone, sigma, chat, y0=st.y,
                                  tol=max(min(1e-9, eps_k), 1e-12))
        inner += it
    elif A is not None:
        y_tmp = st.y + facA.solve(b / sigma - mv(A, R1))
        z_new = _proj_conj(problem.cone, sigma,
                           mv(At, y_tmp - st.y) + R1 - st.z)
        y_new = st.y + facA.solve(b / sigma - mv(A, R1 + z_new - st.z))
    else:
        z_new = _proj_conj(problem.cone, sigma, R1 - st.z)
        y_new = st.y

    # second group: ybar backward solve, (v, vbar) prox, ybar forward solve
    dAty = mv(At, y_new - st.y) if A is not None else 0.0
    R3 = R1 + dAty + (z_new - st.z)
    R4 = R2 + (zbar_new - st.zbar)

    rhs = bbar / sigma - B.apply(R3) - Bbar.apply(R4)
    ybar_tmp, it = _msolve_with_tol(msol, rhs, sigma, eps_k, cfg)
    ybar_tmp = st.ybar + ybar_tmp
    inner += it

    dyt = ybar_tmp - st.ybar
    v_new = -prox_conjugate(problem.theta, sigma,
                            B.apply_adjoint(dyt) + R3 - st.v)

    dyt_bar = Bbar.apply_adjoint(dyt)
    if problem.scen_theta_stacked is not None:
        vbar_new = -prox_conjugate(problem.scen_theta_stacked, sigma,
                                   dyt_bar + R4 - st.vbar)
    else:
        vbar_new = np.empty_like(st.vbar)

        def vbar_task(i):
            sl = problem.x_slice(i)
            return -prox_conjugate(problem.scenarios[i].theta, sigma,
                                   dyt_bar[sl] + R4[sl] - st.vbar[sl])
        for i, part in enumerate(pmap(vbar_task, problem.N, threads)):
            vbar_new[problem.x_slice(i)] = part

    rhs = (bbar / sigma - B.apply(R3 + v_new - st.v)
           - Bbar.apply(R4 + vbar_new - st.vbar))
    dy, it = _msolve_with_tol(msol, rhs, sigma, eps_k, cfg)
    ybar_new = st.ybar + dy
    inner += it

    # multiplier step
    Aty_new = mv(At, y_new) if A is not None else 0.0
    st.x = st.x + tau * sigma * (Aty_new + B.apply_adjoint(ybar_new)
                                 + z_new + v_new - c)
    st.xbar = st.xbar + tau * sigma * (Bbar.apply_adjoint(ybar_new)
                                       + zbar_new + vbar_new - cbar)
    st.y, st.ybar = y_new, ybar_new
    st.z, st.zbar = z_new, zbar_new
    st.v, st.vbar = v_new, vbar_new
    return inner


def _alm_iteration(problem, st, sigma, tau, msol, facA, eps_k, cfg, threads):
    A = problem.A_mv
    B, Bbar = problem.B, problem.Bbar
    c, cbar, bbar, b = problem.c, problem.cbar, problem.bbar, problem.b
    inner = 0

    ck = c - st.x / sigma
    cbk = cbar - st.xbar / sigma
    At = problem.A_T
    Aty = mv(At, st.y) if A is not None else 0.0
    Rt1 = Aty + B.apply_adjoint(st.ybar) + st.z - ck
    Rt2 = Bbar.apply_adjoint(st.ybar) + st.zbar - cbk

    # backward sweep through ybar then y
    rhs = bbar / sigma - B.apply(Rt1) - Bbar.apply(Rt2)
    dy, it = _msolve_with_tol(msol, rhs, sigma, eps_k, cfg)
    ybar_tmp = st.ybar + dy
    inner += it

    Bty_tmp = B.apply_adjoint(ybar_tmp)
    if A is not None:
        y_tmp = st.y + facA.solve(b / sigma - mv(A, Aty + Bty_tmp + st.z - ck))
        Aty_tmp = mv(At, y_tmp)
    else:
        y_tmp = st.y
        Aty_tmp = 0.0

    # nonsmooth group
    z_new = _proj_conj(problem.cone, sigma, Aty_tmp + Bty_tmp - ck)
    bty_bar = Bbar.apply_adjoint(ybar_tmp)
    if problem.scen_cone_stacked is not None:
        zbar_new = _proj_conj(problem.scen_cone_stacked, sigma, bty_bar - cbk)
    else:
        zbar_new = np.empty_like(st.zbar)

        def zbar_task(i):
            sl = problem.x_slice(i)
            return _proj_conj(problem.scenarios[i].cone, sigma,
                              bty_bar[sl] - cbk[sl])
        for i, part in enumerate(pmap(zbar_task, problem.N, threads)):
            zbar_new[problem.x_slice(i)] = part

    # forward sweep through y then ybar
    if A is not None:
        y_new = st.y + facA.solve(b / sigma - mv(A, Aty + Bty_tmp + z_new - ck))
        Aty_new = mv(At, y_new)
    else:
        y_new = st.y
        Aty_new = 0.0

    rhs = (bbar / sigma
           - B.apply(B.apply_adjoint(st.ybar) + Aty_new + z_new - ck)
           - Bbar.apply(Bbar.apply_adjoint(st.ybar) + zbar_new - cbk))
    dy, it = _msolve_with_tol(msol, rhs, sigma, eps_k, cfg)
    ybar_new = st.ybar + dy
    inner += it

    st.x = st.x + tau * sigma * (Aty_new + B.apply_adjoint(ybar_new) + z_new - c)
    st.xbar = st.xbar + tau * sigma * (Bbar.apply_adjoint(ybar_new)
                                       + zbar_new - cbar)
    st.y, st.ybar = y_new, ybar_new
    st.z, st.zbar = z_new, zbar_new
    return inner


def alm_ssn_step(problem, st, sigma, tau, msol, facA, eps_k, cfg, threads):
    """One ALM iteration with the (z, y) block solved jointly by semismooth
    Newton (no proximal term on that block) and zbar by projection."""
    A = problem.A_mv
    B, Bbar = problem.B, problem.Bbar
    c, cbar, bbar, b = problem.c, problem.cbar, problem.bbar, problem.b
    inner = 0

    ck = c - st.x / sigma
    cbk = cbar - st.xbar / sigma
    At = problem.A_T
    Aty = mv(At, st.y) if A is not None else 0.0
    Rt1 = Aty + B.apply_adjoint(st.ybar) + st.z - ck
    Rt2 = Bbar.apply_adjoint(st.ybar) + st.zbar - cbk

    rhs = bbar / sigma - B.apply(Rt1) - Bbar.apply(Rt2)
    dy, it = _msolve_with_tol(msol, rhs, sigma, eps_k, cfg)
    ybar_tmp = st.ybar + dy
    inner += it

    chat = ck - B.apply_adjoint(ybar_tmp)
    y_new, z_new, it = ssn_zy(A, b, problem.cone, sigma, chat, y0=st.y,
                              tol=max(min(1e-9, eps_k), 1e-12))
    inner += it

    bty_bar = Bbar.apply_adjoint(ybar_tmp)
    if problem.scen_cone_stacked is not None:
        zbar_new = _proj_conj(problem.scen_cone_stacked, sigma, bty_bar - cbk)
    else:
        zbar_new = np.empty_like(st.zbar)

        def zbar_task(i):
            sl = problem.x_slice(i)
            return _proj_conj(problem.scenarios[i].cone, sigma,
                              bty_bar[sl] - cbk[sl])
        for i, part in enumerate(pmap(zbar_task, problem.N, threads)):
            zbar_new[problem.x_slice(i)] = part

    Aty_new = mv(At, y_new)
    rhs = (bbar / sigma
           - B.apply(B.apply_adjoint(st.ybar) + Aty_new + z_new - ck)
           - Bbar.apply(Bbar.apply_adjoint(st.ybar) + zbar_new - cbk))
    dy, it = _msolve_with_tol(msol, rhs, sigma, eps_k, cfg)
    ybar_new = st.ybar + dy
    inner += it

    st.x = st.x + tau * sigma * (Aty_new + B.apply_adjoint(ybar_new) + z_new - c)
    st.xbar = st.xbar + tau * sigma * (Bbar.apply_adjoint(ybar_new)
                                       + zbar_new - cbar)
    st.y, st.ybar = y_new, ybar_new
    st.z, st.zbar = z_new, zbar_new
    return inner
