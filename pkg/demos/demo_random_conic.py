"""Random block-angular QP and SDP generators.

Both generators plant feasible points so every instance is solvable; the SDP
generator additionally plants a dual point (with PSD slacks) so the linear
objective is bounded.  The QP goes through the ADMM variant; the SDP has no
smooth objective terms, so both the ALM and ADMM variants apply and should
agree.
"""

import numpy as np

from dbasolve import (SolverConfig, admm_solve, alm_solve, random_qp,
                      random_sdp)

qp = random_qp(m0=10, n0=20, mi=10, ni=20, N=10, seed=0)
rep = admm_solve(qp, SolverConfig())
print("random QP : %s in %d iterations, obj %.4f, eta %.2e"
      % (rep.status, rep.iterations, rep.obj_p, rep.kkt.eta))

sdp = random_sdp(m0=3, n0=5, mi=3, ni=5, N=2, seed=0)
r_alm = alm_solve(sdp, SolverConfig())
r_admm = admm_solve(sdp, SolverConfig())
print("random SDP: alm %s (%d its) obj %.6f | admm %s (%d its) obj %.6f"
      % (r_alm.status, r_alm.iterations, r_alm.obj_p,
         r_admm.status, r_admm.iterations, r_admm.obj_p))
rel = abs(r_alm.obj_p - r_admm.obj_p) / (1 + abs(r_admm.obj_p))
print("variant agreement: %.2e" % rel)
assert rel <= 1e-3

# determinism: the same seed reproduces the instance bit for bit
from dbasolve.io import dumps, problem_to_dict

assert dumps(problem_to_dict(random_qp(5, 10, 5, 10, 3, seed=4))) == \
    dumps(problem_to_dict(random_qp(5, 10, 5, 10, 3, seed=4)))
print("generators are deterministic under a fixed seed")
