"""Decomposition solvers for convex composite programs whose constraints
couple one first-stage block with many otherwise independent scenario blocks
(dual block-angular structure)."""

from .builders import (ScenarioData, UflInstance, build_two_stage,
                       build_ufl_dnn, random_qp, random_sdp, random_two_stage,
                       random_ufl, ufl_extra_constraints)
from .model import (DBAProblem, DualPoint, KktResidues, PrimalPoint,
                    ScenarioBlock, dual_objective, kkt_residues,
                    primal_objective, validate)
from .msolver import MSolver, build_msolver
from .pha import PhaConfig, pha_solve
from .proxcone import (Box, DenseQuadratic, DiagQuadratic, FreeSpace,
                       IndicatorCone, NonnegOrthant, NonnegSymMatrices,
                       PsdCone, Zero, conjugate_value, project_cone, prox,
                       prox_conjugate)
from .solvers import (PrimalDualState, SolveReport, SolverConfig, admm_solve,
                      alm_solve, eps_schedule, sigma_update, ssn_zy)

__version__ = "0.1.0"

__all__ = [
    "Box", "DBAProblem", "DenseQuadratic", "DiagQuadratic", "DualPoint",
    "FreeSpace", "IndicatorCone", "KktResidues", "MSolver", "NonnegOrthant",
    "NonnegSymMatrices", "PhaConfig", "PrimalDualState", "PrimalPoint",
    "PsdCone", "ScenarioBlock", "ScenarioData", "SolveReport", "SolverConfig",
    "UflInstance", "Zero", "admm_solve", "alm_solve", "build_msolver",
    "build_two_stage", "build_ufl_dnn", "conjugate_value", "dual_objective",
    "eps_schedule", "kkt_residues", "pha_solve", "primal_objective",
    "project_cone", "prox", "prox_conjugate", "random_qp", "random_sdp",
    "random_two_stage", "random_ufl", "sigma_update", "ssn_zy",
    "ufl_extra_constraints", "validate",
]
