"""Periodic homogenization of parabolic problems with large drift and potential."""

from .cell import CellEigenSolution, ProblemCoefficients, find_bloch_parameter, principal_eigenpair
from .factorize import FactorizedModel, NondivergenceCoefficients, factorize, nondivergence_frontend
from .harness import SweepConfig, SweepReport, emit_report, fit_rate, run_sweep
from .homogenize import EffectiveModel, GeneralCoefficients, effective_model
from .parabolic import (
    DomainSpec,
    InitialDatum,
    ParabolicProblem,
    SpaceTimeField,
    reconstruct_u,
    solve_divform,
    solve_full_oscillatory,
    spacetime_norm,
)
from .smoothing import CutoffPair, SmoothingKernel, appendix_constants, build_cutoffs, build_w_eps, smooth
from .torus import PeriodicField, TorusGrid

__version__ = "0.1.0"
