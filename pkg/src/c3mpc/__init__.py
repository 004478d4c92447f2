"""Consensus complementarity control for linear complementarity systems.

Subpackages by layer:

- :mod:`c3mpc.lcs` -- LCP solver, LCS model and simulation
- :mod:`c3mpc.qp` -- dense convex QP solver and the MPC quadratic step
- :mod:`c3mpc.projections` -- per-step projections onto the complementarity set
- :mod:`c3mpc.controller` -- the ADMM control loop
- :mod:`c3mpc.miqp` -- full-horizon mixed-integer baseline
- :mod:`c3mpc.models` -- cart-pole and finger-gaiting benchmarks
- :mod:`c3mpc.harness` / :mod:`c3mpc.cli` -- experiments and command line
"""

from ._accel import USE_NUMBA, backend_name
from .controller import (
    C3Config,
    C3Controller,
    C3Error,
    C3StepResult,
    C3Workspace,
    LcsPlant,
    RecedingHorizonResult,
    c3_receding_horizon,
    c3_solve,
    cost_to_go,
)
from .lcs import (
    LcpError,
    LcpProblem,
    LcpSolution,
    LcpStatus,
    LcsModel,
    Trajectory,
    complementarity_residual,
    enumerate_lcp,
    lcs_step,
    simulate,
    solve_lcp,
)
from .miqp import MiqpInfeasible, MiqpResult, solve_full_miqp
from .models import (
    CARTPOLE_HW,
    CARTPOLE_SIM,
    CartPoleParams,
    FingerGaitingParams,
    cartpole_lcs,
    finger_gaiting_lcs,
    preset_model,
)
from .problem import McpProblemSpec, StackLayout, stage_bounds
from .projections import (
    ComplementaritySet,
    ProjectionResult,
    ProjectionTarget,
    enumerate_projection_oracle,
    project_lcp,
    project_miqp,
    project_nested_admm,
)
from .qp import QpSolution, QpStatus, QuadraticProgram, solve_qp

__version__ = "0.1.0"
