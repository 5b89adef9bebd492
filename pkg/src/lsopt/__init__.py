"""Level set topology optimisation on uniform Cartesian meshes."""

from .mesh import BoundaryTag, CartesianMesh, MeshError, build_mesh, tag_boundary
from .fem import (
    DirichletBC,
    FunctionSpace,
    NodalField,
    QuadratureRule,
    SolverError,
    assemble_bilinear,
    assemble_linear,
    gauss_rule,
    integrate,
    q1_shape,
    solve_spd,
)
from .interp import (
    ErsatzInterpolation,
    LevelSet,
    default_eta,
    density,
    ersatz,
    heaviside,
    heaviside_deriv,
    initial_lsf,
    volume_fraction,
)
from . import evolve
from .evolve import EvolveParams, StencilWorkspace, reinit, upwind_norms
from .dual import Dual
from .sens import (
    AffineStateMap,
    Functional,
    VelocityExtension,
    adjoint_gradient,
    alpha_rule,
    analytic_shape_gradient,
    extend_velocity,
    fd_gradient_oracle,
    functional_value,
    solve_state,
)
from .opt import (
    History,
    LagrangianState,
    OptimiserParams,
    converged,
    has_oscillations,
    lagrangian_gradient,
    lagrangian_value,
    run,
    update_multipliers,
)
from .problems import (
    MacroStrainSet,
    ProblemSpec,
    StiffnessTensor,
    build_problem,
    elastic_problem,
    homogenisation_problem,
    schwarz_p_lsf,
    thermal_problem,
)

__version__ = "0.1.0"
