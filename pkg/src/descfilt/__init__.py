"""Robust H-infinity filter synthesis and simulation for Lipschitz descriptor systems."""

from .daesim import (
    DescriptorDynamics,
    Scenario,
    SemiExplicitForm,
    Trajectory,
    consistent_init,
    integrate,
    joint_dynamics,
    l2_gain,
    run_scenario,
    semi_explicit,
    trajectory_to_csv,
)
from .lmi import AffineExpr, LmiProgram, SdpStandardForm, block, canonicalize, evaluate
from .model import (
    DescriptorPlant,
    NonlinearMap,
    ValidationReport,
    estimate_lipschitz,
    load_plant,
    orth_complement,
    parse_nonlinearity,
    save_plant,
    validate_plant,
)
from .robust import UncertaintyBudget, admissible, max_uniform_delta, region_boundary
from .sdpcore import SdpSolution, SolverSettings, check_solution, solve
from .synth import (
    ErrorSystem,
    FilterRealization,
    FilterStructure,
    SynthesisResult,
    assemble_error_system,
    build_program,
    recover_gamma,
    sensitivities,
    synthesize,
    synthesize_static,
    verify_certificate,
)

__all__ = [
    "AffineExpr",
    "DescriptorDynamics",
    "DescriptorPlant",
    "ErrorSystem",
    "FilterRealization",
    "FilterStructure",
    "LmiProgram",
    "NonlinearMap",
    "Scenario",
    "SdpSolution",
    "SdpStandardForm",
    "SemiExplicitForm",
    "SolverSettings",
    "SynthesisResult",
    "Trajectory",
    "UncertaintyBudget",
    "ValidationReport",
    "admissible",
    "assemble_error_system",
    "block",
    "build_program",
    "canonicalize",
    "check_solution",
    "consistent_init",
    "estimate_lipschitz",
    "evaluate",
    "integrate",
    "joint_dynamics",
    "l2_gain",
    "load_plant",
    "max_uniform_delta",
    "orth_complement",
    "parse_nonlinearity",
    "recover_gamma",
    "region_boundary",
    "run_scenario",
    "save_plant",
    "semi_explicit",
    "sensitivities",
    "solve",
    "synthesize",
    "synthesize_static",
    "trajectory_to_csv",
    "validate_plant",
    "verify_certificate",
]

__version__ = "0.1.0"
