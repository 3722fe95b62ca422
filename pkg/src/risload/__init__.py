"""Resource minimization for RIS-assisted multi-cell networks.

The package models the coupling between cell loads and inter-cell
interference, optimizes reflection coefficients cell by cell with a
majorization-minimization loop on top of a purpose-built interior-point
solver, coordinates cells through iterative convex approximation, and
ships benchmark schemes plus an exhaustive oracle for small discrete
instances.
"""

from .scenario import (
    Domain,
    Layout,
    PathLossParams,
    Scenario,
    cascade_row,
    generate_scenario,
    load_scenario,
    save_scenario,
    wraparound_distance,
)
from .coupling import (
    CellContext,
    CouplingError,
    CouplingReport,
    DemandUnservable,
    NonConvergence,
    PhaseConfig,
    cell_load,
    ctx_cell_load,
    ctx_sinr,
    fixed_point_loads,
    freeze_cell,
    single_cell_sinr,
    sinr,
)
from .cvxsub import (
    ConvexSubproblem,
    QuadAffine,
    SolverError,
    SubproblemSolution,
    assemble_p23,
    assemble_p25,
    assemble_p31,
    kkt_residual,
    solve,
)
from .mm import (
    MmState,
    SingleCellResult,
    exact_F,
    majorized_F,
    mm_single_cell,
    mm_single_cell_d3,
    round_to_discrete,
)
from .ica import IcaState, Solution, ica, initialize, sweep_once
from .baselines import (
    BudgetExceeded,
    DecompositionMode,
    decomposition,
    exhaustive_single_cell,
    global_opt_discrete,
    no_ris,
    random_phases,
)
from .harness import (
    ConfigError,
    ExperimentConfig,
    MissingSeries,
    ResultRow,
    ResultTable,
    emit_csv,
    emit_plot_data,
    parse_config,
    parse_csv,
    read_config,
    run_experiment,
)

__version__ = "0.1.0"
