from .global_system import (
    CellBlocks,
    DirectSolution,
    DofMap,
    GlobalSystem,
    SolverError,
    apply_dirichlet,
    assemble_global,
    boundary_data_vector,
    boundary_flux,
    build_dof_map,
    cell_viscosity,
    direct_solve_reference,
    interpolate_velocity,
    lid_velocity,
    project_pressure,
    saddle_matrix,
)
from .substructure import (
    InterfaceProblem,
    SubdomainOperator,
    back_substitute,
    build_subdomain_operators,
    interface_rhs_and_operator,
)
