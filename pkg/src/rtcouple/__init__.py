"""Desk-scale reactive-transport coupling toolkit.

Building blocks: a structured finite-volume mesh and named fields with a
binary exchange format (meshfield), sparse linear and damped Newton
solvers (numerics), a guarded component interface with a registry
(component), steady Darcy flow (flow), multi-species advection-diffusion
with decay chains and retardation (transport), per-cell equilibrium
speciation with minerals and porosity update (chemistry), operator
splitting drivers (coupling) and a JSON scenario runner (scenario, cli).
"""

__version__ = "0.1.0"

from . import chemistry, flow, transport  # noqa: F401  registers implementations
from .chemistry import (ChemState, ChemicalSystem, SpeciationError,
                        equilibrate_cell, speciate, totals_from_state,
                        update_porosity)
from .component import (ComponentStatus, FieldSpec, NumericalComponent,
                        Registry, available, create, register, registry)
from .coupling import (CouplingConfig, SiaReport, StepFailure,
                       WastePackageState, sia_step, snia_step,
                       waste_package_step)
from .flow import FlowProblem, FlowSolution, kozeny_carman, solve_darcy
from .meshfield import (CELLS, FACES, Field, IncompatibleFieldsError, Mesh,
                        MffDocument, MffFormatError, build_structured_mesh,
                        export_vtk, field_axpy, field_norm, read_mff,
                        write_mff)
from .numerics import (NewtonReport, NoConvergenceError, SparseMatrix,
                       newton_solve, solve_sparse)
from .scenario import (Diagnostic, ScenarioError, SimulationAbort,
                       apply_overrides, build_simulation, load_scenario,
                       run_simulation, validate_scenario)
from .transport import (TransportParams, TransportState, StepRejectedError,
                        transport_step, uniform_flux_field)

__all__ = [
    "CELLS", "FACES", "Mesh", "Field", "MffDocument",
    "build_structured_mesh", "field_axpy", "field_norm",
    "read_mff", "write_mff", "export_vtk",
    "IncompatibleFieldsError", "MffFormatError",
    "SparseMatrix", "solve_sparse", "newton_solve", "NewtonReport",
    "NoConvergenceError",
    "NumericalComponent", "ComponentStatus", "FieldSpec", "Registry",
    "registry", "register", "create", "available",
    "FlowProblem", "FlowSolution", "solve_darcy", "kozeny_carman",
    "TransportParams", "TransportState", "transport_step",
    "uniform_flux_field", "StepRejectedError",
    "ChemicalSystem", "ChemState", "speciate", "equilibrate_cell",
    "totals_from_state", "update_porosity", "SpeciationError",
    "CouplingConfig", "SiaReport", "WastePackageState", "snia_step",
    "sia_step", "waste_package_step", "StepFailure",
    "Diagnostic", "ScenarioError", "SimulationAbort", "load_scenario",
    "apply_overrides", "validate_scenario", "build_simulation",
    "run_simulation",
    "__version__",
]
