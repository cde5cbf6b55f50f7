"""Radial distribution grid topology learning from voltage measurements.

Simulates nodal voltages on a radial feeder under three lossless
linearized power-flow models and recovers the operational tree from i.i.d.
voltage samples using quartet conditional-independence tests, with a
kernel-based nonparametric test and Gaussian analytic oracles.
"""

from .citest import (
    CITestResult,
    KernelParams,
    QuartetData,
    kci_statistic,
    kci_test,
    partial_corr_ci,
    uncond_independence,
)
from .errors import (
    ConfigError,
    DegenerateInputError,
    DepthAssumptionError,
    GridParseError,
    GridTopoError,
    GridValidationError,
    MeasurementFormatError,
    ModelMismatchError,
    NotRadialError,
    ParameterError,
    RootEdgeError,
    StructuralFailureError,
)
from .grid import (
    GridGraph,
    Line,
    OperationalTree,
    candidate_quartets,
    grid_to_text,
    max_degree,
    operational_tree,
    parse_grid,
    tree_to_grid,
    two_hop_neighborhood,
)
from .learn import (
    Evidence,
    ExactPartialCorrTester,
    KernelCITester,
    LearnedTopology,
    PartialCorrTester,
    SeparationOracleTester,
    TopologyMetrics,
    attach_leaves,
    evaluate_topology,
    export_topology,
    learn_nonleaf_edges,
    learn_topology,
    quartet_test_bound,
)
from .markov import (
    MarkovGraph,
    PrecisionMatrix,
    empirical_precision,
    is_chordal,
    phase_precision_matrix,
    precision_support_graph,
    separates,
    voltage_markov_graph,
)
from .powerflow import (
    InjectionVector,
    LineFlows,
    LineParams,
    ReducedLaplacian,
    recover_injections,
    reduced_laplacian,
    solve_dc,
    solve_lc,
    solve_lindistflow,
)
from .sampling import (
    DistSpec,
    InjectionConfig,
    MeasurementMatrix,
    draw_injections,
    generate_measurements,
    parse_dist,
    read_measurements,
    write_measurements,
)

__version__ = "0.1.0"

FEEDER_TREE = "feeder19_tree.grid"
FEEDER_LOOPY = "feeder19_loopy.grid"


def bundled_grid_path(name: str):
    """Filesystem path of a bundled feeder file (see FEEDER_TREE/FEEDER_LOOPY)."""
    from importlib.resources import files

    return files("gridtopo.data").joinpath(name)


def load_bundled_grid(name: str) -> GridGraph:
    return parse_grid(bundled_grid_path(name).read_text(encoding="utf-8"))
