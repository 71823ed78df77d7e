"""Mass-conserving gated cell models for rainfall-runoff simulation,
with built-in autodiff, training protocol, metrics, and benchmarks."""

from .autodiff import LossProgram, check_grad, grad
from .data_model import (
    ForcingSeries,
    PartitionMask,
    ScalingStats,
    Subset,
    SyntheticTruth,
    compute_scaling,
    generate_synthetic,
    ingest_forcing,
    partition_by_year,
    write_forcing,
)
from .errors import (
    ContractError,
    DegenerateChannelError,
    InsufficientDataError,
    McpError,
    NumericFaultError,
    ParseError,
    PlanError,
    StructuralError,
    ValidationError,
)
from .gates import (
    BcGateSpec,
    BcVariant,
    GateKind,
    GateSpec,
    MrGateSpec,
    MrVariant,
    count_parameters,
    parameter_names,
)
from .grammar import canonical_arch, parse_arch
from .mcp_core import (
    ArchitectureSpec,
    CellState,
    SimulationTrace,
    mass_ledger,
    simulate,
    step,
)
from .metrics import (
    AnnualDistribution,
    KgeComponents,
    annual_distribution,
    kge,
    kge_masked,
)
from .params import ParameterVector
from .training import (
    AdamState,
    PlanStage,
    TrainConfig,
    adam_step,
    init_params,
    pretrain_for_scaling,
    run_protocol,
    train_architecture,
)
from .benchmarks import (
    BenchmarkSpec,
    Family,
    NormStats,
    benchmark_suite,
    build_benchmark,
    count_benchmark_parameters,
    simulate_benchmark,
    train_benchmark,
)

__version__ = "0.1.0"
