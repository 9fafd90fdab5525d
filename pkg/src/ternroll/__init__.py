"""ternroll: compile ternary-weight CNNs into pruned, pipelined adder trees
and simulate the resulting streaming pipeline bit-exactly in fixed point."""

from .cse import (
    CseResult,
    CseStats,
    ExtractionEvent,
    PairTable,
    PatternMatrix,
    bu_cse,
    evaluate_cse,
    expand_rows,
    find_counterexample,
    no_cse,
    td_cse,
    verify_equivalence,
)
from .expressions import Expression, expression
from .fixedpoint import (
    ACT_FORMAT,
    SCALE_FORMAT,
    FixedPointFormat,
    FixedValue,
    SaturationCounter,
    dequantize,
    quantize,
)
from .matrices import FloatMatrix, TernaryMatrix, random_ternary
from .netlist import emit as emit_netlist
from .netlist import parse as parse_netlist
from .network import LayerSpec, NetworkSpec, ScaleShiftParams, load_network, vgg7_cifar10
from .pipeline import (
    ImageStream,
    SimulationResult,
    ThroughputReport,
    WindowBuffer,
    dense,
    max_pool,
    mux_layer,
    op_count,
    scale_shift,
    simulate,
    throughput_model,
    window_stream,
)
from .ternarize import sparsity_sweep, ternarize
from .treegen import (
    AdderGraph,
    CostReport,
    build_tree,
    cost,
    evaluate,
    evaluate_batch,
    evaluate_serial,
    schedule_serial,
    serial_sum,
    validate_graph,
)

__version__ = "0.1.0"

__all__ = [
    "ACT_FORMAT",
    "SCALE_FORMAT",
    "AdderGraph",
    "CostReport",
    "CseResult",
    "CseStats",
    "Expression",
    "ExtractionEvent",
    "FixedPointFormat",
    "FixedValue",
    "FloatMatrix",
    "ImageStream",
    "LayerSpec",
    "NetworkSpec",
    "PairTable",
    "PatternMatrix",
    "SaturationCounter",
    "ScaleShiftParams",
    "SimulationResult",
    "TernaryMatrix",
    "ThroughputReport",
    "WindowBuffer",
    "bu_cse",
    "build_tree",
    "cost",
    "dense",
    "dequantize",
    "emit_netlist",
    "evaluate",
    "evaluate_batch",
    "evaluate_cse",
    "evaluate_serial",
    "expand_rows",
    "expression",
    "find_counterexample",
    "load_network",
    "max_pool",
    "mux_layer",
    "no_cse",
    "op_count",
    "parse_netlist",
    "quantize",
    "random_ternary",
    "scale_shift",
    "schedule_serial",
    "serial_sum",
    "simulate",
    "sparsity_sweep",
    "td_cse",
    "ternarize",
    "throughput_model",
    "validate_graph",
    "verify_equivalence",
    "vgg7_cifar10",
    "window_stream",
]
