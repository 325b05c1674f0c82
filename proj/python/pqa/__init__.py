"""Product-quantized layer inference and accelerator cost model."""

from ._pqa import (  # noqa: F401
    ArgumentError,
    IoError,
    NumericError,
    ParseError,
    ShapeError,
    encode,
    fit_prototypes,
    flops_ratio,
    model_json,
    parameter_count,
    pq_matmul,
    simulate,
    subspace_layout,
    sweep_csv,
    zoo_names,
)

__version__ = "0.1.0"
