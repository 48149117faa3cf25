"""Low-rank reconstruction of weight quantization error (LQER / L2QER)."""

from .calibration import (
    CalibrationProfile,
    ChannelProfiler,
    apply_scale,
    calibrate,
    identity_profile,
    profile_channels,
    scale_matrix,
)
from .errors import (
    ArgumentError,
    CalibrationError,
    DegenerateInputError,
    FormatError,
    LqerError,
    NumericalError,
    ShapeError,
)
from .formats import (
    QuantConfig,
    QuantizedMatrix,
    activation_config,
    avg_bitwidth,
    dequantize_matrix,
    factor_config,
    int_group_quantize,
    mxint_dequantize_block,
    mxint_quantize_block,
    overhead_fraction,
    quantize_matrix,
    weight_config,
)
from .linalg import SvdResult, as_matrix, frobenius_norm, matmul, svd, truncate
from .reconstruction import (
    ErrorReport,
    LowRankCorrection,
    approximation_error,
    l2qer_factors,
    lqer_factors,
    normalized_spectra,
    quant_error,
)
from .runtime import (
    LqerLayer,
    SynthActivationConfig,
    build_layer,
    forward,
    output_error,
    run_harness,
    synth_activations,
)

__version__ = "0.1.0"
