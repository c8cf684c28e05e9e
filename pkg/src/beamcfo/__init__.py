"""Angle-domain joint Doppler / oscillator frequency-offset estimation for
high-mobility OFDM received on a massive, fully or partly calibrated ULA."""

from .analysis import (
    CrbResult,
    MseBreakdown,
    ZetaTable,
    ab_kernel,
    asymptotic_mse,
    bessel_j,
    covariance_blocks,
    crb,
    mse_terms,
    zeta_table,
)
from .beamforming import BranchSignals, beamform_calibrated, beamform_plain
from .calibration import (
    CalibratedEstimate,
    build_cost_matrix,
    calibrated_pipeline,
    min_eig,
    taylor_refine,
)
from .channel import (
    ChannelRealization,
    PowerDelayProfile,
    normalized_doppler,
    sample_channel,
    subpath_cfo,
)
from .estimator import (
    CfoEstimate,
    DegenerateGeometryError,
    EstimationError,
    NumericalError,
    ProjectionCache,
    build_projection,
    compensate,
    cost,
    ml_channel,
    mrc_detect,
    newton_estimate,
    plain_pipeline,
)
from .ofdm import (
    OfdmConfig,
    block_phase,
    conv_matrix,
    phase_rotation,
    qam16_demap,
    qam16_map,
    random_frame_symbols,
    synthesize_frame,
)
from .ula import (
    DEFAULT_SIGMA_ALPHA,
    ArrayGeometry,
    DirectionGrid,
    fft_direction_grid,
    mismatched_steering,
    sample_mismatch,
    steering_vector,
    subarray_response,
)

__version__ = "0.1.0"
