"""SEFDM faster-than-Nyquist lab: rate analysis and deep detectors."""

from .core import (
    Observation,
    SefdmConfig,
    SymbolFrame,
    awgn_channel,
    build_subcarrier_matrix,
    ebn0_to_n0,
    gray_demap_qpsk,
    gray_map_qpsk,
    modulate,
    precode_and_modulate,
    project_receiver,
)
from .errors import (
    DegenerateMatrixError,
    ModelFormatError,
    NumericalError,
    ParameterError,
)
from .factorizations import QrFactors, SvdFactors, mgs_qr, svd_complex
from .rates import (
    PowerAllocation,
    RatePoint,
    capacity_sefdm,
    ofdm_reference,
    rate_equal_power,
    sweep,
    waterfill,
)

__all__ = [
    "Observation",
    "SefdmConfig",
    "SymbolFrame",
    "awgn_channel",
    "build_subcarrier_matrix",
    "ebn0_to_n0",
    "gray_demap_qpsk",
    "gray_map_qpsk",
    "modulate",
    "precode_and_modulate",
    "project_receiver",
    "DegenerateMatrixError",
    "ModelFormatError",
    "NumericalError",
    "ParameterError",
    "QrFactors",
    "SvdFactors",
    "mgs_qr",
    "svd_complex",
    "PowerAllocation",
    "RatePoint",
    "capacity_sefdm",
    "ofdm_reference",
    "rate_equal_power",
    "sweep",
    "waterfill",
]

__version__ = "0.1.0"
