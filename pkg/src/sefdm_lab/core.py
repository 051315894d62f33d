"""SEFDM signal model: subcarrier matrix, QPSK mapping, AWGN channel and the
orthonormal-projection receiver front end.

Conventions used throughout the package:

* complex vectors/matrices are numpy ``complex128`` arrays (row-major);
* ``n0`` is the total variance of each complex noise sample, i.e. ``n0/2``
  per real dimension;
* QPSK symbols have unit energy, so ``Es = 1`` and ``Eb = 1/2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError

# Gray-coded QPSK, indexed by the 2-bit integer (b0 b1) of each bit pair:
# 00 -> (+1+1j)/sqrt(2), 01 -> (-1+1j)/sqrt(2),
# 10 -> (+1-1j)/sqrt(2), 11 -> (-1-1j)/sqrt(2).
# First bit selects the sign of the imaginary part, second bit the real part.
QPSK_SYMBOLS = np.array(
    [1 + 1j, -1 + 1j, 1 - 1j, -1 - 1j], dtype=np.complex128
) / np.sqrt(2.0)
QPSK_SYMBOLS.setflags(write=False)

QPSK_BITS_PER_SYMBOL = 2


@dataclass(frozen=True)
class SefdmConfig:
    """Identity of one SEFDM experiment.

    alpha is the normalised subcarrier spacing: spacing is compressed to a
    fraction alpha of the orthogonal (OFDM) value, alpha = 1 recovering OFDM.
    """

    n_subcarriers: int
    alpha: float
    bits_per_symbol: int = QPSK_BITS_PER_SYMBOL
    n0: float = 1.0

    def __post_init__(self):
        if self.n_subcarriers < 1:
            raise ParameterError(f"n_subcarriers must be >= 1, got {self.n_subcarriers}")
        if not 0.0 < self.alpha <= 1.0:
            raise ParameterError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.bits_per_symbol < 1:
            raise ParameterError(f"bits_per_symbol must be >= 1, got {self.bits_per_symbol}")
        if not self.n0 > 0.0:
            raise ParameterError(f"n0 must be > 0, got {self.n0}")

    @property
    def bits_per_frame(self) -> int:
        return self.n_subcarriers * self.bits_per_symbol


@dataclass(frozen=True)
class SymbolFrame:
    """One frame of transmitted symbols together with the bits they encode."""

    symbols: np.ndarray
    bits: np.ndarray


@dataclass(frozen=True)
class Observation:
    """Receiver-side projected vector y plus the config that produced it."""

    y: np.ndarray
    config: SefdmConfig = field(repr=False)

    def __post_init__(self):
        if self.y.shape != (self.config.n_subcarriers,):
            raise ParameterError(
                f"observation length {self.y.shape} does not match N={self.config.n_subcarriers}"
            )


def build_subcarrier_matrix(n: int, alpha: float) -> np.ndarray:
    """N x N subcarrier matrix with entries exp(2*pi*i*alpha*m*n/N)/sqrt(N).

    Every column has unit norm for any alpha; at alpha = 1 the matrix is the
    unitary inverse-DFT matrix.
    """
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    if not 0.0 < alpha <= 1.0:
        raise ParameterError(f"alpha must be in (0, 1], got {alpha}")
    idx = np.arange(n)
    return np.exp(2j * np.pi * alpha * np.outer(idx, idx) / n) / np.sqrt(n)


def gray_map_qpsk(bits: np.ndarray) -> np.ndarray:
    """Map an even-length bit vector onto unit-energy Gray-coded QPSK symbols."""
    bits = np.asarray(bits)
    if bits.ndim != 1 or bits.size % 2 != 0:
        raise ParameterError(f"bit vector must be 1-D with even length, got shape {bits.shape}")
    pairs = 2 * bits[0::2].astype(np.intp) + bits[1::2].astype(np.intp)
    return QPSK_SYMBOLS[pairs]


def gray_demap_qpsk(symbols: np.ndarray) -> np.ndarray:
    """Quadrant (minimum-distance) decision back to bits; inverse of gray_map_qpsk."""
    symbols = np.asarray(symbols)
    out = np.empty(symbols.size * 2, dtype=np.uint8)
    out[0::2] = symbols.imag < 0
    out[1::2] = symbols.real < 0
    return out


def symbol_classes(bits: np.ndarray) -> np.ndarray:
    """Per-symbol class index in [0, 4): the 2-bit integer of each Gray pair."""
    bits = np.asarray(bits)
    return 2 * bits[..., 0::2].astype(np.intp) + bits[..., 1::2].astype(np.intp)


def bits_from_classes(classes: np.ndarray) -> np.ndarray:
    """Inverse of symbol_classes: interleave the two bits of each class index."""
    classes = np.asarray(classes)
    out = np.empty(classes.shape[:-1] + (classes.shape[-1] * 2,), dtype=np.uint8)
    out[..., 0::2] = (classes >> 1) & 1
    out[..., 1::2] = classes & 1
    return out


def random_frame(cfg: SefdmConfig, rng: np.random.Generator) -> SymbolFrame:
    """Draw i.i.d. uniform bits for one frame and Gray-map them."""
    bits = rng.integers(0, 2, size=cfg.bits_per_frame, dtype=np.uint8)
    return SymbolFrame(symbols=gray_map_qpsk(bits), bits=bits)


def modulate(f_alpha: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Transmit-side synthesis: returns F^alpha @ s."""
    if f_alpha.shape[1] != np.shape(s)[-1]:
        raise ParameterError(
            f"matrix is {f_alpha.shape}, symbol vector has length {np.shape(s)[-1]}"
        )
    return np.asarray(s) @ f_alpha.T


def awgn_channel(signal: np.ndarray, n0: float, rng: np.random.Generator) -> np.ndarray:
    """Add circular complex white Gaussian noise, total variance n0 per sample."""
    if not n0 > 0.0:
        raise ParameterError(f"n0 must be > 0, got {n0}")
    signal = np.asarray(signal)
    scale = np.sqrt(n0 / 2.0)
    noise = rng.standard_normal(signal.shape) * scale + 1j * (
        rng.standard_normal(signal.shape) * scale
    )
    return signal + noise


def project_receiver(q: np.ndarray, received: np.ndarray, cfg: SefdmConfig) -> Observation:
    """Project the incoming signal onto the orthonormal basis: y = Q^H r.

    Q must come from the QR factorization of the same F^alpha that produced
    the signal; the projection preserves whiteness and Gaussianity of the
    noise, so y = R s + n_q with n_q ~ CN(0, n0 I).
    """
    received = np.asarray(received)
    if q.shape[0] != received.shape[-1]:
        raise ParameterError(f"Q is {q.shape}, received vector has length {received.shape[-1]}")
    return Observation(y=received @ q.conj(), config=cfg)


def project_frames(q: np.ndarray, received: np.ndarray) -> np.ndarray:
    """Batched projection for (frames, N) arrays; same math as project_receiver."""
    if q.shape[0] != received.shape[-1]:
        raise ParameterError(f"Q is {q.shape}, received frames have length {received.shape[-1]}")
    return received @ q.conj()


def precode_and_modulate(
    f_alpha: np.ndarray, v: np.ndarray, p: np.ndarray, s: np.ndarray
) -> np.ndarray:
    """Capacity-achieving transmit chain F^alpha V diag(sqrt(p)) V^H s.

    Stream i of the parallelized channel (the i-th right-singular direction)
    carries power p_i: after the receiver chain U^H Q^H the noiseless
    observation is exactly Sigma diag(sqrt(p)) V^H s.
    """
    s = np.asarray(s)
    n = f_alpha.shape[1]
    if v.shape != (n, n) or np.shape(p)[-1] != n or s.shape[-1] != n:
        raise ParameterError(
            f"inconsistent shapes: F {f_alpha.shape}, V {v.shape}, p {np.shape(p)}, s {s.shape}"
        )
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0):
        raise ParameterError("power allocation must be nonnegative")
    x = s @ v.conj()                  # V^H s
    x = x * np.sqrt(p)                # amplitude sqrt(p_i) so stream power is p_i
    return (x @ v.T) @ f_alpha.T      # F^alpha V (.)


def ebn0_to_n0(ebn0_db: float, bits_per_symbol: int, es: float = 1.0) -> float:
    """Noise level for a target per-bit SNR: N0 = Es / (k * 10^(EbN0_dB/10))."""
    if not es > 0.0:
        raise ParameterError(f"es must be > 0, got {es}")
    return es / (bits_per_symbol * 10.0 ** (ebn0_db / 10.0))
