"""Detection baselines behind a single interface: exhaustive vectorial MLD
(the optimality oracle) and the per-subcarrier hard decision used for the
OFDM comparison curves.

Detectors are stateless after construction and safe to call from concurrent
workers; `detect_frames` is the batched entry point the Monte Carlo harness
drives, `detect` the single-observation convenience wrapper.
"""

from __future__ import annotations

import numpy as np

from .core import (
    QPSK_SYMBOLS,
    Observation,
    bits_from_classes,
    gray_demap_qpsk,
    symbol_classes,
)
from .errors import ParameterError

MLD_MAX_SUBCARRIERS = 10  # 4^N candidates; beyond this the oracle is intractable


class DetectorInterface:
    """Maps observations to bit decisions; output length is 2N for QPSK."""

    name: str = "detector"

    def detect_frames(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def detect(self, observation: Observation) -> np.ndarray:
        return self.detect_frames(observation.y[np.newaxis, :])[0]


class HardDecisionDetector(DetectorInterface):
    """Independent quadrant decision per subcarrier (optimal for OFDM only)."""

    name = "hard"

    def detect_frames(self, y: np.ndarray) -> np.ndarray:
        y = np.atleast_2d(y)
        frames, n = y.shape
        out = np.empty((frames, 2 * n), dtype=np.uint8)
        out[:, 0::2] = y.imag < 0
        out[:, 1::2] = y.real < 0
        return out


def _candidate_table(n: int) -> tuple[np.ndarray, np.ndarray]:
    """All 4^n QPSK frames in bit-lexicographic order: (bits, symbols)."""
    count = 4**n
    codes = np.arange(count, dtype=np.int64)
    shifts = np.arange(2 * n - 1, -1, -1)
    bits = ((codes[:, None] >> shifts[None, :]) & 1).astype(np.uint8)
    return bits, QPSK_SYMBOLS[symbol_classes(bits)]


class MldDetector(DetectorInterface):
    """Exhaustive maximum-likelihood detection: argmin over all candidate
    frames s of ||y - R s||^2, ties broken toward the lowest candidate index.

    Complexity-guarded: refuses N > max_n (4^N candidates per frame).
    """

    name = "mld"

    def __init__(self, r: np.ndarray, max_n: int = MLD_MAX_SUBCARRIERS):
        r = np.asarray(r)
        if r.ndim != 2 or r.shape[0] != r.shape[1]:
            raise ParameterError(f"R must be square, got shape {r.shape}")
        n = r.shape[0]
        if n > max_n:
            raise ParameterError(
                f"MLD over N={n} subcarriers needs 4^{n} candidates; cap is N <= {max_n}"
            )
        self._bits, symbols = _candidate_table(n)
        self._rs = symbols @ r.T            # candidate images R s, (4^N, N)
        self._rs_energy = np.einsum("cn,cn->c", self._rs, self._rs.conj()).real

    def detect_frames(self, y: np.ndarray) -> np.ndarray:
        y = np.atleast_2d(y)
        if y.shape[1] != self._rs.shape[1]:
            raise ParameterError(
                f"frames have {y.shape[1]} subcarriers, detector expects {self._rs.shape[1]}"
            )
        # ||y - Rs||^2 = ||y||^2 - 2 Re<Rs, y> + ||Rs||^2; drop the ||y||^2 term.
        cross = (self._rs.conj() @ y.T).real               # (candidates, frames)
        score = self._rs_energy[:, None] - 2.0 * cross
        best = np.argmin(score, axis=0)                    # first minimum = lowest index
        return self._bits[best]


def detect_hard(observation: Observation) -> np.ndarray:
    """Functional form of the hard-decision baseline."""
    return gray_demap_qpsk(observation.y)


def detect_mld(observation: Observation, r: np.ndarray, max_n: int = MLD_MAX_SUBCARRIERS) -> np.ndarray:
    """Functional form of exhaustive MLD; builds the candidate table per call,
    so prefer MldDetector for bulk work."""
    return MldDetector(r, max_n=max_n).detect(observation)


__all__ = [
    "DetectorInterface",
    "HardDecisionDetector",
    "MldDetector",
    "detect_hard",
    "detect_mld",
    "bits_from_classes",
    "MLD_MAX_SUBCARRIERS",
]
