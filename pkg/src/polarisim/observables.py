"""Band-resolved populations and the k-window decomposition.

All k-resolved arrays follow the FFT ordering of Geometry.k_grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import PolaritonBasis, DarkBasis


@dataclass
class KResolvedPopulations:
    p_upper_k: np.ndarray  # (N,)
    p_lower_k: np.ndarray  # (N,)
    dark_k: np.ndarray     # (N,) direct dark density per momentum
    dark_total: float      # complement value 1 - P_+ - P_- (reported)

    @property
    def p_upper(self) -> float:
        return float(self.p_upper_k.sum())

    @property
    def p_lower(self) -> float:
        return float(self.p_lower_k.sum())


@dataclass(frozen=True)
class WindowSpec:
    k_center: float
    halfwidth: float

    def mask(self, k_grid: np.ndarray) -> np.ndarray:
        return np.abs(k_grid - self.k_center) <= self.halfwidth


def momentum_amplitudes(state, basis: PolaritonBasis):
    """(c_k, bright_k, dark residue b_k - bright*vhat), FFT ordered."""
    bk = np.fft.fft(state.b, axis=0, norm="ortho")
    vhat = basis.weights.bright_vector
    bright = bk @ vhat
    dark = bk - np.multiply.outer(bright, vhat)
    return state.c, bright, dark


def band_populations(state, basis: PolaritonBasis,
                     dark: DarkBasis = None,
                     cross_check: bool = True) -> KResolvedPopulations:
    """Upper/lower polariton populations per k plus the dark remainder.

    The reported dark total is the complement 1 - P_+ - P_-; the direct
    sum over dark amplitudes is computed alongside and asserted to agree
    (basis completeness).
    """
    c, bright, dark_resid = momentum_amplitudes(state, basis)
    sin_t, cos_t = np.sin(basis.theta), np.cos(basis.theta)
    up = sin_t * c + cos_t * bright
    low = cos_t * c - sin_t * bright
    p_up = np.abs(up) ** 2
    p_low = np.abs(low) ** 2
    dark_k = np.sum(np.abs(dark_resid) ** 2, axis=1)
    complement = 1.0 - float(p_up.sum()) - float(p_low.sum())
    if cross_check:
        direct = float(dark_k.sum())
        if abs(direct - complement) > 1e-10:
            raise AssertionError(
                f"dark population mismatch: direct {direct!r} vs "
                f"complement {complement!r}")
    return KResolvedPopulations(p_up, p_low, dark_k, complement)


def window_populations(kres: KResolvedPopulations, window: WindowSpec,
                       k_grid: np.ndarray):
    """Lower-polariton population inside/outside the excitation window.

    Returns (p_in, p_out); the relative quantities are p_in/P_- and
    p_out/P_- (undefined when P_- = 0, reported as NaN by callers).
    """
    mask = window.mask(k_grid)
    p_in = float(kres.p_lower_k[mask].sum())
    return p_in, kres.p_lower - p_in
