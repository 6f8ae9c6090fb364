"""Kinetic rate extraction and the vertical-transition analyzer.

Covers the three-state (upper/dark/lower) rate-matrix model, exponential
decay fits for the intraband scattering rate, the closed-form
layer-scaling laws, and the ensemble-averaged upper-to-lower transfer
matrices behind the vertical-transition argument.

Times and rates are unit-agnostic: rates come back in the reciprocal of
whatever unit the time axis uses.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import expm
from scipy.optimize import least_squares

from .units import ModelParameters
from .model import (PolaritonBasis, build_geometry, coupling_weights,
                    layer_factor)
from .phonons import PhononState

STATE_ORDER = ("upper", "dark", "lower")


@dataclass(frozen=True)
class RateMatrix:
    """Six nonnegative rates of the three-state kinetic model."""

    k_ul: float  # upper -> lower
    k_ud: float  # upper -> dark
    k_du: float  # dark -> upper
    k_dl: float  # dark -> lower
    k_lu: float  # lower -> upper
    k_ld: float  # lower -> dark

    @property
    def generator(self) -> np.ndarray:
        """3x3 generator over (P_+, P_d, P_-); columns sum to zero."""
        return np.array([
            [-self.k_ul - self.k_ud, self.k_du, self.k_lu],
            [self.k_ud, -self.k_dl - self.k_du, self.k_ld],
            [self.k_ul, self.k_dl, -self.k_lu - self.k_ld],
        ])

    def as_array(self) -> np.ndarray:
        return np.array([self.k_ul, self.k_ud, self.k_du,
                         self.k_dl, self.k_lu, self.k_ld])

    @classmethod
    def from_array(cls, rates) -> "RateMatrix":
        return cls(*(float(r) for r in rates))


def predict_populations(rates: RateMatrix, p0, times) -> np.ndarray:
    """P(t) = exp(K t) P(0) for each requested time, as a (3, T) array.

    Eigendecomposition when the generator is diagonalizable; near-defective
    generators fall back to scipy's scaling-and-squaring exponential.
    """
    k = rates.generator
    p0 = np.asarray(p0, dtype=float)
    times = np.asarray(times, dtype=float)
    vals, vecs = np.linalg.eig(k)
    use_eig = np.linalg.matrix_rank(vecs, tol=1e-12) == 3
    if use_eig:
        cond = np.linalg.cond(vecs)
        use_eig = np.isfinite(cond) and cond < 1e10
    if use_eig:
        coeffs = np.linalg.solve(vecs, p0.astype(complex))
        out = (vecs @ (coeffs[:, None] * np.exp(np.outer(vals, times)))).real
    else:
        out = np.column_stack([expm(k * t) @ p0 for t in times])
    return out


def _synthetic_start_rates(t_span: float):
    """Deterministic multistart grid, scale-free in the time unit."""
    return [np.full(6, c / t_span)
            for c in (0.2, 0.5, 1.0, 2.0, 5.0, 10.0, 25.0, 60.0)]


def _slope_start(times, populations, t_span):
    """Crude early-time slope estimates as an extra start point."""
    n_early = max(2, len(times) // 10)
    t = times[:n_early]
    floor = 1e-3 / t_span

    def slope(series):
        return np.polyfit(t, series[:n_early], 1)[0]

    p_up0 = max(populations[0, 0], 1e-6)
    k_ul = max(slope(populations[2]) / p_up0, floor)
    k_ud = max(slope(populations[1]) / p_up0, floor)
    return np.array([k_ul, k_ud, floor, max(0.3 * k_ul, floor), floor, floor])


@dataclass
class RateFit:
    rates: RateMatrix
    residual: float
    converged: bool
    start_index: int


def fit_rate_matrix(times, populations, n_starts: int = 8) -> RateFit:
    """Nonnegative least-squares fit of the six rates to 3xT population data.

    Rates are parameterized as exponentials of unconstrained variables.
    Deterministic multistart: n_starts log-spaced uniform-rate grids plus
    one early-slope heuristic; ties break on lowest residual, then lowest
    k_UL, then start index.
    """
    times = np.asarray(times, dtype=float)
    populations = np.asarray(populations, dtype=float)
    if times.size < 8:
        raise ValueError("need at least 8 time points to fit six rates")
    if populations.shape != (3, times.size):
        raise ValueError("populations must be a 3xT array matching times")
    sums = populations.sum(axis=0)
    if np.any(np.abs(sums - 1.0) > 0.02):
        raise ValueError("population columns must sum to 1 within 2%")
    p0 = populations[:, 0] / sums[0]
    t_span = float(times[-1] - times[0]) or 1.0

    def residual(u):
        model = predict_populations(RateMatrix.from_array(np.exp(u)), p0, times)
        return (model - populations).ravel()

    starts = _synthetic_start_rates(t_span)[:max(n_starts, 1)]
    starts.append(_slope_start(times, populations, t_span))
    best = None
    for idx, start in enumerate(starts):
        sol = least_squares(residual, np.log(start), method="trf",
                            xtol=1e-14, ftol=1e-14, gtol=1e-14,
                            max_nfev=4000)
        res = float(np.sqrt(np.sum(sol.fun ** 2)))
        k_ul = float(np.exp(sol.x[0]))
        key = (res, k_ul, idx)
        if best is None or key < best[0]:
            best = (key, sol)
    key, sol = best
    return RateFit(rates=RateMatrix.from_array(np.exp(sol.x)),
                   residual=key[0], converged=bool(sol.status > 0),
                   start_index=key[2])


@dataclass
class ExponentialFit:
    amplitude: float
    rate: float
    offset: float
    residual: float
    decaying: bool


def fit_exponential(times, series) -> ExponentialFit:
    """Fit a*exp(-K*t) + b with K >= 0.

    Initial K from a log-linear regression on the floored series; a
    non-decaying input comes back flagged with K ~ 0.
    """
    times = np.asarray(times, dtype=float)
    series = np.asarray(series, dtype=float)
    if times.size < 5:
        raise ValueError("need at least 5 points for an exponential fit")
    t_span = float(times[-1] - times[0]) or 1.0
    shifted = series - series.min()
    scale = shifted.max()
    mask = shifted > 1e-3 * max(scale, 1e-300)
    if mask.sum() >= 2 and scale > 0:
        slope, intercept = np.polyfit(times[mask], np.log(shifted[mask]), 1)
        k0 = max(-slope, 1e-6 / t_span)
        a0 = float(np.exp(intercept))
    else:
        k0, a0 = 1e-6 / t_span, max(scale, 1e-12)
    b0 = float(series.min())

    def residual(x):
        a, log_k, b = x
        return a * np.exp(-np.exp(log_k) * times) + b - series

    sol = least_squares(residual, np.array([a0, np.log(k0), b0]),
                        method="trf", xtol=1e-14, ftol=1e-14, gtol=1e-14,
                        max_nfev=2000)
    a, log_k, b = sol.x
    rate = float(np.exp(log_k))
    res = float(np.sqrt(np.sum(sol.fun ** 2)))
    decaying = rate * t_span > 1e-3 and a > 0
    return ExponentialFit(float(a), rate, float(b), res, decaying)


# -- layer-scaling laws ---------------------------------------------------


def scaling_laws(n_layers: int, params: ModelParameters,
                 a_fs: float, a_ul: float, a_ud: float,
                 a_dl: float) -> dict:
    """Closed-form layer dependence of the four rate constants.

    K_FS and K_UL scale with the fluctuation-averaging factor f(N_L);
    K_UD carries the extra (N_L - 1) dark-manifold multiplicity; K_DL
    scales with f(N_L) alone.
    """
    geometry = build_geometry(params.with_overrides(n_layers=n_layers))
    f = layer_factor(coupling_weights(geometry))
    return {
        "k_fs": a_fs * f,
        "k_ul": a_ul * f,
        "k_ud": a_ud * (n_layers - 1) * f,
        "k_dl": a_dl * f,
        "layer_factor": f,
    }


# -- vertical-transition analyzer -----------------------------------------


@dataclass
class TransferMatrices:
    """|<-,k'| X |+,k>| ensemble averages on a k-subgrid.

    order1/order2/full correspond to X = -i*H_bX*dt, (-i*H_bX*dt)^2/2,
    and exp(-i*H_bX*dt) - 1; rows index k, columns k'.
    """

    k_subgrid: np.ndarray  # integer grid indices n_x
    order1: np.ndarray
    order2: np.ndarray
    full: np.ndarray
    delta_t: float

    def diagonal_dominance(self):
        """(max off-diagonal, mean diagonal, their ratio) of `full`."""
        diag = np.diag(self.full)
        off = self.full - np.diag(diag)
        max_off = float(off.max()) if off.size else 0.0
        mean_diag = float(diag.mean())
        ratio = max_off / mean_diag if mean_diag > 0 else np.inf
        return max_off, mean_diag, ratio


def default_k_subgrid(basis: PolaritonBasis, count: int = 64) -> np.ndarray:
    """Snapped positive-k grid covering the hybridization zone.

    Spans from the anti-crossing up the branch to where the UP-LP gap has
    doubled relative to the Rabi splitting, i.e. the region where the
    branches retain mixed character and interband transitions occur.
    """
    idx = basis.geometry.k_index
    pos = np.where(idx > 0)[0]
    order = pos[np.argsort(idx[pos])]
    gap = basis.e_upper[order] - basis.e_lower[order]
    min_gap = gap.min()
    inside = np.where(gap <= 2.0 * min_gap)[0]
    hi = inside[-1] if inside.size else 0
    n_hi = max(int(idx[order[hi]]), count)
    n_hi = min(n_hi, int(idx[order[-1]]))
    chosen = np.unique(np.round(np.linspace(1, n_hi, count)).astype(int))
    return chosen


def vertical_transfer_matrices(params: ModelParameters,
                               basis: PolaritonBasis,
                               phonon_ensemble: Sequence[PhononState],
                               delta_t: float,
                               k_subgrid: np.ndarray = None) -> TransferMatrices:
    """Ensemble-averaged interband transfer elements on the subgrid.

    Uses the site-diagonal closed form: with w_n the bright-weighted
    layer average of T(gamma*q*dt) for the order-resolved T, the bracket
    depends on k'-k only through (1/N) sum_n exp(i(k'-k)x_n) w_n, an
    inverse FFT.  Complex elements are averaged over the ensemble first,
    then the magnitude is taken (first-order elements vanish as <q> -> 0).
    """
    if not phonon_ensemble:
        raise ValueError("phonon ensemble must be nonempty")
    if delta_t <= 0:
        raise ValueError("delta_t must be positive")
    if k_subgrid is None:
        k_subgrid = default_k_subgrid(basis)
    k_subgrid = np.asarray(k_subgrid, dtype=int)
    n = basis.geometry.n_sites
    weights = basis.weights.v ** 2 / basis.weights.S
    g_dt = params.gamma * delta_t

    mean = {name: np.zeros(n, dtype=complex)
            for name in ("order1", "order2", "full")}
    for state in phonon_ensemble:
        z = g_dt * state.q
        mean["order1"] += np.fft.ifft((-1j * z) @ weights)
        mean["order2"] += np.fft.ifft((-0.5 * z * z) @ weights)
        mean["full"] += np.fft.ifft((np.exp(-1j * z) - 1.0) @ weights)
    for name in mean:
        mean[name] /= len(phonon_ensemble)

    # element(k,k') = sin(theta_k) cos(theta_k') * [delta_kk' - W(k'-k)]
    # with the delta cancelled against the zeroth Taylor order, so each
    # order's bracket is just -W_order(k'-k).
    pos_of = {int(nx): i for i, nx in enumerate(basis.geometry.k_index)}
    rows = np.array([pos_of[int(nx)] for nx in k_subgrid])
    sin_row = np.sin(basis.theta[rows])
    cos_col = np.cos(basis.theta[rows])
    delta_idx = (k_subgrid[None, :] - k_subgrid[:, None]) % n
    pref = np.outer(sin_row, cos_col)
    out = {}
    for name in ("order1", "order2", "full"):
        out[name] = np.abs(pref * (-mean[name][delta_idx]))
    return TransferMatrices(k_subgrid=k_subgrid, order1=out["order1"],
                            order2=out["order2"], full=out["full"],
                            delta_t=delta_t)


def phonon_disorder_factor(phonon_ensemble: Sequence[PhononState],
                           gamma: float, delta_t: float):
    """<1 - exp(-i*gamma*q*dt)> over every sampled coordinate.

    Returns (factor, order-2 prediction (gamma*dt)^2/2 * <q^2>) for the
    classical-limit comparison.
    """
    if not phonon_ensemble:
        raise ValueError("phonon ensemble must be nonempty")
    total = 0.0 + 0.0j
    sq = 0.0
    count = 0
    for state in phonon_ensemble:
        z = gamma * delta_t * state.q
        total += np.sum(1.0 - np.exp(-1j * z))
        sq += float(np.sum(state.q ** 2))
        count += state.q.size
    factor = total / count
    prediction = 0.5 * (gamma * delta_t) ** 2 * (sq / count)
    return factor, prediction
