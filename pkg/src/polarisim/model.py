"""Lattice/cavity geometry, dispersions, and the exact polariton basis.

Conventions fixed here and relied on everywhere else:

* The in-plane momentum grid is stored in FFT (unshifted) order, i.e.
  integer indices n_x = 0, 1, ..., N/2-1, -N/2, ..., -1 with
  k = 2*pi*n_x/(N*alpha).  This makes the site<->momentum transform a
  plain unitary FFT with no reshuffling in the propagation loop.
* The layer stack is centered on the cavity midplane L/2 (field
  antinode), so a single layer has S = 1 and the published single-layer
  coupling applies unchanged.  ``stack_center_offset`` shifts the stack.
* The mixing angle is theta_k = 0.5*atan2(2*sqrt(S)*Omega_k,
  eps_k - omega_k), continuous across the anti-crossing, with
  sin(theta_k) the photon weight of the upper polariton.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .units import UNITS, ModelParameters


@dataclass(frozen=True)
class Geometry:
    site_positions: np.ndarray   # (N,) x_n = n*alpha
    layer_positions: np.ndarray  # (N_L,) y_m
    k_index: np.ndarray          # (N,) integer n_x in FFT order
    k_grid: np.ndarray           # (N,) k = 2*pi*n_x/(N*alpha)
    k0: float                    # pi/L

    @property
    def n_sites(self) -> int:
        return self.site_positions.size

    @property
    def n_layers(self) -> int:
        return self.layer_positions.size

    @property
    def k_unit(self) -> float:
        """Grid momentum unit 2*pi/(N*alpha)."""
        return self.k_grid[1] if self.n_sites > 1 else 0.0


@dataclass(frozen=True)
class CouplingWeights:
    v: np.ndarray             # (N_L,) v_m = sin(k0*y_m)
    S: float                  # sum of v_m^2
    bright_vector: np.ndarray  # (N_L,) v_m/sqrt(S), unit norm


@dataclass(frozen=True)
class DarkBasis:
    """Orthonormal complement of the bright layer vector, (N_L, N_L-1)."""

    D: np.ndarray


@dataclass(frozen=True)
class PolaritonBasis:
    """Per-momentum mixing angles and eigenenergies, FFT-ordered arrays."""

    geometry: Geometry
    weights: CouplingWeights
    theta: np.ndarray             # (N,)
    e_upper: np.ndarray           # (N,) E_{+,k}
    e_lower: np.ndarray           # (N,) E_{-,k}
    omega_k: np.ndarray           # (N,) photon energies
    epsilon_k: np.ndarray         # (N,) exciton band
    omega_coupling_k: np.ndarray  # (N,) Omega_k


def build_geometry(params: ModelParameters) -> Geometry:
    n, nl = params.n_sites, params.n_layers
    sites = np.arange(n) * params.alpha
    center = params.cavity_length / 2.0 + params.stack_center_offset
    m = np.arange(1, nl + 1)
    layers = center + (m - (nl + 1) / 2.0) * params.alpha_y
    if np.any(layers <= 0.0) or np.any(layers >= params.cavity_length):
        raise ValueError("layer stack extends outside the cavity")
    k_index = np.fft.fftfreq(n, d=1.0 / n).astype(int)
    k_grid = 2.0 * np.pi * k_index / (n * params.alpha)
    return Geometry(sites, layers, k_index, k_grid, np.pi / params.cavity_length)


def coupling_weights(geometry: Geometry) -> CouplingWeights:
    v = np.sin(geometry.k0 * geometry.layer_positions)
    s = float(np.sum(v * v))
    if s <= 0.0:
        raise ValueError("coupling weight sum S must be positive")
    return CouplingWeights(v=v, S=s, bright_vector=v / np.sqrt(s))


def exciton_band(k, params: ModelParameters):
    """Tight-binding band eps_k = eps0 - 2*tau*cos(k*alpha)."""
    return params.epsilon0 - 2.0 * params.tau * np.cos(np.asarray(k) * params.alpha)


def photon_dispersion(k, params: ModelParameters):
    """Cavity photon branch omega_k = (c/eta)*sqrt(k^2 + k0^2)."""
    k0 = np.pi / params.cavity_length
    return (UNITS.speed_of_light_au / params.refractive_index) * np.sqrt(
        np.asarray(k) ** 2 + k0 * k0
    )


def coupling_strength(k, params: ModelParameters, S: float):
    """Omega_k = sqrt(omega_0/omega_k) * Omega_0 / sqrt(S).

    The 1/sqrt(S) renormalization keeps the collective coupling
    sqrt(S)*Omega_k, and hence the Rabi splitting, independent of the
    number of layers.
    """
    omega_k = photon_dispersion(k, params)
    omega_0 = photon_dispersion(0.0, params)
    return np.sqrt(omega_0 / omega_k) * params.omega0_coupling / np.sqrt(S)


def mixing_angle(omega_k, epsilon_k, collective_coupling):
    """theta_k in (0, pi/2); sin(theta) = photon weight of the upper branch.

    atan2 on (2g, eps-omega) keeps the branch continuous through the
    anti-crossing, where the half-arctangent form is ambiguous.
    """
    return 0.5 * np.arctan2(2.0 * np.asarray(collective_coupling),
                            np.asarray(epsilon_k) - np.asarray(omega_k))


def build_polariton_basis(params: ModelParameters) -> PolaritonBasis:
    geometry = build_geometry(params)
    weights = coupling_weights(geometry)
    k = geometry.k_grid
    omega = photon_dispersion(k, params)
    epsilon = exciton_band(k, params)
    omega_c = coupling_strength(k, params, weights.S)
    g = np.sqrt(weights.S) * omega_c
    theta = mixing_angle(omega, epsilon, g)
    mean = 0.5 * (omega + epsilon)
    half_gap = 0.5 * np.sqrt((omega - epsilon) ** 2 + 4.0 * g * g)
    return PolaritonBasis(
        geometry=geometry,
        weights=weights,
        theta=theta,
        e_upper=mean + half_gap,
        e_lower=mean - half_gap,
        omega_k=omega,
        epsilon_k=epsilon,
        omega_coupling_k=omega_c,
    )


def build_dark_basis(weights: CouplingWeights) -> DarkBasis:
    """Deterministic orthonormal complement of the bright vector.

    Householder reflector carrying the first coordinate axis onto the
    bright vector (up to overall sign, chosen for numerical stability);
    its remaining columns span the dark subspace.
    """
    v = weights.bright_vector
    nl = v.size
    if nl == 1:
        return DarkBasis(np.zeros((1, 0)))
    sign = 1.0 if v[0] >= 0.0 else -1.0
    u = v.copy()
    u[0] += sign
    h = np.eye(nl) - 2.0 * np.outer(u, u) / np.dot(u, u)
    return DarkBasis(h[:, 1:])


def layer_factor(weights: CouplingWeights) -> float:
    """Multilayer averaging factor f = sum_m sin^4(k0*y_m) / S^2, in (0,1]."""
    return float(np.sum(weights.v ** 4) / weights.S ** 2)


def layer_factor_for(params: ModelParameters, n_layers: int) -> float:
    """f(N_L) for the same cavity/stack geometry with n_layers layers."""
    return layer_factor(coupling_weights(build_geometry(
        params.with_overrides(n_layers=n_layers))))


def effective_temperature(temperature_kelvin: float,
                          weights: CouplingWeights) -> float:
    """T_eff = T * f(N_L): the suppressed classical temperature seen by
    the bright exciton."""
    return temperature_kelvin * layer_factor(weights)


def vertical_criterion_ratio(params: ModelParameters):
    """Dimensionless vertical-transition criterion.

    r = (eta/c)*sqrt(|eps0^2 - omega_0^2|)*alpha; r << 1 predicts that
    phonon-induced interband transitions conserve in-plane momentum.
    Returns (r, is_vertical, inverted_detuning).
    """
    omega_0 = float(photon_dispersion(0.0, params))
    diff = params.epsilon0 ** 2 - omega_0 ** 2
    inverted = diff < 0.0
    r = (params.refractive_index / UNITS.speed_of_light_au) * np.sqrt(
        abs(diff)) * params.alpha
    return float(r), bool(r < 0.1), inverted
