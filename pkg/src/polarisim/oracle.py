"""Brute-force dense Hamiltonian and propagator for small instances.

Validates the split-operator kernel and the polariton basis against a
full matrix exponential.  Ships in the library (not test-only) so the
CLI `verify` subcommand can re-run the checks on any configuration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .units import ModelParameters
from .model import Geometry, coupling_weights, coupling_strength, \
    photon_dispersion
from .phonons import PhononState

MAX_DENSE_DIM = 4096


@dataclass
class DenseHamiltonian:
    """Full single-excitation Hamiltonian over {|1_k>} + {|n,m>}.

    Row/column layout: N photon modes in FFT k-order, then excitons
    flattened site-major (index N + n*N_L + m).
    """

    matrix: np.ndarray
    n_sites: int
    n_layers: int
    _eig: tuple = field(default=None, repr=False)

    def photon_index(self, k_pos: int) -> int:
        return k_pos

    def exciton_index(self, n: int, m: int) -> int:
        return self.n_sites + n * self.n_layers + m

    def eigensystem(self):
        if self._eig is None:
            vals, vecs = np.linalg.eigh(self.matrix)
            self._eig = (vals, vecs)
        return self._eig


def build_dense(params: ModelParameters, geometry: Geometry,
                phonons: PhononState) -> DenseHamiltonian:
    """Assemble H = H_X + H_c + H_cX + H_bX(q) over the full basis."""
    n, nl = geometry.n_sites, geometry.n_layers
    dim = n + n * nl
    if dim > MAX_DENSE_DIM:
        raise ValueError(f"dense Hamiltonian dimension {dim} exceeds "
                         f"guard {MAX_DENSE_DIM}")
    weights = coupling_weights(geometry)
    h = np.zeros((dim, dim), dtype=complex)

    # photon block
    omega = photon_dispersion(geometry.k_grid, params)
    h[np.arange(n), np.arange(n)] = omega

    # exciton block: on-site + phonon shift, periodic nearest-neighbor hopping
    for n_site in range(n):
        for m in range(nl):
            i = n + n_site * nl + m
            h[i, i] = params.epsilon0 + params.gamma * phonons.q[n_site, m]
            j = n + ((n_site + 1) % n) * nl + m
            h[i, j] += -params.tau
            h[j, i] += -params.tau

    # exciton-photon coupling, in-plane phase retained
    omega_c = coupling_strength(geometry.k_grid, params, weights.S)
    phase = np.exp(1j * np.outer(geometry.k_grid, geometry.site_positions))
    for kp in range(n):
        for n_site in range(n):
            amp = omega_c[kp] / np.sqrt(n) * phase[kp, n_site]
            for m in range(nl):
                i = n + n_site * nl + m
                h[i, kp] += amp * weights.v[m]
                h[kp, i] += np.conj(amp) * weights.v[m]

    return DenseHamiltonian(matrix=h, n_sites=n, n_layers=nl)


def state_to_vector(c: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.concatenate([c, b.ravel()])


def vector_to_state(vec: np.ndarray, n_sites: int, n_layers: int):
    c = vec[:n_sites].copy()
    b = vec[n_sites:].reshape(n_sites, n_layers).copy()
    return c, b


def dense_propagate_vector(vec: np.ndarray, ham: DenseHamiltonian,
                           dt: float) -> np.ndarray:
    """exp(-i H dt) applied through the full eigendecomposition."""
    vals, vecs = ham.eigensystem()
    coeffs = vecs.conj().T @ vec
    coeffs *= np.exp(-1j * vals * dt)
    return vecs @ coeffs
