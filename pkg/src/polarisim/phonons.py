"""Thermal sampling of the classical phonon bath.

Initial conditions are Boltzmann-distributed for unit-mass harmonic
modes: q ~ N(0, k_B T/omega^2), p ~ N(0, k_B T).  An optional Wigner
variance (coth(beta*omega/2)/(2*omega) for q, scaled by omega^2 for p)
is available for sensitivity studies.

Streams are counter-based (numpy Philox keyed by (seed, stream index)),
so every trajectory's draws are reproducible independent of worker
scheduling.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .units import UNITS, ModelParameters
from .model import CouplingWeights

SAMPLING_MODES = ("independent", "synchronized")


@dataclass
class PhononState:
    q: np.ndarray  # (N, N_L) mass-weighted coordinates
    p: np.ndarray  # (N, N_L) momenta

    def copy(self) -> "PhononState":
        return PhononState(self.q.copy(), self.p.copy())


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Philox generator for a given (seed, stream) pair.

    Philox is counter-based and keyed, so streams are independent and
    the mapping from (seed, stream, draw order) to values is fixed.
    """
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(stream)])
    return np.random.Generator(np.random.Philox(key=key))


def _variances(params: ModelParameters):
    omega = params.phonon_omega
    kbt = UNITS.kelvin_to_hartree * params.temperature
    if params.sampling_variance == "wigner":
        if params.temperature == 0.0:
            var_q = 1.0 / (2.0 * omega)
        else:
            var_q = 1.0 / (2.0 * omega * np.tanh(0.5 * params.beta * omega))
        return var_q, var_q * omega * omega
    return kbt / (omega * omega), kbt


def sample_thermal(params: ModelParameters, rng_seed: int,
                   stream: int = 0) -> PhononState:
    """Independent thermal draw for every (site, layer) mode."""
    shape = (params.n_sites, params.n_layers)
    if params.temperature == 0.0 and params.sampling_variance == "classical":
        warnings.warn("T = 0: phonons start frozen at q = p = 0")
        return PhononState(np.zeros(shape), np.zeros(shape))
    rng = make_rng(rng_seed, stream)
    var_q, var_p = _variances(params)
    q = rng.normal(0.0, np.sqrt(var_q), size=shape)
    p = rng.normal(0.0, np.sqrt(var_p), size=shape)
    return PhononState(q, p)


def sample_synchronized(params: ModelParameters, rng_seed: int,
                        stream: int = 0) -> PhononState:
    """Constrained draw: layer-1 values copied to every layer.

    Both q and p are synchronized; q alone fixes the initial coupling
    but p controls how the copies evolve.
    """
    state = sample_thermal(params, rng_seed, stream)
    state.q[:, :] = state.q[:, :1]
    state.p[:, :] = state.p[:, :1]
    return state


def sample(params: ModelParameters, mode: str, rng_seed: int,
           stream: int = 0) -> PhononState:
    if mode == "independent":
        return sample_thermal(params, rng_seed, stream)
    if mode == "synchronized":
        return sample_synchronized(params, rng_seed, stream)
    raise ValueError(f"unknown sampling mode '{mode}'")


def layer_averaged_fluctuation(state: PhononState,
                               weights: CouplingWeights) -> np.ndarray:
    """qbar_n = (1/S) * sum_m sin^2(k0*y_m) * q_{n,m}.

    The coupling the bright exciton actually sees; its ensemble variance
    is <q^2> * layer_factor.
    """
    w = weights.v ** 2 / weights.S
    return state.q @ w
