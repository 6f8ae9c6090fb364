"""Ehrenfest split-operator propagation and trajectory ensembles.

One full time step of the default (Strang) scheme, applied left to
right:

    kick(dt/2)                      p += (dt/2) * F(q, |b|^2)
    env_phase(q, dt/2)              b *= exp(-i*gamma*q*dt/2)
    drift(dt)                       q += dt * p
    polariton_step(dt)              exact exp(-i*H_EP*dt) in the
                                    (UP, LP, dark) eigenbasis
    env_phase(q, dt/2)              with the updated q
    kick(dt/2)                      with the updated q and |b|^2

Both the quantum splitting (env halves around the polariton step) and
the quantum/classical interleaving (kicks outermost) are symmetric, so
the scheme is second order in dt; at dt -> 0 it agrees with the
first-order ordering, which remains available as splitting =
"paper_literal".

Because the env phase never changes |b| and the kick never changes q or
b, the trailing [env(dt/2), kick(dt/2)] of one step commutes with the
leading [kick(dt/2), env(dt/2)] of the next; the run loop fuses them
into full-dt applications between recording boundaries.

The polariton step uses a rank-1 bright-layer decomposition: the dark
subspace at momentum k is degenerate at eps_k, so the residue of b_k
orthogonal to the bright vector just picks up a phase and no explicit
dark-basis matrix is needed in the hot loop.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import multiprocessing
import numpy as np

from .units import ModelParameters, UNITS
from .model import PolaritonBasis, build_polariton_basis
from .phonons import PhononState, sample
from .observables import WindowSpec, band_populations


@dataclass
class WaveState:
    c: np.ndarray  # (N,) photon amplitudes, FFT k-order
    b: np.ndarray  # (N, N_L) site/layer exciton amplitudes

    def norm(self) -> float:
        return float(np.sum(np.abs(self.c) ** 2) + np.sum(np.abs(self.b) ** 2))

    def copy(self) -> "WaveState":
        return WaveState(self.c.copy(), self.b.copy())


class ExcitationWindowError(ValueError):
    pass


def excitation_weights(basis: PolaritonBasis, params: ModelParameters):
    """Amplitude envelope over positive-k polariton states.

    Gaussian in the branch energy (sigma = half_width/2) truncated at
    +-half_width, or flat over the window when excitation_envelope =
    "uniform".  The branch is the upper polariton unless
    excitation_branch = "lower" (used for intraband scattering studies).
    Returns (weights over the full FFT grid, population-weighted mean k).
    """
    e_c = params.excitation_center_energy
    hw = params.excitation_half_width
    energies = basis.e_lower if params.excitation_branch == "lower" \
        else basis.e_upper
    k_index = basis.geometry.k_index
    in_window = (k_index > 0) & (np.abs(energies - e_c) <= hw)
    if not np.any(in_window):
        positive = k_index > 0
        nearest = energies[positive][
            np.argmin(np.abs(energies[positive] - e_c))]
        raise ExcitationWindowError(
            f"no positive-k {params.excitation_branch}-polariton state "
            f"inside the excitation window {e_c / UNITS.hartree_per_ev:.4f} "
            f"+- {hw / UNITS.hartree_per_ev:.4f} eV; nearest attainable "
            f"E = {nearest / UNITS.hartree_per_ev:.4f} eV")
    w = np.zeros(basis.geometry.n_sites)
    if params.excitation_envelope == "gaussian":
        sigma = hw / 2.0
        w[in_window] = np.exp(-((energies[in_window] - e_c) ** 2)
                              / (2.0 * sigma * sigma))
    else:
        w[in_window] = 1.0
    w /= np.sqrt(np.sum(w * w))
    kbar = float(np.sum(w * w * basis.geometry.k_grid))
    return w, kbar


def prepare_initial_state(basis: PolaritonBasis,
                          params: ModelParameters) -> WaveState:
    """Normalized wavepacket on the positive-k branch, zero phases."""
    w, _ = excitation_weights(basis, params)
    if params.excitation_branch == "lower":
        c = (w * np.cos(basis.theta)).astype(complex)
        bright_k = -w * np.sin(basis.theta)
    else:
        c = (w * np.sin(basis.theta)).astype(complex)
        bright_k = w * np.cos(basis.theta)
    bk = np.multiply.outer(bright_k, basis.weights.bright_vector).astype(complex)
    b = np.fft.ifft(bk, axis=0, norm="ortho")
    return WaveState(c, b)


def excitation_window(basis: PolaritonBasis,
                      params: ModelParameters) -> WindowSpec:
    """k-window centered on the wavepacket mean, +-w grid units."""
    _, kbar = excitation_weights(basis, params)
    return WindowSpec(k_center=kbar,
                      halfwidth=params.k_window_halfwidth_units
                      * basis.geometry.k_unit)


class PolaritonKernel:
    """Exact exp(-i*H_EP*dt) via FFT plus a bright/dark split per k."""

    def __init__(self, basis: PolaritonBasis, dt: float):
        self.vhat = basis.weights.bright_vector
        sin_t, cos_t = np.sin(basis.theta), np.cos(basis.theta)
        p_up = np.exp(-1j * basis.e_upper * dt)
        p_low = np.exp(-1j * basis.e_lower * dt)
        # 2x2 photon/bright mixer conjugated back to the (c, B) basis
        self.m00 = sin_t ** 2 * p_up + cos_t ** 2 * p_low
        self.m01 = sin_t * cos_t * (p_up - p_low)
        self.m11 = cos_t ** 2 * p_up + sin_t ** 2 * p_low
        self.dark_phase = np.exp(-1j * basis.epsilon_k * dt)
        self._rank1 = np.empty(
            (basis.geometry.n_sites, basis.geometry.n_layers), dtype=complex)

    def apply(self, state: WaveState) -> None:
        bk = np.fft.fft(state.b, axis=0, norm="ortho")
        bright = bk @ self.vhat
        np.multiply.outer(bright, self.vhat, out=self._rank1)
        bk -= self._rank1
        bk *= self.dark_phase[:, None]
        c_new = self.m00 * state.c + self.m01 * bright
        bright_new = self.m01 * state.c + self.m11 * bright
        np.multiply.outer(bright_new, self.vhat, out=self._rank1)
        bk += self._rank1
        state.c = c_new
        state.b = np.fft.ifft(bk, axis=0, norm="ortho")


class SplitOperatorPropagator:
    """Precomputed step kernels for a fixed basis and time step."""

    def __init__(self, params: ModelParameters, basis: PolaritonBasis,
                 dt: float = None):
        self.params = params
        self.basis = basis
        self.dt = params.dt if dt is None else dt
        self.gamma = params.gamma
        self.omega_sq = params.phonon_omega ** 2
        self.kernel = PolaritonKernel(basis, self.dt)
        shape = (basis.geometry.n_sites, basis.geometry.n_layers)
        self._re = np.empty(shape)
        self._im = np.empty(shape)
        self._cbuf = np.empty(shape, dtype=complex)

    # -- elementary sub-steps -------------------------------------------

    def env_phase(self, state: WaveState, phonons: PhononState,
                  duration: float) -> None:
        """b <- b*exp(-i*gamma*q*duration); photons are phonon-decoupled."""
        if self.gamma == 0.0 or duration == 0.0:
            return
        np.multiply(phonons.q, -1j * self.gamma * duration, out=self._cbuf)
        np.exp(self._cbuf, out=self._cbuf)
        state.b *= self._cbuf

    def kick(self, phonons: PhononState, state: WaveState,
             duration: float) -> None:
        """p += duration * (-omega^2*q - gamma*|b|^2)."""
        np.square(state.b.real, out=self._re)
        np.square(state.b.imag, out=self._im)
        self._re += self._im
        phonons.p -= (duration * self.omega_sq) * phonons.q \
            + (duration * self.gamma) * self._re

    @staticmethod
    def drift(phonons: PhononState, duration: float) -> None:
        phonons.q += duration * phonons.p

    def polariton_step(self, state: WaveState) -> None:
        self.kernel.apply(state)

    # -- full steps ------------------------------------------------------

    def step(self, state: WaveState, phonons: PhononState) -> None:
        """One unfused Strang step (reference path for tests)."""
        half = 0.5 * self.dt
        self.kick(phonons, state, half)
        self.env_phase(state, phonons, half)
        self.drift(phonons, self.dt)
        self.polariton_step(state)
        self.env_phase(state, phonons, half)
        self.kick(phonons, state, half)

    def step_paper_literal(self, state: WaveState,
                           phonons: PhononState) -> None:
        """First-order ordering: full env phase at q(t), polariton step,
        then a velocity-Verlet classical step with the updated density."""
        self.env_phase(state, phonons, self.dt)
        self.polariton_step(state)
        half = 0.5 * self.dt
        self.kick(phonons, state, half)
        self.drift(phonons, self.dt)
        self.kick(phonons, state, half)


def apply_env_phase(state: WaveState, phonons: PhononState, dt: float,
                    gamma: float) -> WaveState:
    """Spec-level op: site-diagonal phonon phase on the exciton sector."""
    if gamma != 0.0 and dt != 0.0:
        state.b *= np.exp(-1j * gamma * dt * phonons.q)
    return state


def apply_polariton_step(state: WaveState, basis: PolaritonBasis,
                         dt: float, dark=None) -> WaveState:
    """Spec-level op: one exact polariton-basis propagation by dt.

    The dark-basis argument is accepted for interface parity but unused:
    the dark subspace is degenerate per k, so projecting out the bright
    component is sufficient (see module docstring).
    """
    PolaritonKernel(basis, dt).apply(state)
    return state


def classical_step(phonons: PhononState, state: WaveState, dt: float,
                   params: ModelParameters) -> PhononState:
    """Velocity Verlet under the frozen quantum density |b|^2."""
    omega_sq = params.phonon_omega ** 2
    dens = np.abs(state.b) ** 2
    force = -omega_sq * phonons.q - params.gamma * dens
    phonons.p += 0.5 * dt * force
    phonons.q += dt * phonons.p
    force = -omega_sq * phonons.q - params.gamma * dens
    phonons.p += 0.5 * dt * force
    return phonons


def total_energy(state: WaveState, phonons: PhononState,
                 basis: PolaritonBasis, params: ModelParameters) -> float:
    """<H_EP> + <H_bX> + classical H_b, in Hartree."""
    kres = band_populations(state, basis, cross_check=False)
    quantum = float(np.sum(basis.e_upper * kres.p_upper_k)
                    + np.sum(basis.e_lower * kres.p_lower_k)
                    + np.sum(basis.epsilon_k * kres.dark_k))
    coupling = params.gamma * float(np.sum(phonons.q * np.abs(state.b) ** 2))
    classical = 0.5 * float(np.sum(phonons.p ** 2)
                            + params.phonon_omega ** 2 * np.sum(phonons.q ** 2))
    return quantum + coupling + classical


# -- trajectory ensembles -------------------------------------------------


@dataclass(frozen=True)
class TrajectoryConfig:
    dt: float
    n_steps: int
    record_stride: int
    kres_steps: tuple          # step indices for k-resolved snapshots
    mode: str                  # "independent" | "synchronized"
    seed: int
    splitting: str = "strang"

    @property
    def record_steps(self):
        steps = set(range(0, self.n_steps + 1, self.record_stride))
        steps.add(self.n_steps)
        steps.update(s for s in self.kres_steps if s <= self.n_steps)
        return tuple(sorted(steps))


def make_trajectory_config(params: ModelParameters,
                           record_interval_fs: float = 5.0,
                           kres_times_fs: Sequence[float] = (0.0, 10.0, 100.0, 300.0),
                           mode: str = "independent") -> TrajectoryConfig:
    """Snapshot schedule: populations every ~record_interval_fs, full
    k-resolved snapshots at the requested times (clipped to the run)."""
    stride = max(1, int(round(record_interval_fs * UNITS.au_time_per_fs
                              / params.dt)))
    kres_steps = tuple(sorted({
        min(params.n_steps, int(round(t * UNITS.au_time_per_fs / params.dt)))
        for t in kres_times_fs}))
    return TrajectoryConfig(dt=params.dt, n_steps=params.n_steps,
                            record_stride=stride, kres_steps=kres_steps,
                            mode=mode, seed=params.seed,
                            splitting=params.splitting)


@dataclass
class TrajectoryResult:
    times_au: np.ndarray     # (T,)
    pop_upper: np.ndarray    # (T,)
    pop_dark: np.ndarray     # (T,)
    pop_lower: np.ndarray    # (T,)
    window_in: np.ndarray    # (T,)
    window_out: np.ndarray   # (T,)
    norms: np.ndarray        # (T,)
    energies: np.ndarray     # (T,)
    kres: dict               # step -> (p_upper_k, p_lower_k)


@dataclass
class EnsembleResult:
    times_au: np.ndarray
    pop_upper: np.ndarray
    pop_dark: np.ndarray
    pop_lower: np.ndarray
    window_in: np.ndarray
    window_out: np.ndarray
    kres: dict
    kbar: float
    window: WindowSpec
    n_trajectories: int
    max_norm_error: float
    max_energy_drift: float

    @property
    def window_in_relative(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.pop_lower > 0.0,
                            self.window_in / self.pop_lower, np.nan)


def run_trajectory(params: ModelParameters, basis: PolaritonBasis,
                   config: TrajectoryConfig, trajectory_index: int = 0,
                   window: WindowSpec = None) -> TrajectoryResult:
    """Single deterministic trajectory with observables at the schedule.

    The recording schedule is part of the trajectory definition: the
    fused inner loop splits phases at recording boundaries, which is
    algebraically exact but not bitwise identical to other schedules.
    """
    if window is None:
        window = excitation_window(basis, params)
    state = prepare_initial_state(basis, params)
    phonons = sample(params, config.mode, config.seed, stream=trajectory_index)
    prop = SplitOperatorPropagator(params, basis, config.dt)
    k_grid = basis.geometry.k_grid
    win_mask = window.mask(k_grid)

    record_steps = config.record_steps
    kres_set = set(config.kres_steps)
    n_rec = len(record_steps)
    times = np.empty(n_rec)
    pops = np.empty((3, n_rec))
    win = np.empty((2, n_rec))
    norms = np.empty(n_rec)
    energies = np.empty(n_rec)
    kres = {}

    def record(slot: int, step: int) -> None:
        times[slot] = step * config.dt
        kr = band_populations(state, basis)
        pops[0, slot] = kr.p_upper
        pops[1, slot] = kr.dark_total
        pops[2, slot] = kr.p_lower
        p_in = float(kr.p_lower_k[win_mask].sum())
        win[0, slot] = p_in
        win[1, slot] = kr.p_lower - p_in
        norms[slot] = state.norm()
        energies[slot] = total_energy(state, phonons, basis, params)
        if step in kres_set:
            kres[step] = (kr.p_upper_k.copy(), kr.p_lower_k.copy())
        if not np.isfinite(norms[slot]):
            raise FloatingPointError(
                f"non-finite state at step {step} "
                f"(trajectory {trajectory_index})")

    record(0, 0)
    slot = 1
    if config.n_steps > 0:
        if config.splitting == "paper_literal":
            for step in range(1, config.n_steps + 1):
                prop.step_paper_literal(state, phonons)
                if step == record_steps[slot]:
                    record(slot, step)
                    slot += 1
        else:
            half = 0.5 * config.dt
            prop.kick(phonons, state, half)
            prop.env_phase(state, phonons, half)
            for step in range(1, config.n_steps + 1):
                prop.drift(phonons, config.dt)
                prop.polariton_step(state)
                if step == record_steps[slot]:
                    prop.env_phase(state, phonons, half)
                    prop.kick(phonons, state, half)
                    record(slot, step)
                    slot += 1
                    if step < config.n_steps:
                        prop.kick(phonons, state, half)
                        prop.env_phase(state, phonons, half)
                else:
                    prop.env_phase(state, phonons, config.dt)
                    prop.kick(phonons, state, config.dt)
    return TrajectoryResult(times, pops[0], pops[1], pops[2], win[0], win[1],
                            norms, energies, kres)


def _ensemble_worker(args):
    params, config, index = args
    basis = build_polariton_basis(params)
    window = excitation_window(basis, params)
    return run_trajectory(params, basis, config, index, window)


def run_ensemble(params: ModelParameters, config: TrajectoryConfig = None,
                 n_workers: int = 1, mode: str = None) -> EnsembleResult:
    """Trajectory-averaged observables, reduced in fixed index order.

    Results are bitwise independent of n_workers: per-trajectory streams
    are keyed by trajectory index and the accumulation below walks the
    results in index order regardless of how they were scheduled.
    """
    if config is None:
        config = make_trajectory_config(params)
    if mode is not None:
        config = TrajectoryConfig(config.dt, config.n_steps,
                                  config.record_stride, config.kres_steps,
                                  mode, config.seed, config.splitting)
    basis = build_polariton_basis(params)
    window = excitation_window(basis, params)
    _, kbar = excitation_weights(basis, params)
    n_traj = params.n_trajectories
    jobs = [(params, config, i) for i in range(n_traj)]

    if n_workers > 1 and n_traj > 1:
        ctx = multiprocessing.get_context("fork")
        chunk = max(1, n_traj // (4 * n_workers))
        with ProcessPoolExecutor(max_workers=n_workers,
                                 mp_context=ctx) as pool:
            results = pool.map(_ensemble_worker, jobs, chunksize=chunk)
            reduced = _reduce(results, n_traj)
    else:
        reduced = _reduce((_ensemble_worker(j) for j in jobs), n_traj)

    times, sums, kres_sums, max_norm_err, max_drift = reduced
    inv = 1.0 / n_traj
    kres = {step: (up * inv, low * inv) for step, (up, low) in kres_sums.items()}
    return EnsembleResult(
        times_au=times,
        pop_upper=sums[0] * inv, pop_dark=sums[1] * inv,
        pop_lower=sums[2] * inv,
        window_in=sums[3] * inv, window_out=sums[4] * inv,
        kres=kres, kbar=kbar, window=window, n_trajectories=n_traj,
        max_norm_error=max_norm_err, max_energy_drift=max_drift)


def _reduce(results, n_traj: int):
    times = None
    sums = None
    kres_sums = {}
    max_norm_err = 0.0
    max_drift = 0.0
    for res in results:
        if times is None:
            times = res.times_au
            sums = np.zeros((5, times.size))
        sums[0] += res.pop_upper
        sums[1] += res.pop_dark
        sums[2] += res.pop_lower
        sums[3] += res.window_in
        sums[4] += res.window_out
        for step, (up, low) in res.kres.items():
            if step not in kres_sums:
                kres_sums[step] = (up.copy(), low.copy())
            else:
                kres_sums[step][0][:] += up
                kres_sums[step][1][:] += low
        max_norm_err = max(max_norm_err, float(np.max(np.abs(res.norms - 1.0))))
        max_drift = max(max_drift,
                        float(np.max(np.abs(res.energies - res.energies[0]))))
    return times, sums, kres_sums, max_norm_err, max_drift
