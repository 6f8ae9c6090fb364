"""Split-operator Ehrenfest simulator for polariton relaxation in
multilayer cavity materials."""

__version__ = "0.1.0"

from .units import (UnitConstants, UNITS, ModelParameters, ConfigError,
                    parse_config, paper_defaults)
from .model import (Geometry, CouplingWeights, PolaritonBasis, DarkBasis,
                    build_geometry, coupling_weights, build_polariton_basis,
                    build_dark_basis, exciton_band, photon_dispersion,
                    coupling_strength, mixing_angle, layer_factor,
                    layer_factor_for, effective_temperature,
                    vertical_criterion_ratio)
from .phonons import (PhononState, sample_thermal, sample_synchronized,
                      layer_averaged_fluctuation, make_rng)
from .propagator import (WaveState, SplitOperatorPropagator, PolaritonKernel,
                         TrajectoryConfig, EnsembleResult,
                         prepare_initial_state, excitation_weights,
                         excitation_window, apply_env_phase,
                         apply_polariton_step, classical_step, total_energy,
                         make_trajectory_config, run_trajectory, run_ensemble)
from .observables import (KResolvedPopulations, WindowSpec,
                          band_populations, window_populations)
from .analysis import (RateMatrix, RateFit, ExponentialFit, TransferMatrices,
                       predict_populations, fit_rate_matrix, fit_exponential,
                       scaling_laws, vertical_transfer_matrices,
                       phonon_disorder_factor, default_k_subgrid)
from .oracle import DenseHamiltonian, build_dense, dense_propagate_vector
