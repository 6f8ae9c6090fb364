"""Parameter parsing, validation, and unit conversion.

Everything downstream works in Hartree atomic units (hbar = 1, m = 1).
This module is the only place unit conversion happens: configs carry an
explicit unit token per physical key and are converted on parse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace, fields


class ConfigError(ValueError):
    """Aggregated configuration/validation failure."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class UnitConstants:
    """CODATA-2018 conversion factors into Hartree atomic units."""

    hartree_per_ev: float = 1.0 / 27.211386245988
    hartree_per_wavenumber: float = 1.0 / 219474.6313632
    bohr_per_angstrom: float = 1.0 / 0.529177210903
    speed_of_light_au: float = 137.035999084
    kelvin_to_hartree: float = 3.1668115634556e-6  # k_B in Hartree/K
    au_time_per_fs: float = 41.341373335183


UNITS = UnitConstants()

# unit token -> factor into a.u., grouped by dimension
_ENERGY_UNITS = {
    "eV": UNITS.hartree_per_ev,
    "cm-1": UNITS.hartree_per_wavenumber,
    "au": 1.0,
}
_LENGTH_UNITS = {"angstrom": UNITS.bohr_per_angstrom, "au": 1.0}
_TIME_UNITS = {"fs": UNITS.au_time_per_fs, "au": 1.0}
_TEMPERATURE_UNITS = {"K": 1.0}  # kept in kelvin; beta built on demand


@dataclass(frozen=True)
class ModelParameters:
    """All model constants and run controls, physical fields in a.u.

    ``temperature`` stays in kelvin (converted through ``beta``); counts and
    flags are dimensionless.
    """

    epsilon0: float
    tau: float
    alpha: float
    alpha_y: float
    cavity_length: float
    omega0_coupling: float
    phonon_omega: float
    gamma: float
    refractive_index: float
    temperature: float
    n_sites: int
    n_layers: int
    dt: float
    n_steps: int
    n_trajectories: int
    seed: int
    excitation_center_energy: float
    excitation_half_width: float
    k_window_halfwidth_units: int
    stack_center_offset: float = 0.0
    sampling_variance: str = "classical"  # or "wigner"
    splitting: str = "strang"  # or "paper_literal"
    excitation_envelope: str = "gaussian"  # or "uniform"
    excitation_branch: str = "upper"  # or "lower"

    @property
    def beta(self) -> float:
        """Inverse temperature 1/(k_B T) in 1/Hartree (inf at T = 0)."""
        if self.temperature == 0.0:
            return math.inf
        return 1.0 / (UNITS.kelvin_to_hartree * self.temperature)

    def validate(self) -> None:
        problems = []
        if self.n_sites < 4 or self.n_sites % 2 != 0:
            problems.append(f"n_sites must be even and >= 4, got {self.n_sites}")
        if self.n_layers < 1:
            problems.append(f"n_layers must be >= 1, got {self.n_layers}")
        if (self.n_layers - 1) * self.alpha_y >= self.cavity_length:
            problems.append(
                "layer stack does not fit in the cavity: "
                f"(n_layers-1)*alpha_y = {(self.n_layers - 1) * self.alpha_y:g} au "
                f">= cavity_length = {self.cavity_length:g} au"
            )
        if self.dt <= 0:
            problems.append(f"dt must be > 0, got {self.dt}")
        if self.tau < 0:
            problems.append(f"tau must be >= 0, got {self.tau}")
        if self.phonon_omega <= 0:
            problems.append(f"phonon_omega must be > 0, got {self.phonon_omega}")
        if self.gamma < 0:
            problems.append(f"gamma must be >= 0, got {self.gamma}")
        if self.temperature < 0:
            problems.append(f"temperature must be >= 0, got {self.temperature}")
        for name in ("epsilon0", "alpha", "alpha_y", "cavity_length",
                     "omega0_coupling", "refractive_index"):
            if getattr(self, name) <= 0:
                problems.append(f"{name} must be > 0, got {getattr(self, name)}")
        if self.n_steps < 0:
            problems.append(f"n_steps must be >= 0, got {self.n_steps}")
        if self.n_trajectories < 1:
            problems.append(f"n_trajectories must be >= 1, got {self.n_trajectories}")
        if self.excitation_half_width <= 0:
            problems.append("excitation_half_width must be > 0")
        if self.k_window_halfwidth_units < 1:
            problems.append("k_window_halfwidth_units must be >= 1")
        if self.sampling_variance not in ("classical", "wigner"):
            problems.append(f"unknown sampling_variance '{self.sampling_variance}'")
        if self.splitting not in ("strang", "paper_literal"):
            problems.append(f"unknown splitting '{self.splitting}'")
        if self.excitation_envelope not in ("gaussian", "uniform"):
            problems.append(f"unknown excitation_envelope '{self.excitation_envelope}'")
        if self.excitation_branch not in ("upper", "lower"):
            problems.append(f"unknown excitation_branch '{self.excitation_branch}'")
        if problems:
            raise ConfigError(problems)

    def with_overrides(self, **kwargs) -> "ModelParameters":
        out = replace(self, **kwargs)
        out.validate()
        return out


def paper_defaults() -> ModelParameters:
    """Published parameter set plus documented artifact defaults.

    Physics: eps0 = 3.2 eV, tau = 400 cm-1, alpha = 12 A, alpha_y = 40 A,
    L = 1000 A, Omega0 = 241.7 meV, omega = 720 cm-1, gamma = 3.76e-4 a.u.
    Artifact defaults: eta = 2, T = 300 K, N = 256, N_L = 1, dt = 10 a.u.,
    100 trajectories, 0.3 ps run, excitation 3.5 +- 0.2 eV, k-window +-5
    grid units.
    """
    dt = 10.0
    run_time_au = 0.3e3 * UNITS.au_time_per_fs  # 0.3 ps
    p = ModelParameters(
        epsilon0=3.2 * UNITS.hartree_per_ev,
        tau=400.0 * UNITS.hartree_per_wavenumber,
        alpha=12.0 * UNITS.bohr_per_angstrom,
        alpha_y=40.0 * UNITS.bohr_per_angstrom,
        cavity_length=1000.0 * UNITS.bohr_per_angstrom,
        omega0_coupling=0.2417 * UNITS.hartree_per_ev,
        phonon_omega=720.0 * UNITS.hartree_per_wavenumber,
        gamma=3.76e-4,
        refractive_index=2.0,
        temperature=300.0,
        n_sites=256,
        n_layers=1,
        dt=dt,
        n_steps=int(round(run_time_au / dt)),
        n_trajectories=100,
        seed=2024,
        excitation_center_energy=3.5 * UNITS.hartree_per_ev,
        excitation_half_width=0.2 * UNITS.hartree_per_ev,
        k_window_halfwidth_units=5,
    )
    p.validate()
    return p


# key -> (unit table or None, python type); None table = dimensionless
_KEY_SPEC = {
    "epsilon0": (_ENERGY_UNITS, float),
    "tau": (_ENERGY_UNITS, float),
    "alpha": (_LENGTH_UNITS, float),
    "alpha_y": (_LENGTH_UNITS, float),
    "cavity_length": (_LENGTH_UNITS, float),
    "omega0_coupling": (_ENERGY_UNITS, float),
    "phonon_omega": (_ENERGY_UNITS, float),
    "gamma": ({"au": 1.0}, float),
    "refractive_index": (None, float),
    "temperature": (_TEMPERATURE_UNITS, float),
    "n_sites": (None, int),
    "n_layers": (None, int),
    "dt": (_TIME_UNITS, float),
    "n_steps": (None, int),
    "n_trajectories": (None, int),
    "seed": (None, int),
    "excitation_center_energy": (_ENERGY_UNITS, float),
    "excitation_half_width": (_ENERGY_UNITS, float),
    "k_window_halfwidth_units": (None, int),
    "stack_center_offset": (_LENGTH_UNITS, float),
    "sampling_variance": (None, str),
    "splitting": (None, str),
    "excitation_envelope": (None, str),
    "excitation_branch": (None, str),
}

# keys that must appear in a config document; the rest fall back to
# paper_defaults() values
REQUIRED_KEYS = (
    "epsilon0", "tau", "alpha", "alpha_y", "cavity_length",
    "omega0_coupling", "phonon_omega", "gamma",
)


def _parse_entry(key: str, raw: str, problems: list):
    table, pytype = _KEY_SPEC[key]
    tokens = raw.split()
    if pytype is str:
        if len(tokens) != 1:
            problems.append(f"{key}: expected a bare token, got '{raw}'")
            return None
        return tokens[0]
    if table is None:
        if len(tokens) != 1:
            problems.append(f"{key}: dimensionless key takes no unit, got '{raw}'")
            return None
        try:
            return pytype(float(tokens[0])) if pytype is int else pytype(tokens[0])
        except ValueError:
            problems.append(f"{key}: cannot parse number '{tokens[0]}'")
            return None
    if len(tokens) != 2:
        problems.append(f"{key}: expected '<value> <unit>', got '{raw}'")
        return None
    value_s, unit = tokens
    try:
        value = float(value_s)
    except ValueError:
        problems.append(f"{key}: cannot parse number '{value_s}'")
        return None
    if unit not in table:
        problems.append(
            f"{key}: unsupported unit '{unit}' (allowed: {', '.join(sorted(table))})"
        )
        return None
    return value * table[unit]


def parse_config(text: str) -> ModelParameters:
    """Parse a flat 'key = value [unit]' document into ModelParameters.

    Lines starting with '#' and blank lines are skipped.  All validation
    problems are aggregated into a single ConfigError.
    """
    problems = []
    entries = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            problems.append(f"line {lineno}: expected 'key = value', got '{stripped}'")
            continue
        key, _, raw = stripped.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in _KEY_SPEC:
            problems.append(f"line {lineno}: unknown key '{key}'")
            continue
        if key in entries:
            problems.append(f"line {lineno}: duplicate key '{key}'")
            continue
        value = _parse_entry(key, raw, problems)
        if value is not None:
            entries[key] = value

    for key in REQUIRED_KEYS:
        if key not in entries:
            problems.append(f"missing required key '{key}'")
    if problems:
        raise ConfigError(problems)

    base = paper_defaults()
    merged = {f.name: getattr(base, f.name) for f in fields(ModelParameters)}
    merged.update(entries)
    params = ModelParameters(**merged)
    params.validate()
    return params


def apply_override(params: ModelParameters, key: str, raw: str) -> ModelParameters:
    """Apply one CLI '--set key=value[ unit]' override on top of params."""
    if key not in _KEY_SPEC:
        raise ConfigError([f"unknown key '{key}'"])
    problems = []
    value = _parse_entry(key, raw, problems)
    if problems:
        raise ConfigError(problems)
    return params.with_overrides(**{key: value})


def params_as_dict(params: ModelParameters) -> dict:
    """Resolved parameter dict (a.u. values) for meta.json dumps."""
    return {f.name: getattr(params, f.name) for f in fields(ModelParameters)}
