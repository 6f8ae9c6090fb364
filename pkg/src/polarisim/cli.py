"""Experiment driver: the paper-style numerical experiments as subcommands.

    polarisim <subcommand> --config <path> [--set k=v]... [--out dir]
              [--threads n]

Subcommands: relax, vertical, frohlich-scan, rates-scan, sync-test,
verify.  Output conventions: times in fs, energies in eV, momenta in
grid units 2*pi/(N*alpha); CSV floats carry 17 significant digits and a
fixed column order so identical runs produce identical bytes; every
output directory gets a meta.json with the resolved configuration.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .units import (UNITS, ModelParameters, ConfigError, parse_config,
                    paper_defaults, apply_override, params_as_dict)
from .model import build_polariton_basis, build_geometry, coupling_weights, \
    layer_factor, build_dark_basis
from .phonons import sample_thermal, PhononState
from .propagator import (run_ensemble, make_trajectory_config,
                         EnsembleResult, prepare_initial_state,
                         PolaritonKernel, apply_env_phase, total_energy,
                         SplitOperatorPropagator)
from .observables import band_populations
from .analysis import (fit_exponential, fit_rate_matrix, scaling_laws,
                       vertical_transfer_matrices, default_k_subgrid)
from .oracle import build_dense, dense_propagate_vector, state_to_vector

DEFAULT_SCAN_LAYERS = (1, 2, 3, 5, 7, 10, 15)
PS_PER_AU = 1.0 / (1000.0 * UNITS.au_time_per_fs)


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None or (isinstance(x, float) and not np.isfinite(x)):
        return "nan"
    return f"{x:.17g}"


def write_csv(path: str, header, rows) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def write_meta(out_dir: str, params: ModelParameters, extra: dict) -> None:
    meta = {
        "code_version": __version__,
        "parameters_au": params_as_dict(params),
        "seed": params.seed,
    }
    meta.update(extra)
    with open(os.path.join(out_dir, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")


def _load_params(args) -> ModelParameters:
    if args.config:
        with open(args.config) as fh:
            params = parse_config(fh.read())
    else:
        params = paper_defaults()
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError([f"--set expects key=value, got '{item}'"])
        key, _, raw = item.partition("=")
        params = apply_override(params, key.strip(), raw.strip())
    return params


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("POLARISIM_THREADS")
    if env:
        return max(1, int(env))
    return min(os.cpu_count() or 1, 8)


def _write_relax_outputs(out_dir: str, params: ModelParameters,
                         result: EnsembleResult, extra_meta=None) -> None:
    os.makedirs(out_dir, exist_ok=True)
    t_fs = result.times_au / UNITS.au_time_per_fs
    rel = result.window_in_relative
    rows = []
    for j in range(t_fs.size):
        denom = result.pop_lower[j]
        rows.append((t_fs[j], result.pop_upper[j], result.pop_dark[j],
                     result.pop_lower[j], result.window_in[j],
                     result.window_out[j],
                     rel[j] if denom > 0 else float("nan")))
    write_csv(os.path.join(out_dir, "populations.csv"),
              ["t_fs", "P_up", "P_dark", "P_low", "P_in", "P_out",
               "P_in_rel"], rows)

    basis = build_polariton_basis(params)
    k_index = basis.geometry.k_index
    order = np.argsort(k_index)
    e_up = basis.e_upper / UNITS.hartree_per_ev
    e_low = basis.e_lower / UNITS.hartree_per_ev
    for step, (p_up_k, p_low_k) in sorted(result.kres.items()):
        fs = step * params.dt / UNITS.au_time_per_fs
        rows = [(int(k_index[i]), e_up[i], e_low[i], p_up_k[i], p_low_k[i])
                for i in order]
        write_csv(os.path.join(out_dir, f"kres_t{fs:g}fs.csv"),
                  ["k", "E_up_eV", "E_low_eV", "P_up_k", "P_low_k"], rows)

    meta = {
        "experiment": "relax",
        "kbar_grid_units": result.kbar / basis.geometry.k_unit,
        "window_halfwidth_grid_units": params.k_window_halfwidth_units,
        "n_trajectories": result.n_trajectories,
        "max_norm_error": result.max_norm_error,
        "max_energy_drift_hartree": result.max_energy_drift,
    }
    meta.update(extra_meta or {})
    write_meta(out_dir, params, meta)


def cmd_relax(args) -> int:
    params = _load_params(args)
    kres = tuple(float(t) for t in (args.snapshots or "0,10,100,300").split(","))
    config = make_trajectory_config(params, kres_times_fs=kres,
                                    mode=args.mode)
    result = run_ensemble(params, config, n_workers=_threads(args))
    _write_relax_outputs(args.out, params, result,
                         {"sampling_mode": args.mode})
    print(f"relax: wrote {args.out} (P_low end = {result.pop_lower[-1]:.4f})")
    return 0


def _fit_kfs(params: ModelParameters, result: EnsembleResult):
    """Exponential fit of the relative in-window series, NaN-safe."""
    rel = result.window_in_relative
    good = np.isfinite(rel)
    t_ps = result.times_au[good] * PS_PER_AU
    return fit_exponential(t_ps, rel[good])


def cmd_frohlich_scan(args) -> int:
    params = _load_params(args)
    layers = _parse_layers(args.layers)
    os.makedirs(args.out, exist_ok=True)
    fits = {}
    for nl in layers:
        p_nl = params.with_overrides(n_layers=nl)
        config = make_trajectory_config(p_nl, kres_times_fs=())
        result = run_ensemble(p_nl, config, n_workers=_threads(args))
        sub = os.path.join(args.out, f"layers_{nl:02d}")
        _write_relax_outputs(sub, p_nl, result, {"experiment": "frohlich-scan"})
        fits[nl] = _fit_kfs(p_nl, result)
        print(f"frohlich-scan NL={nl}: K_FS = {fits[nl].rate:.4f} 1/ps")
    a_fs = fits[layers[0]].rate if layers[0] == 1 else None
    rows = []
    for nl in layers:
        f_nl = layer_factor(coupling_weights(build_geometry(
            params.with_overrides(n_layers=nl))))
        theory = a_fs * f_nl if a_fs is not None else float("nan")
        rows.append((nl, fits[nl].rate, theory, f_nl))
    write_csv(os.path.join(args.out, "kfs_vs_layers.csv"),
              ["N_L", "K_FS_fit_per_ps", "K_FS_theory_per_ps",
               "layer_factor"], rows)
    write_meta(args.out, params, {"experiment": "frohlich-scan",
                                  "layers": list(layers)})
    print(f"frohlich-scan: wrote {args.out}/kfs_vs_layers.csv")
    return 0


def cmd_rates_scan(args) -> int:
    params = _load_params(args)
    layers = _parse_layers(args.layers)
    os.makedirs(args.out, exist_ok=True)
    fits = {}
    for nl in layers:
        p_nl = params.with_overrides(n_layers=nl)
        config = make_trajectory_config(p_nl, kres_times_fs=())
        result = run_ensemble(p_nl, config, n_workers=_threads(args))
        sub = os.path.join(args.out, f"layers_{nl:02d}")
        _write_relax_outputs(sub, p_nl, result, {"experiment": "rates-scan"})
        t_ps = result.times_au * PS_PER_AU
        pops = np.vstack([result.pop_upper, result.pop_dark,
                          result.pop_lower])
        fits[nl] = fit_rate_matrix(t_ps, pops)
        r = fits[nl].rates
        print(f"rates-scan NL={nl}: k_UL={r.k_ul:.4f} k_UD={r.k_ud:.4f} "
              f"k_DL={r.k_dl:.4f} 1/ps  (residual {fits[nl].residual:.3g})")

    anchors = _rate_scan_anchors(params, layers, fits)
    rows = []
    for nl in layers:
        r = fits[nl].rates
        theory = scaling_laws(nl, params, a_fs=0.0, a_ul=anchors["a_ul"],
                              a_ud=anchors["a_ud"], a_dl=anchors["a_dl"])
        k_ud = r.k_ud if nl > 1 else float("nan")
        k_dl = r.k_dl if nl > 1 else float("nan")
        rows.append((nl, r.k_ul, k_ud, k_dl, theory["k_ul"], theory["k_ud"],
                     theory["k_dl"], theory["layer_factor"]))
    write_csv(os.path.join(args.out, "rates_vs_layers.csv"),
              ["N_L", "k_UL_per_ps", "k_UD_per_ps", "k_DL_per_ps",
               "k_UL_theory", "k_UD_theory", "k_DL_theory", "layer_factor"],
              rows)
    write_meta(args.out, params, {"experiment": "rates-scan",
                                  "layers": list(layers),
                                  "anchors_per_ps": anchors})
    print(f"rates-scan: wrote {args.out}/rates_vs_layers.csv")
    return 0


def _rate_scan_anchors(params, layers, fits) -> dict:
    """Single-layer anchors where defined; scale fits elsewhere.

    A_UL anchors at the fitted single-layer k_UL.  k_UD(1) and k_DL(1)
    do not exist (no dark states), so A_UD is fit freely and A_DL is
    anchored at the smallest multilayer point.
    """
    a_ul = fits[layers[0]].rates.k_ul if layers[0] == 1 else \
        fits[layers[0]].rates.k_ul / layer_factor(coupling_weights(
            build_geometry(params.with_overrides(n_layers=layers[0]))))
    multi = [nl for nl in layers if nl > 1]
    a_ud = 0.0
    a_dl = 0.0
    if multi:
        shapes = []
        values = []
        for nl in multi:
            t = scaling_laws(nl, params, 0.0, 0.0, 1.0, 0.0)
            shapes.append(t["k_ud"])
            values.append(fits[nl].rates.k_ud)
        shapes = np.asarray(shapes)
        values = np.asarray(values)
        denom = float(shapes @ shapes)
        a_ud = float(shapes @ values) / denom if denom > 0 else 0.0
        nl0 = multi[0]
        f0 = scaling_laws(nl0, params, 0.0, 0.0, 0.0, 1.0)["k_dl"]
        a_dl = fits[nl0].rates.k_dl / f0 if f0 > 0 else 0.0
    return {"a_ul": float(a_ul), "a_ud": a_ud, "a_dl": a_dl}


def cmd_sync_test(args) -> int:
    params = _load_params(args)
    if params.n_layers < 2:
        print("sync-test requires n_layers >= 2", file=sys.stderr)
        return 2
    os.makedirs(args.out, exist_ok=True)
    summary = {}
    for mode in ("independent", "synchronized"):
        config = make_trajectory_config(params, kres_times_fs=(), mode=mode)
        result = run_ensemble(params, config, n_workers=_threads(args))
        sub = os.path.join(args.out, mode)
        _write_relax_outputs(sub, params, result,
                             {"experiment": "sync-test",
                              "sampling_mode": mode})
        fit = _fit_kfs(params, result)
        summary[mode] = {"k_fs_per_ps": fit.rate,
                         "amplitude": fit.amplitude,
                         "offset": fit.offset}
        print(f"sync-test {mode}: K_FS = {fit.rate:.4f} 1/ps")
    with open(os.path.join(args.out, "sync_summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_meta(args.out, params, {"experiment": "sync-test"})
    return 0


def cmd_vertical(args) -> int:
    params = _load_params(args)
    basis = build_polariton_basis(params)
    subgrid = default_k_subgrid(basis, count=args.subgrid)
    ensemble = [sample_thermal(params, params.seed, stream=i)
                for i in range(params.n_trajectories)]
    mats = vertical_transfer_matrices(params, basis, ensemble,
                                      delta_t=args.delta_t,
                                      k_subgrid=subgrid)
    os.makedirs(args.out, exist_ok=True)
    header = ["k"] + [str(int(k)) for k in mats.k_subgrid]
    for name in ("order1", "order2", "full"):
        matrix = getattr(mats, name)
        rows = [(int(mats.k_subgrid[i]), *matrix[i])
                for i in range(len(mats.k_subgrid))]
        write_csv(os.path.join(args.out, f"{name}.csv"), header, rows)
    max_off, mean_diag, ratio = mats.diagonal_dominance()
    norm1 = float(np.linalg.norm(mats.order1))
    norm2 = float(np.linalg.norm(mats.order2))
    summary = {
        "delta_t_au": args.delta_t,
        "n_ensemble": params.n_trajectories,
        "max_offdiagonal": max_off,
        "mean_diagonal": mean_diag,
        "offdiag_to_diag_ratio": ratio,
        "order1_frobenius_norm": norm1,
        "order2_frobenius_norm": norm2,
        "order1_to_order2_norm_ratio": norm1 / norm2 if norm2 > 0 else None,
    }
    with open(os.path.join(args.out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_meta(args.out, params, {"experiment": "vertical",
                                  "delta_t_au": args.delta_t})
    print(f"vertical: offdiag/diag = {ratio:.4f}, "
          f"|order1|/|order2| = {summary['order1_to_order2_norm_ratio']:.4f}")
    return 0


def cmd_verify(args) -> int:
    params = _load_params(args)
    checks = []

    def check(name, value, bound):
        ok = value < bound
        checks.append((name, value, bound, ok))
        return ok

    # split-operator vs dense exponential, phonons frozen at rest
    p8 = params.with_overrides(n_sites=8, n_layers=2, temperature=0.0,
                               n_steps=100, dt=1.0)
    basis = build_polariton_basis(p8)
    center = float(basis.e_upper[basis.geometry.k_index > 0].min())
    p8 = p8.with_overrides(excitation_center_energy=center)
    state = prepare_initial_state(basis, p8)
    frozen = PhononState(np.zeros((8, 2)), np.zeros((8, 2)))
    ham = build_dense(p8, basis.geometry, frozen)
    vec = state_to_vector(state.c, state.b)
    kernel = PolaritonKernel(basis, 1.0)
    for _ in range(100):
        vec = dense_propagate_vector(vec, ham, 1.0)
        apply_env_phase(state, frozen, 1.0, p8.gamma)
        kernel.apply(state)
    err = float(np.max(np.abs(state_to_vector(state.c, state.b) - vec)))
    check("split vs dense (frozen phonons, 100 steps)", err, 1e-8)

    # gamma = 0 spectrum vs analytic eigenstructure
    worst = 0.0
    for nl in (1, 2, 3):
        p_nl = params.with_overrides(n_sites=8, n_layers=nl, gamma=0.0)
        b_nl = build_polariton_basis(p_nl)
        ham = build_dense(p_nl, b_nl.geometry,
                          PhononState(np.zeros((8, nl)), np.zeros((8, nl))))
        vals = np.linalg.eigvalsh(ham.matrix)
        expected = np.sort(np.concatenate(
            [b_nl.e_upper, b_nl.e_lower] + [b_nl.epsilon_k] * (nl - 1)))
        worst = max(worst, float(np.max(np.abs(np.sort(vals) - expected))))
    check("gamma=0 dense spectrum vs basis", worst, 1e-10)

    # norm conservation and completeness over a short thermal run
    p_run = params.with_overrides(n_sites=64, n_layers=2, n_steps=1000)
    b_run = build_polariton_basis(p_run)
    center = float(b_run.e_upper[b_run.geometry.k_index > 0].min())
    p_run = p_run.with_overrides(excitation_center_energy=center,
                                 excitation_half_width=max(
                                     p_run.excitation_half_width,
                                     0.02 * center))
    st = prepare_initial_state(b_run, p_run)
    ph = sample_thermal(p_run, p_run.seed)
    prop = SplitOperatorPropagator(p_run, b_run)
    e0 = total_energy(st, ph, b_run, p_run)
    worst_comp = 0.0
    for i in range(1000):
        prop.step(st, ph)
        if i % 100 == 99:
            kr = band_populations(st, b_run)
            worst_comp = max(worst_comp, abs(
                kr.p_upper + kr.p_lower + kr.dark_total - 1.0))
    check("norm drift per 1000 steps", abs(st.norm() - 1.0), 1e-10)
    check("population completeness", worst_comp, 1e-8)
    check("energy drift (1000 steps)",
          abs(total_energy(st, ph, b_run, p_run) - e0), 1e-4)

    # thermal moments
    p_mom = params.with_overrides(n_sites=64, n_layers=4)
    draws = [sample_thermal(p_mom, p_mom.seed, stream=i) for i in range(64)]
    q = np.concatenate([d.q.ravel() for d in draws])
    var_target = UNITS.kelvin_to_hartree * p_mom.temperature \
        / p_mom.phonon_omega ** 2
    check("thermal <q^2> relative error",
          abs(q.var() / var_target - 1.0), 0.05)

    width = max(len(c[0]) for c in checks)
    failed = 0
    for name, value, bound, ok in checks:
        status = "PASS" if ok else "FAIL"
        print(f"{status}  {name:<{width}}  {value:.3e} < {bound:.0e}")
        failed += 0 if ok else 1
    return 1 if failed else 0


def _parse_layers(raw: str):
    layers = tuple(int(x) for x in raw.split(","))
    if not layers or any(nl < 1 for nl in layers):
        raise ConfigError([f"bad layer list '{raw}'"])
    return layers


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polarisim",
        description="polariton relaxation simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp, needs_out=True):
        sp.add_argument("--config", help="config file path")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key (repeatable)")
        sp.add_argument("--threads", type=int, default=None)
        if needs_out:
            sp.add_argument("--out", required=True, help="output directory")

    sp = sub.add_parser("relax", help="band-resolved relaxation run")
    common(sp)
    sp.add_argument("--mode", choices=("independent", "synchronized"),
                    default="independent")
    sp.add_argument("--snapshots", default=None,
                    help="comma-separated k-resolved snapshot times in fs")
    sp.set_defaults(func=cmd_relax)

    sp = sub.add_parser("vertical", help="transfer-matrix analyzer")
    common(sp)
    sp.add_argument("--delta-t", type=float, default=50.0,
                    dest="delta_t", help="impulse duration in a.u.")
    sp.add_argument("--subgrid", type=int, default=64)
    sp.set_defaults(func=cmd_vertical)

    sp = sub.add_parser("frohlich-scan", help="K_FS vs layer count")
    common(sp)
    sp.add_argument("--layers", default=",".join(map(str, DEFAULT_SCAN_LAYERS)))
    sp.set_defaults(func=cmd_frohlich_scan)

    sp = sub.add_parser("rates-scan", help="kinetic rates vs layer count")
    common(sp)
    sp.add_argument("--layers", default=",".join(map(str, DEFAULT_SCAN_LAYERS)))
    sp.set_defaults(func=cmd_rates_scan)

    sp = sub.add_parser("sync-test", help="independent vs synchronized sampling")
    common(sp)
    sp.set_defaults(func=cmd_sync_test)

    sp = sub.add_parser("verify", help="oracle and invariant checks")
    common(sp, needs_out=False)
    sp.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, FloatingPointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
