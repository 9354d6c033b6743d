"""Batch front end: config-driven pipelines that write CSV and JSON files.

Subcommands: ``simulate`` (sequence runs and sweeps), ``prepare``
(holeburning), ``fit`` (decay fits on CSV data), ``phasematch``, and
``validate`` (config lint).  Exit codes: 0 success, 1 fit-quality warning,
2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import itertools
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import (ConfigError, apply_override, build_ensemble_spec,
                     build_relaxation, build_system, build_timeline,
                     config_hash, load_config, validate_config)
from .detection import (DECAY_MODELS, EchoBelowFloor, FitError, LOConfig,
                        amplitude_spectrum, extract_echo, fit_decay,
                        heterodyne, phase_match, spectrum_to_csv,
                        transition_wavelengths)
from .dynamics import IntegrationToleranceError, set_threads
from .ensemble import AreaSpread, EnsembleSpec, run_experiment
from .levels import build_default_system
from .holeburning import PreparationError, off_target_absorption, prepare_feature
from .propagation import Medium, PropagationError, slice_echo_gain
from .sequence import NoRephasingPathway, SequenceError, predict_pathway

EXIT_OK = 0
EXIT_WARN = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _fmt(x) -> str:
    return f"{x:.17g}"


def _write_manifest(outdir: Path, config: dict, extra: dict) -> None:
    manifest = {
        "config": config,
        "config_hash": config_hash(config),
        "seed": config["seed"],
        "version": __version__,
    }
    manifest.update(extra)
    (outdir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True))


def _sweep_points(config: dict):
    sweep = config.get("sweep")
    if not sweep or not sweep.get("axes"):
        yield {}, config
        return
    axes = sweep["axes"]
    names = sorted(axes)
    for combo in itertools.product(*(axes[n] for n in names)):
        point = dict(zip(names, combo))
        cfg = config
        for name, value in point.items():
            cfg = apply_override(cfg, f"{name}={json.dumps(value)}")
        yield point, cfg


def cmd_simulate(config: dict, outdir: Path) -> int:
    outdir.mkdir(parents=True, exist_ok=True)
    if config.get("threads"):
        set_threads(config["threads"])
    rows = []
    axis_names = sorted(config.get("sweep", {}).get("axes", {}) or {})
    for idx, (point, cfg) in enumerate(_sweep_points(config)):
        ls = build_system(cfg)
        tl = build_timeline(cfg, ls)
        spec = build_ensemble_spec(cfg)
        relax = build_relaxation(cfg, ls)
        rec = run_experiment(tl, ls, spec, relax,
                             coupling_rate_hz=cfg["emission"]["coupling_rate_hz"],
                             include_input=cfg["emission"]["include_input"],
                             tol=cfg.get("integration_tol"))
        pred = predict_pathway(tl, ls)
        try:
            meas = extract_echo(rec, pred)
            echo_mag, echo_time = meas.magnitude, meas.time
            echo_phase = float(np.angle(meas.amplitude))
        except EchoBelowFloor as e:
            echo_mag, echo_time, echo_phase = e.value, pred.echo_time, 0.0
        row = {**point, "echo_time_s": echo_time, "echo_amplitude": echo_mag,
               "echo_phase_rad": echo_phase,
               "predicted_echo_time_s": pred.echo_time}
        eff_cfg = cfg.get("efficiency", {})
        if eff_cfg.get("enabled"):
            medium = Medium(alpha_l=eff_cfg.get("alpha_l", 0.6931471805599453),
                            n_slices=eff_cfg.get("n_slices", 64))
            ideal_spec = EnsembleSpec(
                model=spec.model, n_classes=spec.n_classes, sampling=spec.sampling,
                seed=spec.seed, area_spread=AreaSpread(),
                grid_gauss_halfwidth_sigmas=spec.grid_gauss_halfwidth_sigmas)
            from .dynamics import RelaxationSpec
            ideal = run_experiment(tl, ls, ideal_spec, RelaxationSpec.off(),
                                   coupling_rate_hz=cfg["emission"]["coupling_rate_hz"],
                                   include_input=cfg["emission"]["include_input"])
            ideal_mag = extract_echo(ideal, pred).magnitude
            rephased = echo_mag / ideal_mag if ideal_mag > 0 else 0.0
            row["rephased_fraction"] = rephased
            row["efficiency"] = rephased * slice_echo_gain(medium)
        rows.append(row)

        out = cfg["output"]
        tag = f"point{idx:03d}" if axis_names else "run"
        if out["save_traces"]:
            rec.to_csv(outdir / f"{tag}_record.csv")
            rec.save_manifest(outdir / f"{tag}_record.json")
        if out["save_heterodyne"] or out["save_spectra"]:
            lo_cfg = cfg["detection"]["lo"]
            lo = LOConfig(sample_rate_hz=lo_cfg["sample_rate_hz"],
                          base_beat_hz=lo_cfg["base_beat_hz"],
                          noise_sigma=lo_cfg.get("noise_sigma", 0.0),
                          noise_seed=cfg["seed"])
            trace = heterodyne(rec, lo)
            if out["save_heterodyne"]:
                trace.to_csv(outdir / f"{tag}_heterodyne.csv")
            if out["save_spectra"]:
                w0 = rec.windows[0]
                freqs, amp = amplitude_spectrum(trace, (w0.times[0], w0.times[-1]))
                spectrum_to_csv(freqs, amp, outdir / f"{tag}_spectrum_input.csv")
                we = rec.windows[-1]
                freqs, amp = amplitude_spectrum(trace, (we.times[0], we.times[-1]))
                spectrum_to_csv(freqs, amp, outdir / f"{tag}_spectrum_echo.csv")

    cols = axis_names + ["echo_time_s", "echo_amplitude", "echo_phase_rad",
                         "predicted_echo_time_s"]
    if any("efficiency" in r for r in rows):
        cols += ["rephased_fraction", "efficiency"]
    lines = [",".join(cols)]
    for r in rows:
        lines.append(",".join(_fmt(r[c]) if isinstance(r.get(c), float)
                              else str(r.get(c, "")) for c in cols))
    (outdir / "summary.csv").write_text("\n".join(lines) + "\n")
    _write_manifest(outdir, config, {"n_points": len(rows)})
    return EXIT_OK


def cmd_prepare(config: dict, outdir: Path) -> int:
    outdir.mkdir(parents=True, exist_ok=True)
    ls = build_system(config)
    prep_cfg = dict(config.get("preparation", {}))
    res = prepare_feature(ls, **prep_cfg)
    res.grid.to_csv(outdir / "grid.csv")
    medium = res.medium
    (outdir / "medium.json").write_text(json.dumps({
        "alpha_l": medium.alpha_l,
        "profile_detuning_hz": list(medium.profile_detuning_hz),
        "profile": list(medium.profile),
        "n_slices": medium.n_slices,
    }, indent=2))
    _write_manifest(outdir, config, {
        "achieved_alpha_l": res.achieved_alpha_l,
        "feature_fwhm_hz": res.feature_fwhm_hz,
        "repump_halfwidth_hz": res.repump_halfwidth_hz,
        "off_target_absorption": off_target_absorption(
            res.grid, 0.5 * res.feature_fwhm_hz),
    })
    return EXIT_OK


def cmd_fit(csv_path: Path, model: str, out_path: Path | None) -> int:
    data = np.loadtxt(csv_path, delimiter=",", skiprows=_count_header(csv_path))
    if data.ndim != 2 or data.shape[1] < 2:
        raise ConfigError("fit input must be a two-column CSV (delay, amplitude)")
    points = data[:, :2]
    fit = fit_decay(points, model)
    result = fit.to_dict()
    alternatives = {}
    import warnings
    for m in DECAY_MODELS:
        if m == model:
            alternatives[m] = fit.residual_norm
            continue
        try:
            with warnings.catch_warnings():
                # exploratory alternatives may be under-determined
                warnings.simplefilter("ignore")
                alternatives[m] = fit_decay(points, m).residual_norm
        except FitError:
            alternatives[m] = None
    best = min(v for v in alternatives.values() if v is not None)
    result["residual_by_model"] = alternatives
    misfit = fit.residual_norm > 10.0 * best and best > 0
    result["misfit_warning"] = bool(misfit)
    text = json.dumps(result, indent=2, sort_keys=True)
    if out_path:
        out_path.write_text(text)
        fit.curve_to_csv(out_path.with_suffix(".csv"), points[:, 0])
    else:
        print(text)
    return EXIT_WARN if misfit else EXIT_OK


def _count_header(path) -> int:
    first = Path(path).read_text().splitlines()[0]
    try:
        float(first.split(",")[0])
        return 0
    except ValueError:
        return 1


def cmd_phasematch(args) -> int:
    spec = json.loads(Path(args.config).read_text()) if args.config else {}
    ls = build_default_system()
    geometry = spec.get("geometry", "4le")
    length = spec.get("length_m", 20e-3)
    base_wl = spec.get("base_wavelength_m", 605.977e-9)
    wl = transition_wavelengths(ls, [(2, 5), (3, 5), (2, 4), (3, 4)], base_wl)
    if geometry == "4le":
        res = phase_match(spec.get("k_in", [0, 0, 1]),
                          spec.get("k_pi1", [0, 0, 1]),
                          spec.get("k_pi2", [0, 0, 1]),
                          wavelengths={"input": wl[(2, 5)], "pi1": wl[(3, 5)],
                                       "pi2": wl[(2, 4)], "echo": wl[(3, 4)]},
                          length_m=length)
    else:
        res = phase_match(spec.get("k_in", [0, 0, 1]), k_pi=spec.get("k_pi", [0, 0, 1]),
                          wavelengths={"input": wl[(2, 5)], "pi": wl[(2, 5)],
                                       "echo": wl[(2, 5)]},
                          length_m=length)
    text = json.dumps(res.to_dict(), indent=2, sort_keys=True)
    if args.output:
        Path(args.output).write_text(text)
    else:
        print(text)
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="echosim",
                                     description="four-level photon echo simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("simulate", "prepare", "validate"):
        p = sub.add_parser(name)
        p.add_argument("-c", "--config", required=True)
        if name != "validate":
            p.add_argument("-o", "--output-dir", required=True)
        p.add_argument("--set", action="append", default=[], dest="overrides",
                       metavar="KEY=VALUE", help="dotted-path config override")
        p.add_argument("--seed", type=int, default=None, help="override the seed")

    p = sub.add_parser("fit")
    p.add_argument("--csv", required=True)
    p.add_argument("--model", default="exponential", choices=DECAY_MODELS)
    p.add_argument("-o", "--output", default=None)

    p = sub.add_parser("phasematch")
    p.add_argument("-c", "--config", default=None,
                   help="JSON with geometry, k vectors, length_m")
    p.add_argument("-o", "--output", default=None)

    args = parser.parse_args(argv)
    try:
        if args.command in ("simulate", "prepare", "validate"):
            overrides = list(args.overrides)
            if args.seed is not None:
                overrides.append(f"seed={args.seed}")
            config = load_config(args.config, overrides)
            if args.command == "validate":
                print("config OK")
                return EXIT_OK
            outdir = Path(args.output_dir)
            if args.command == "simulate":
                return cmd_simulate(config, outdir)
            return cmd_prepare(config, outdir)
        if args.command == "fit":
            return cmd_fit(Path(args.csv), args.model,
                           Path(args.output) if args.output else None)
        if args.command == "phasematch":
            return cmd_phasematch(args)
    except (ConfigError, SequenceError, FileNotFoundError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegrationToleranceError, NoRephasingPathway, EchoBelowFloor,
            PreparationError, PropagationError, FitError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
