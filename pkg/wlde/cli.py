"""Command-line entry point: one subcommand per analysis, plus figure reproductions."""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import ValidationError

from . import stability as stab
from .artifacts import ArtifactWriter
from .config import CONFIG_DIR, LOG_LEVEL, OUTPUT_DIR, THREADS
from .errors import DomainError, WLDEError
from .experiment import ExperimentConfig, parse_config
from .growth import from_allee
from .lattice import LatticeConfig, simulate, trajectory_to_bytes, trajectory_to_csv
from .optimize import (
    Criterion,
    acm_optimize,
    compare_table,
    critical_amplitude_by_profile,
    format_table,
    mcm_optimize,
)
from .outbreak import outbreak_curve
from .waves import (
    SweepAxis,
    WaveRegime,
    asymptotic_speed,
    front_position,
    front_track,
    release_sweep,
    run_wave,
    sweep,
)

logger = logging.getLogger(__name__)

Handler = Callable[[ExperimentConfig, ArtifactWriter, int], None]


def _simulate_config(config: ExperimentConfig, generations: int, profile=None, stride: Optional[int] = None):
    return simulate(
        config.lattice,
        profile or config.profile,
        config.params(),
        config.dispersal_setting(),
        config.discrete_kernel(),
        generations,
        stride=stride or config.simulate.stride,
        memory_budget=config.simulate.memory_budget,
        wrap_guard=config.simulate.wrap_guard,
    )


def cmd_simulate(config: ExperimentConfig, writer: ArtifactWriter, threads: int) -> None:
    trajectory = _simulate_config(config, config.horizon)
    writer.write_text("trajectory.csv", trajectory_to_csv(trajectory, writer.config_hash))
    writer.write_bytes("trajectory.bin", trajectory_to_bytes(trajectory))
    final = trajectory.final.values
    summary = {
        "generations": trajectory.horizon,
        "stored": len(trajectory),
        "final_mean": float(final.mean()),
        "final_max": float(final.max()),
        "front_x": _front_x(trajectory.final, config.waves.level, config.lattice),
    }
    writer.write_json("summary.json", summary)
    print(f"simulated {trajectory.horizon} generations; final mean {summary['final_mean']:.6f}")


def cmd_stability(config: ExperimentConfig, writer: ArtifactWriter, threads: int) -> None:
    params = config.params()
    delta = config.dispersal_setting().require_constant()
    kernel = config.discrete_kernel()
    grid = config.lattice.shape
    section = config.stability

    records = []
    for report in stab.classify_all(params, kernel, delta, grid, margin=section.margin):
        outcome = stab.verify_by_perturbation(
            report.fixed_point, params, kernel, delta, grid,
            epsilon=section.epsilon, generations=section.generations, seed=config.seed,
        )
        records.append({**report.model_dump(mode="json"), "perturbation": outcome.value})
        print(f"v*={report.fixed_point:.6f}  |f'|*sup={report.criterion_value:.6f}  "
              f"{report.verdict.value:<12} perturbation {outcome.value}")
    writer.write_json("stability.json", records)

    portrait = stab.phase_portrait(params, delta, section.resolution)
    writer.write_csv("phase_portrait.csv", portrait)
    writer.write_gnuplot("phase_portrait.gp", "phase_portrait.csv", "V", ["dV"], "Phase portrait", ylabel="dV")


def _front_x(values, level: float, lattice: LatticeConfig) -> Optional[float]:
    """Front position in length units relative to the origin site, None without a front."""
    index = front_position(values, level, lattice)
    return None if index is None else float((index - lattice.center[0]) * lattice.spacing)


def _snapshot_frame(trajectory, generation: int) -> pd.DataFrame:
    config = trajectory.config
    values = trajectory.values[generation]
    line = values if values.ndim == 1 else values[:, config.center[1]]
    return pd.DataFrame({"x": config.axis_coordinates(0), "v": line})


def _check_reference(config: ExperimentConfig, writer: ArtifactWriter, observed: Dict[str, float]) -> None:
    """Attach the reference comparison to the manifest and note every miss."""
    if config.reference.empty:
        return
    report = config.reference.compare(observed)
    writer.reference = report
    for cell in report["cells"]:
        if not cell["within"]:
            seen = "none" if cell["observed"] is None else f"{cell['observed']:.4g}"
            writer.note(f"reference {cell['key']}: observed {seen}, expected {cell['expected']:g}")
    for ordering in report["orderings"]:
        if not ordering["holds"]:
            writer.note(f"ordering {' < '.join(ordering['keys'])} does not hold: {ordering['observed']}")


def _note_regimes(writer: ArtifactWriter, config: ExperimentConfig, table: pd.DataFrame) -> None:
    setup = config.wave_setup()
    axis = config.waves.axis
    if axis is SweepAxis.DELTA:
        cases = [(f"delta={v:g}", v, setup.params) for v in sorted(set(config.waves.values))]
    elif axis is SweepAxis.ALLEE:
        values = [v for v in sorted(set(config.waves.values)) if 0.0 < v < 1.0]
        cases = [(f"allee={v:g}", setup.delta, from_allee(setup.params.s_h, v)) for v in values]
    else:
        cases = [(f"delta={setup.delta:g}", setup.delta, setup.params)]
    for label, delta, params in cases:
        floor = stab.site_bistability_delta(params)
        if delta < floor:
            writer.note(f"{label}: delta below the site bistability bound {floor:.4f}; fronts can stall")
    for row in table.itertuples(index=False):
        if row.regime in (WaveRegime.PINNED.value, WaveRegime.RETREATING.value):
            where = f" at {row.axis}={row.value:g}" if axis is not None else ""
            writer.note(f"{row.kernel}{where}: front {row.regime} (c*={row.c_star:.3g})")


def cmd_wavespeed(config: ExperimentConfig, writer: ArtifactWriter, threads: int) -> None:
    setup = config.wave_setup()
    specs = config.wave_kernels()
    families = {s.label: s.family.value for s in specs}
    axis = config.waves.axis

    if axis is not None:
        table = sweep(axis, config.waves.values, setup, specs, threads)
        writer.write_csv("speeds.csv", table)
        wide = table.pivot(index="value", columns="kernel", values="c_star").reset_index()
        writer.write_csv("speeds_wide.csv", wide)
        writer.write_gnuplot(
            "speeds.gp", "speeds_wide.csv", "value", [s.label for s in specs], f"c* against {axis.value}",
            xlabel=axis.value, ylabel="c*",
        )
        if axis is SweepAxis.INITIAL_AMPLITUDE:
            writer.write_csv("release_speeds.csv", release_sweep(config.waves.values, setup, specs, threads))
        _note_regimes(writer, config, table)
        _check_reference(config, writer, {
            f"c_star/{families[row.kernel]}/{row.value:g}": row.c_star for row in table.itertuples(index=False)
        })
        print(table.to_string(index=False))
        return

    rows: List[Dict[str, Any]] = []
    for spec in specs:
        trajectory = run_wave(setup, spec)
        family = spec.family.value
        for generation in config.simulate.snapshots:
            if generation > trajectory.horizon:
                raise DomainError(f"snapshot generation {generation} beyond horizon {trajectory.horizon}")
            writer.write_csv(f"profile_{family}_t{generation}.csv", _snapshot_frame(trajectory, generation))
        if config.waves.track_fronts:
            track = front_track(trajectory, setup.level)
            writer.write_csv(
                f"front_{family}.csv", pd.DataFrame({"generation": track.generations, "position": track.positions})
            )
        row: Dict[str, Any] = {
            "kernel": spec.label, "c_star": np.nan, "died": False, "regime": "", "residual": np.nan, "error": "",
        }
        try:
            estimate = asymptotic_speed(trajectory, setup.level, setup.tail_fraction)
            row.update(c_star=estimate.c_star, died=estimate.died, regime=estimate.regime.value,
                       residual=estimate.residual)
        except WLDEError as exc:
            logger.warning("speed estimate for %s failed: %s", spec.label, exc)
            row["error"] = f"{type(exc).__name__}: {exc}"
        for generation in config.simulate.snapshots:
            row[f"front_t{generation}"] = _front_x(trajectory.values[generation], setup.level, trajectory.config)
        rows.append(row)
    table = pd.DataFrame(rows)
    writer.write_csv("speeds.csv", table)
    for generation in config.simulate.snapshots:
        plots = ", \\\n     ".join(
            f"'profile_{s.family.value}_t{generation}.csv' using 'x':'v' with lines title '{s.family.value}'"
            for s in specs
        )
        writer.write_text(
            f"profiles_t{generation}.gp",
            f"set datafile separator ','\nset title 'Profiles at t={generation}'\nplot {plots}\n",
        )
    _note_regimes(writer, config, table)
    observed: Dict[str, float] = {}
    for row in rows:
        family = families[row["kernel"]]
        observed[f"c_star/{family}"] = row["c_star"]
        for generation in config.simulate.snapshots:
            front = row[f"front_t{generation}"]
            observed[f"front_t{generation}/{family}"] = np.nan if front is None else front
    _check_reference(config, writer, observed)
    print(table.to_string(index=False))


def cmd_outbreak(config: ExperimentConfig, writer: ArtifactWriter, threads: int) -> None:
    section = config.outbreak
    amplitudes = section.amplitudes or [config.profile.amplitude]
    summary: List[Dict[str, Any]] = []
    for amplitude in amplitudes:
        trajectory = _simulate_config(config, section.horizon, config.profile.with_amplitude(amplitude), stride=1)
        for k in section.ks:
            curve = outbreak_curve(
                trajectory, k, method=section.method, horizon=section.horizon, epsilon_fix=section.epsilon_fix,
                q=section.q, prominence=section.prominence, min_separation=section.min_separation,
            )
            line = curve.probabilities
            if line.ndim > 1:
                line = line[:, config.lattice.center[1]]
            frame = pd.DataFrame({"site": np.arange(line.size), "x": curve.x, "P": line})
            writer.write_csv(f"outbreak_k{k}_a{amplitude:.3f}.csv", frame)
            summary.append({
                "amplitude": amplitude,
                "k": k,
                "method": curve.method.value,
                "modes": curve.modality.count,
                "bimodal": curve.modality.count == 2,
                "peak_x": [float(curve.x[p]) for p in curve.modality.peaks],
                "peak_P": [float(line[p]) for p in curve.modality.peaks],
            })
            print(f"a={amplitude:.3f} k={k}: {curve.modality.count} mode(s) at x={summary[-1]['peak_x']}")
    writer.write_json("outbreak_summary.json", summary)
    _check_reference(config, writer, {f"modes/k{row['k']}/a{row['amplitude']:g}": row["modes"] for row in summary})


def cmd_optimize(config: ExperimentConfig, writer: ArtifactWriter, threads: int) -> None:
    settings = config.optimize_config()
    results = []
    for criterion in config.optimize.criteria:
        if criterion is Criterion.ACM:
            result = acm_optimize(settings)
            if not result.diagnostics["verified_flip"]:
                writer.note(f"ACM switch at a*={result.amplitude:.4f} not verified one tolerance below")
            results.append(result)
        else:
            results.extend(mcm_optimize(settings))
    writer.write_json("optimum.json", [r.model_dump(mode="json") for r in results])
    frame = pd.DataFrame(
        [{"criterion": r.criterion.value, "k": r.k, "a_star": r.amplitude, "half_width": r.half_width, "cost": r.cost}
         for r in results]
    )
    writer.write_csv("optimum.csv", frame)
    print(frame.to_string(index=False))


def cmd_compare(config: ExperimentConfig, writer: ArtifactWriter, threads: int) -> None:
    kernels = list(config.optimize.kernels) or [config.kernel.spec()]
    shapes = list(config.optimize.shapes) or [config.profile.shape]
    table = compare_table(
        kernels, shapes, config.outbreak.ks, config.optimize_config(), config.optimize.criteria, threads
    )
    writer.write_csv("table.csv", table)
    text = format_table(table)
    writer.write_text("table.txt", text + "\n")
    for row in table.itertuples(index=False):
        if row.error:
            writer.note(f"{row.kernel}/{row.profile}/k{row.k}: {row.error}")
    observed: Dict[str, float] = {}
    for row in table.itertuples(index=False):
        cell = f"{row.kernel}/{row.profile}/k{row.k}"
        observed.update({f"{cell}/mcm_a": row.mcm_a, f"{cell}/acm_a": row.acm_a})
    _check_reference(config, writer, observed)
    print(text)


def cmd_profiles(config: ExperimentConfig, writer: ArtifactWriter, threads: int) -> None:
    shapes = list(config.optimize.shapes) or [config.profile.shape]
    table = critical_amplitude_by_profile(shapes, config.optimize_config(), threads)
    writer.write_csv("critical_amplitudes.csv", table)
    for row in table.itertuples(index=False):
        if row.error:
            writer.note(f"{row.profile}/k{row.k}: {row.error}")
    _check_reference(config, writer, {f"{row.profile}/k{row.k}": row.a_star for row in table.itertuples(index=False)})
    print(table.to_string(index=False))


COMMANDS: Dict[str, Handler] = {
    "simulate": cmd_simulate,
    "stability": cmd_stability,
    "wavespeed": cmd_wavespeed,
    "outbreak": cmd_outbreak,
    "optimize": cmd_optimize,
    "compare": cmd_compare,
    "profiles": cmd_profiles,
}

# target -> (shipped config, subcommand)
REPRODUCE_TARGETS: Dict[str, Tuple[str, str]] = {
    "fig2": ("fig2", "stability"),
    "fig3": ("fig3", "wavespeed"),
    "fig4": ("fig4", "wavespeed"),
    "fig5": ("fig5", "wavespeed"),
    "fig6": ("fig6", "wavespeed"),
    "fig7": ("fig7", "outbreak"),
    "fig8": ("fig8", "outbreak"),
    "fig9": ("profiles", "profiles"),
    "table4": ("table4", "compare"),
}


def run(
    command: str, config: ExperimentConfig, out_dir: str | Path | None, threads: int = 1
) -> Tuple[int, Dict[str, Any]]:
    """
    Run one subcommand and write its artifacts plus ``manifest.json``.

    Returns:
        (exit status, manifest); a failed run leaves a manifest with status "partial"
    """
    writer = ArtifactWriter(out_dir, command, config.resolved(), config.config_hash())
    logger.info("%s: writing artifacts to %s", command, writer.out_dir)
    try:
        COMMANDS[command](config, writer, threads)
    except WLDEError as exc:
        logger.error("%s failed: %s", command, exc)
        return exc.exit_code, writer.finalize("partial", [f"{type(exc).__name__}: {exc}"])
    except (ValidationError, ValueError) as exc:
        logger.error("%s failed: %s", command, exc)
        return 2, writer.finalize("partial", [f"{type(exc).__name__}: {exc}"])
    return 0, writer.finalize("ok")


def reproduce(target: str, out_dir: str | Path | None, threads: int = 1, seed: Optional[int] = None) -> int:
    """
    Run one figure/table reproduction (or ``all``) from the configs shipped in ``configs/``.

    ``seed`` replaces each config's perturbation seed when given.
    """
    targets = list(REPRODUCE_TARGETS) if target == "all" else [target]
    base = Path(out_dir or OUTPUT_DIR)
    status = 0
    for name in targets:
        config_name, command = REPRODUCE_TARGETS[name]
        print(f"Reproducing {name} ({command}, configs/{config_name}.yaml)...")
        config = parse_config(Path(CONFIG_DIR) / f"{config_name}.yaml")
        if seed is not None:
            config = config.model_copy(update={"seed": seed})
        code, _ = run(command, config, base / name, threads)
        if code:
            print(f"  {name} failed with exit code {code}")
            status = status or code
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wlde", description="Wolbachia lattice difference equation experiments")
    parser.add_argument("--log-level", default=LOG_LEVEL, help="Logging level for stderr output")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, needs_config: bool = True) -> None:
        if needs_config:
            p.add_argument("--config", required=True, help="Experiment YAML (path or name of a shipped config)")
        p.add_argument("--out", default=None, help=f"Output directory (default {OUTPUT_DIR})")
        p.add_argument("--threads", type=int, default=THREADS, help="Worker threads for sweeps and tables")
        p.add_argument("--seed", type=int, default=None, help="Seed for perturbation tests")

    for name, help_text in [
        ("simulate", "Run the lattice map and dump the trajectory"),
        ("stability", "Spectral verdicts, perturbation checks and the phase portrait"),
        ("wavespeed", "Front positions and asymptotic speeds, optionally swept"),
        ("outbreak", "Outbreak-size curves and their mode counts"),
        ("compare", "MCM/ACM comparison table over kernels, profiles and k"),
        ("profiles", "MCM critical amplitude for each release profile"),
    ]:
        common(sub.add_parser(name, help=help_text))

    opt = sub.add_parser("optimize", help="Cheapest release by ACM and/or MCM")
    common(opt)
    opt.add_argument("--criterion", choices=["acm", "mcm", "both"], default=None, help="Override optimize.criterion")

    rep = sub.add_parser("reproduce", help="Regenerate a figure or table from the shipped configs")
    common(rep, needs_config=False)
    rep.add_argument("target", choices=[*REPRODUCE_TARGETS, "all"])
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=str(args.log_level).upper(),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        if args.command == "reproduce":
            return reproduce(args.target, args.out, args.threads, args.seed)
        config = parse_config(args.config)
        if args.seed is not None:
            config = config.model_copy(update={"seed": args.seed})
        if getattr(args, "criterion", None):
            config = config.model_copy(
                update={"optimize": config.optimize.model_copy(update={"criterion": args.criterion})}
            )
        status, _ = run(args.command, config, args.out, args.threads)
        return status
    except WLDEError as exc:
        logger.error("%s", exc)
        return exc.exit_code
