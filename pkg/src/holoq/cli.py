"""``holoq`` command line.

Every command resolves a configuration (defaults, then ``--config``, then
flags), writes its artifacts under ``--out-dir`` together with the resolved
config and a manifest, and exits with 0 on success, 2 on configuration or
usage errors and 3 when a computational stage fails.  Tabular outputs carry
a leading ``# run <hash>`` comment line; the hash covers the resolved config,
the command and its arguments, so reruns produce byte-identical files.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunManifest, config_hash, load_config, merge_config, model_from_config, resolve_config
from .holonomy import GATES, PulseSequence, SynthesisConfig, SynthesisError, synthesize_sequence
from .lattice import ConfigurationError, coupling, solve_bands
from .multiorbital import SIX_STATES, DrivePlan, EliminationConfig, default_dt, eliminate_leakage, project_bands, propagate
from .protocols import (
    PUBLISHED_TABLES,
    DynamicGateError,
    PipelineConfig,
    ShortcutDesignError,
    build_dynamic_gate,
    characterize_gate,
    default_workers,
    design_shortcut,
    published_sequence,
    published_shortcut,
    random_gate_benchmark,
    replay,
    robustness_sweep,
    simulate_shortcut,
    write_benchmark_csv,
)
from .tomography import (
    QubitDensityMatrix,
    RamseyFitError,
    TomographyError,
    default_tof_times,
    reconstruct_state,
    simulate_tof_dataset,
    state_fidelity,
)

log = logging.getLogger("holoq")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3

STAGE_ERRORS = (
    SynthesisError,
    DynamicGateError,
    ShortcutDesignError,
    TomographyError,
    RamseyFitError,
    FloatingPointError,
    np.linalg.LinAlgError,
)


class StageFailure(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        super().__init__(f"stage '{stage}' failed: {cause}")


class Run:
    """Output directory, resolved config and manifest bookkeeping for one command."""

    def __init__(self, command: str, cfg: dict, args: dict, out_dir: Path):
        self.cfg = cfg
        self.out_dir = out_dir
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.hash = config_hash(cfg, command, args)
        self.manifest = RunManifest(command, cfg, args, self.hash, seeds={"seed": cfg["seed"]})
        self.started = time.perf_counter()
        self.model = model_from_config(cfg)
        self.write_json("config.json", cfg, stamp=False)

    @contextlib.contextmanager
    def stage(self, name: str):
        log.info("stage %s", name)
        try:
            yield
        except STAGE_ERRORS as exc:
            raise StageFailure(name, exc) from exc

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def write_csv(self, name: str, header, rows) -> Path:
        p = self.path(name)
        with open(p, "w", newline="") as fh:
            fh.write(f"# run {self.hash}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_fmt(v) for v in row])
        self.manifest.record(p)
        return p

    def write_json(self, name: str, data: dict, stamp: bool = True) -> Path:
        p = self.path(name)
        payload = {"run_hash": self.hash, **data} if stamp else data
        with open(p, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        self.manifest.record(p)
        return p

    def finish(self, status: str, failed_stage: str | None = None) -> None:
        self.manifest.status = status
        self.manifest.failed_stage = failed_stage
        self.manifest.wall_clock_s = round(time.perf_counter() - self.started, 3)
        self.manifest.write(self.path("manifest.json"))


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


GATE_ALIASES = {"identity": "id", "hadamard": "h", "pi8": "t_table"}


def _gate_target(name: str):
    try:
        return GATES[GATE_ALIASES.get(name, name)]
    except KeyError:
        raise ConfigurationError(f"config error at gate.name: unknown gate {name!r}; known: {sorted(GATES)}") from None


def _gate_name(run: Run, args) -> str:
    name = args.gate or run.cfg["gate"]["name"]
    return GATE_ALIASES.get(name, name)


def _synthesis_config(cfg: dict) -> SynthesisConfig:
    return SynthesisConfig(beta_max=cfg["gate"]["beta_max"])


def _elimination_config(cfg: dict) -> EliminationConfig:
    return EliminationConfig(steps_per_period=cfg["pipeline"]["elimination_steps_per_period"])


def _pipeline_config(cfg: dict) -> PipelineConfig:
    p = cfg["pipeline"]
    return PipelineConfig(p["steps_per_period"], p["noise_sigma"], cfg["seed"], p["tof_points"])


def _build_gate(run: Run, bands, name: str) -> PulseSequence:
    cfg = run.cfg
    target = _gate_target(name)
    with run.stage("synthesize"):
        seq = synthesize_sequence(
            target, bands.gap, coupling(run.model, bands), cfg["gate"]["m_max"], _synthesis_config(cfg), cfg["seed"], name
        )
    run.write_json("sequence_ideal.json", seq.to_dict(run.model))
    if not cfg["pipeline"]["eliminate_leakage"]:
        return seq
    with run.stage("eliminate-leakage"):
        res = eliminate_leakage(seq, bands, target, _elimination_config(cfg), cfg["seed"])
    data = res.sequence.to_dict(run.model)
    data["elimination"] = {
        "loss_before": res.loss_before,
        "loss_after": res.loss_after,
        "fidelity_before": res.fidelity_before,
        "fidelity_after": res.fidelity_after,
        "improved": res.improved,
        "warning": res.warning,
    }
    run.write_json("sequence.json", data)
    return res.sequence


def _load_sequence(run: Run, path) -> PulseSequence:
    try:
        with open(path) as fh:
            data = json.load(fh)
        return PulseSequence.from_dict(data, run.model)
    except (OSError, KeyError, ValueError, TypeError) as exc:
        raise ConfigurationError(f"cannot read sequence file {path}: {exc}") from None


def _sequence_for(run: Run, bands, args) -> tuple:
    if getattr(args, "sequence", None):
        seq = _load_sequence(run, args.sequence)
        return seq, _gate_target(args.gate or seq.target)
    name = _gate_name(run, args)
    return _build_gate(run, bands, name), _gate_target(name)


# -- commands ----------------------------------------------------------------


def cmd_bands(run: Run, args) -> None:
    model = run.model
    with run.stage("bands"):
        bands = solve_bands(model)
    e0 = bands.energy("s")
    rows = []
    for n in range(min(args.n_bands, len(bands.energies))):
        e = float(bands.energies[n])
        rows.append((n, bands.labels[n], int(bands.parities[n]), e, e - e0, float(model.energy_to_khz(e - e0))))
    run.write_csv("bands.csv", ("index", "band", "parity", "energy_er", "gap_from_s_er", "gap_from_s_khz"), rows)
    x = np.linspace(-1.0, 1.0, args.samples)  # in lattice spacings
    phase = np.exp(2j * np.pi * np.outer(x, model.q))  # e^{2 i q K x}, K a = pi
    samples = []
    for n in range(min(args.n_bands, len(bands.energies))):
        psi = phase @ bands.vectors[:, n]
        samples.extend((bands.labels[n], xi, p.real, p.imag) for xi, p in zip(x, psi))
    run.write_csv("bloch_amplitudes.csv", ("band", "x_over_a", "re", "im"), samples)
    c = coupling(model, bands)
    run.write_json(
        "summary.json",
        {
            "v0_er": model.v0,
            "recoil_frequency_hz": model.recoil_frequency,
            "gap_sd_er": bands.gap,
            "gap_sd_khz": float(model.energy_to_khz(bands.gap)),
            "gap_sg_er": bands.gap_sg,
            "coupling_per_unit_amplitude_er": c.lambda_per_unit_A,
        },
    )


def cmd_synthesize(run: Run, args) -> None:
    bands = solve_bands(run.model)
    _build_gate(run, bands, _gate_name(run, args))


def _write_replay(run: Run, result, prefix: str) -> None:
    rows = [
        (k, f, leak, g) for k, f, leak, g in zip(SIX_STATES, result.fidelities, result.leakage, result.peak_g)
    ]
    rows.append(("average", float(np.mean(result.fidelities)), float(np.max(result.leakage)), float(np.max(result.peak_g))))
    run.write_csv(f"{prefix}fidelities.csv", ("state", "fidelity", "leakage_final", "peak_g"), rows)
    t_us = run.model.time_to_us(result.times)
    pops = []
    for i, t in enumerate(t_us):
        for j, k in enumerate(SIX_STATES):
            p = result.populations[i, j]
            pops.append((t, k, p[0], p[2], p[4], 1 - p[0] - p[2]))
    run.write_csv(f"{prefix}populations.csv", ("t_us", "state", "p_s", "p_d", "p_g", "leakage"), pops)


def cmd_simulate(run: Run, args) -> None:
    bands = solve_bands(run.model)
    seq, target = _sequence_for(run, bands, args)
    with run.stage("simulate"):
        result = replay(seq, bands, target, run.cfg["pipeline"]["steps_per_period"])
    _write_replay(run, result, "")


def cmd_tomography(run: Run, args) -> None:
    bands = solve_bands(run.model)
    seq, target = _sequence_for(run, bands, args)
    pipe = _pipeline_config(run.cfg)
    times = default_tof_times(bands, pipe.tof_points)
    seeds = np.random.SeedSequence(pipe.seed).generate_state(len(SIX_STATES))
    plan = DrivePlan.from_sequence(seq, run.model.v0)
    inputs = np.column_stack(list(SIX_STATES.values()))
    with run.stage("simulate"):
        psi = propagate(bands.qubit_basis() @ inputs, plan, default_dt(plan, pipe.steps_per_period)).final
    amps = project_bands(psi.T, bands).qubit_amplitudes()
    rows = []
    with run.stage("tofqst"):
        for k, (label, c) in enumerate(zip(SIX_STATES, amps)):
            rho = QubitDensityMatrix.from_state(c)
            data = simulate_tof_dataset(rho, bands, times_us=times, noise_seed=int(seeds[k]), noise_sigma=pipe.noise_sigma)
            safe = {"+": "plus", "-": "minus", "+i": "plus_i", "-i": "minus_i"}.get(label, label)
            run.write_csv(
                f"tof_{safe}.csv", ("t_evo_us", "w_0", "w_plus", "w_minus"), [(t, *w) for t, w in zip(data.t_evo_us, data.weights)]
            )
            est = reconstruct_state(data, bands)
            ideal = target @ SIX_STATES[label]
            rows.append(
                (
                    label,
                    est.rho.rho_dd,
                    complex(est.rho.rho_ds).real,
                    complex(est.rho.rho_ds).imag,
                    state_fidelity(est.rho, np.outer(ideal, ideal.conj())),
                    est.residual,
                    est.projection_distance,
                )
            )
    run.write_csv(
        "states.csv", ("state", "rho_dd", "re_rho_ds", "im_rho_ds", "fidelity", "residual", "projection_distance"), rows
    )


def cmd_qpt(run: Run, args) -> None:
    bands = solve_bands(run.model)
    seq, target = _sequence_for(run, bands, args)
    plan = DrivePlan.from_sequence(seq, run.model.v0)
    with run.stage("qpt"):
        res = characterize_gate(plan, bands, target, _pipeline_config(run.cfg))
    rows = [(k, f, s) for k, f, s in zip(SIX_STATES, res.final_fidelities, res.state_fidelities)]
    rows.append(("average", float(np.mean(res.final_fidelities)), float(np.mean(res.state_fidelities))))
    run.write_csv("fidelity_table.csv", ("state", "final_state_fidelity", "tomography_fidelity"), rows)
    data = res.chi.to_dict()
    data["process_fidelity"] = res.process_fidelity
    data["target"] = seq.target
    run.write_json("chi.json", data)


def _parse_grid(text: str) -> np.ndarray:
    try:
        if ":" in text:
            start, stop, step = (float(x) for x in text.split(":"))
            if step <= 0:
                raise ValueError
            n = int(np.floor((stop - start) / step + 1e-9)) + 1
            return np.round(start + step * np.arange(n), 12)
        return np.array(sorted(float(x) for x in text.split(",")))
    except ValueError:
        raise ConfigurationError(f"bad --grid {text!r}; use start:stop:step or a comma list") from None


def cmd_robustness(run: Run, args) -> None:
    bands = solve_bands(run.model)
    name = _gate_name(run, args)
    grid = _parse_grid(args.grid)
    seq = _build_gate(run, bands, name)
    target = _gate_target(name)
    with run.stage("dynamic-baseline"):
        dyn = build_dynamic_gate(target, bands, seq.duration, seed=run.cfg["seed"])
    run.write_json("dynamic_plan.json", dyn.to_dict(run.model))
    with run.stage("robustness"):
        report = robustness_sweep(seq, dyn, grid, bands, target, _pipeline_config(run.cfg), gate=name)
    variants = sorted(report.fidelities)
    rows = [(name, d, *(report.fidelities[v][i] for v in variants)) for i, d in enumerate(report.grid)]
    out = args.out or "robustness.csv"
    run.write_csv(out, ("gate", "delta_a_rel", *(f"fidelity_{v}" for v in variants)), rows)


def cmd_random_bench(run: Run, args) -> None:
    workers = default_workers(args.threads)
    cfg = run.cfg
    with run.stage("random-bench"):
        rows = random_gate_benchmark(
            args.n, cfg["seed"], run.model, _synthesis_config(cfg), _elimination_config(cfg), workers
        )
    p = run.path(args.out or "random_bench.csv")
    write_benchmark_csv(rows, p)
    text = p.read_text()
    p.write_text(f"# run {run.hash}\n" + text)
    run.manifest.record(p)
    fids = np.array([r.fidelity for r in rows], dtype=float)
    ok = np.isfinite(fids)
    run.write_json(
        "random_bench_summary.json",
        {
            "n": args.n,
            "min_fidelity": float(np.min(fids[ok])) if ok.any() else None,
            "mean_fidelity": float(np.mean(fids[ok])) if ok.any() else None,
            "failures": [r.index for r in rows if r.status != "ok"],
        },
    )


def cmd_init_design(run: Run, args) -> None:
    bands = solve_bands(run.model)
    rows = []
    with run.stage("init-design"):
        for label in SIX_STATES:
            if args.published:
                seq = published_shortcut(label)
                res = simulate_shortcut(seq, bands)
                fid = res.fidelity
            else:
                seq = None
                for cycles in range(1, 4):
                    try:
                        seq = design_shortcut(label, bands, cycles, seed=run.cfg["seed"])
                        break
                    except ShortcutDesignError:
                        if cycles == 3:
                            raise
                fid = seq.fidelity
            taus = list(seq.durations_us) + [""] * (6 - len(seq.durations_us))
            rows.append((label, seq.cycles, *taus, seq.total_us, fid))
    header = ("state", "cycles", "tau_on_1", "tau_off_1", "tau_on_2", "tau_off_2", "tau_on_3", "tau_off_3", "total_us", "fidelity")
    run.write_csv("shortcut.csv", header, rows)


def cmd_replay(run: Run, args) -> None:
    bands = solve_bands(run.model)
    try:
        seq, target = published_sequence(args.table, args.gate, run.model)
    except KeyError as exc:
        raise ConfigurationError(str(exc.args[0])) from None
    run.write_json("sequence.json", seq.to_dict(run.model))
    with run.stage("replay"):
        result = replay(seq, bands, target, run.cfg["pipeline"]["steps_per_period"])
    _write_replay(run, result, "")


COMMANDS = {
    "bands": cmd_bands,
    "synthesize": cmd_synthesize,
    "simulate": cmd_simulate,
    "tomography": cmd_tomography,
    "qpt": cmd_qpt,
    "robustness": cmd_robustness,
    "random-bench": cmd_random_bench,
    "init-design": cmd_init_design,
    "replay": cmd_replay,
}


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # flags are accepted before and after the command; the copy attached to
    # each command suppresses its defaults so it cannot clobber earlier values
    def default(value):
        return argparse.SUPPRESS if suppress else value

    flags = argparse.ArgumentParser(add_help=False)
    flags.add_argument("--config", default=default(None), help="JSON run configuration")
    flags.add_argument("--seed", type=int, default=default(None), help="override the configured seed")
    flags.add_argument("--out-dir", default=default(None), help="output directory (default from config)")
    flags.add_argument("--threads", type=int, default=default(1), help="worker processes for parallel stages")
    flags.add_argument("-v", "--verbose", action="count", default=default(0))
    return flags


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=True)
    parser = argparse.ArgumentParser(prog="holoq", description=__doc__.splitlines()[0], parents=[_global_flags(suppress=False)])
    parser.add_argument("--version", action="version", version=f"holoq {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bands", parents=[common], help="band energies and Bloch amplitudes")
    p.add_argument("--n-bands", type=int, default=7)
    p.add_argument("--samples", type=int, default=201)

    for name, helptext in (
        ("synthesize", "synthesize (and leakage-eliminate) a gate"),
        ("simulate", "six-state multi-orbital simulation of a gate"),
        ("tomography", "simulated time-of-flight state tomography of a gate's outputs"),
        ("qpt", "full pipeline: synthesis, elimination, simulation, tomography, process tomography"),
    ):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--gate", help=f"gate name: {', '.join(sorted(GATES))}")
        if name != "synthesize":
            p.add_argument("--sequence", help="pulse sequence JSON instead of synthesizing")

    p = sub.add_parser("robustness", parents=[common], help="process fidelity versus DC amplitude offset")
    p.add_argument("--gate")
    p.add_argument("--grid", default="0:0.25:0.025", help="start:stop:step or comma list of dA/A")
    p.add_argument("--out", help="report file name inside the output directory")

    p = sub.add_parser("random-bench", parents=[common], help="random-gate universality benchmark")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--out")

    p = sub.add_parser("init-design", parents=[common], help="shortcut loading sequences for the six cardinal states")
    p.add_argument("--published", action="store_true", help="replay the shipped experimental durations instead")

    p = sub.add_parser("replay", parents=[common], help="replay a shipped experimental gate table")
    p.add_argument("--table", required=True, choices=PUBLISHED_TABLES)
    p.add_argument("--gate", required=True)
    return parser


def _resolve(args) -> dict:
    cfg = load_config(args.config) if args.config else resolve_config()
    override = {}
    if args.seed is not None:
        override["seed"] = args.seed
    if args.out_dir is not None:
        override.setdefault("output", {})["dir"] = args.out_dir
    if override:
        cfg = resolve_config(merge_config(cfg, override))
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr
    )
    try:
        cfg = _resolve(args)
        if args.threads is not None and args.threads < 1:
            raise ConfigurationError("--threads must be >= 1")
        arg_record = {
            k: v for k, v in sorted(vars(args).items()) if k not in ("config", "seed", "out_dir", "verbose", "threads")
        }
        run = Run(args.command, cfg, arg_record, Path(cfg["output"]["dir"]))
    except ConfigurationError as exc:
        print(f"holoq: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        COMMANDS[args.command](run, args)
    except ConfigurationError as exc:
        run.finish("config-error")
        print(f"holoq: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageFailure as exc:
        run.finish("failed", exc.stage)
        print(f"holoq: {exc}", file=sys.stderr)
        return EXIT_STAGE
    run.finish("ok")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
