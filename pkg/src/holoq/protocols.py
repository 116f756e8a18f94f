"""End-to-end studies built on the lattice, holonomy and tomography layers.

* shortcut loading: on/off lattice pulses that steer a q=0 condensate into a
  chosen s/d superposition;
* gate characterization: six input states through the multi-orbital
  simulation, time-of-flight state tomography, then process tomography;
* robustness: DC offsets of the modulation amplitude for holonomic gates
  and for a square-pulse dynamic baseline;
* random-gate benchmark and two-site timing helpers.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources

import numpy as np
from scipy.optimize import minimize

from .holonomy import (
    GATES,
    PAULIS,
    Pulse,
    PulseSequence,
    SynthesisConfig,
    SynthesisError,
    synthesize_sequence,
)
from .lattice import BandSolution, LatticeModel, coupling, kinetic_diagonal, potential_matrix, solve_bands
from .multiorbital import (
    SIX_STATES,
    DrivePlan,
    EliminationConfig,
    Modulated,
    Square,
    default_dt,
    eliminate_leakage,
    project_bands,
    propagate,
    six_state_fidelities,
)
from .tomography import (
    ProcessMatrix,
    QubitDensityMatrix,
    chi_from_unitary,
    default_tof_times,
    process_fidelity,
    qpt_reconstruct,
    reconstruct_state,
    simulate_tof_dataset,
    state_fidelity,
)

log = logging.getLogger(__name__)

T_RELAX_MS = 4.5
T2_MS = 2.1
SHORTCUT_MAX_US = 250.0


def _state_vector(target) -> np.ndarray:
    if isinstance(target, str):
        try:
            return SIX_STATES[target]
        except KeyError:
            raise KeyError(f"unknown state {target!r}; known: {list(SIX_STATES)}") from None
    vec = np.asarray(target, dtype=complex).reshape(2)
    return vec / np.linalg.norm(vec)


# ---------------------------------------------------------------------------
# published pulse tables
# ---------------------------------------------------------------------------

PUBLISHED_TABLES = ("s2", "s3")


@lru_cache(maxsize=1)
def load_published() -> dict:
    """Shipped experimental pulse tables (see ``data/published_sequences.json``)."""
    text = resources.files("holoq").joinpath("data/published_sequences.json").read_text()
    return json.loads(text)


def published_sequence(table: str, gate: str, model: LatticeModel | None = None) -> tuple:
    """(PulseSequence, target unitary) for a shipped gate table.

    ``table`` is "s2" (before leakage elimination) or "s3" (after).
    """
    model = LatticeModel() if model is None else model
    data = load_published()
    if table not in PUBLISHED_TABLES:
        raise KeyError(f"unknown table {table!r}; known: {list(PUBLISHED_TABLES)}")
    gates = data[table]["gates"]
    if gate not in gates:
        raise KeyError(f"unknown gate {gate!r} for table {table}; known: {sorted(gates)}")
    bands = solve_bands(model)
    pulses = tuple(
        Pulse(float(model.khz_to_energy(p["omega_khz"])), p["amplitude"], p["phi_rad"]) for p in gates[gate]
    )
    target_name = data["targets"][gate]
    seq = PulseSequence(pulses, bands.gap, target_name, meta={"table": table})
    return seq, GATES[target_name]


def published_shortcut(state: str) -> ShortcutSequence:
    durations = load_published()["shortcut"]["durations_us"]
    if state not in durations:
        raise KeyError(f"unknown state {state!r}; known: {list(durations)}")
    return ShortcutSequence(tuple(durations[state]), state)


@dataclass
class ReplayResult:
    """Six-state replay of a drive: fidelities, leakage and band populations."""

    fidelities: np.ndarray  # (6,)
    leakage: np.ndarray  # final, (6,)
    peak_g: np.ndarray  # max g population over time, (6,)
    times: np.ndarray
    populations: np.ndarray  # (n_times, 6, n_bands)
    labels: tuple

    @property
    def states(self) -> tuple:
        return tuple(SIX_STATES)


def replay(plan_or_seq, bands: BandSolution, target, steps_per_period: int = 1024, sample_every: int = 8) -> ReplayResult:
    """Propagate the six cardinal states and record band populations."""
    v0 = bands.model.v0
    plan = plan_or_seq if isinstance(plan_or_seq, DrivePlan) else DrivePlan.from_sequence(plan_or_seq, v0)
    inputs = np.column_stack(list(SIX_STATES.values()))
    traj = propagate(bands.qubit_basis() @ inputs, plan, default_dt(plan, steps_per_period), sample_every)
    proj = project_bands(np.swapaxes(traj.states, 1, 2), bands)  # (t, 6, bands)
    pops = proj.populations
    final = proj.qubit_amplitudes()[-1]  # (6, 2)
    expected = np.asarray(target) @ inputs
    fids = np.abs(np.sum(expected.conj() * final.T, axis=0)) ** 2
    g = bands.index("g")
    return ReplayResult(fids, np.asarray(proj.leakage[-1]), pops[:, :, g].max(axis=0), traj.times, pops, bands.labels)


# ---------------------------------------------------------------------------
# shortcut loading
# ---------------------------------------------------------------------------


class ShortcutDesignError(RuntimeError):
    def __init__(self, message: str, best_fidelity: float):
        self.best_fidelity = best_fidelity
        super().__init__(f"{message} (best fidelity {best_fidelity:.6f}); increase cycles")


@dataclass(frozen=True, eq=False)
class ShortcutSequence:
    """Alternating lattice-on / lattice-off windows in us, starting with on."""

    durations_us: tuple
    target: object = "1"
    fidelity: float = float("nan")

    def __post_init__(self):
        d = tuple(float(x) for x in self.durations_us)
        object.__setattr__(self, "durations_us", d)
        if any(x < 0 for x in d):
            raise ValueError("window durations must be >= 0")
        if len(d) > 6:
            raise ValueError("at most 3 on/off cycles are supported")
        if sum(d) > SHORTCUT_MAX_US + 1e-9:
            raise ValueError(f"total duration {sum(d):.1f} us exceeds {SHORTCUT_MAX_US} us")

    @property
    def cycles(self) -> int:
        return (len(self.durations_us) + 1) // 2

    @property
    def total_us(self) -> float:
        return float(sum(self.durations_us))


@dataclass(frozen=True)
class ShortcutResult:
    state: np.ndarray
    amplitudes: np.ndarray  # (c_d, c_s)
    fidelity: float
    leakage: float


class _ShortcutEngine:
    """Exact exponentials of the lattice-on and free Hamiltonians."""

    def __init__(self, bands: BandSolution):
        model = bands.model
        self.bands = bands
        self.model = model
        h_on = np.diag(kinetic_diagonal(model.q_max)) + model.v0 * potential_matrix(model.q_max)
        self.e_on, self.w_on = np.linalg.eigh(h_on)
        self.kin = kinetic_diagonal(model.q_max)
        self.psi0 = (model.q == 0).astype(complex)
        self.proj = bands.qubit_basis().T

    def run(self, durations_us) -> np.ndarray:
        psi = self.psi0
        times = self.model.us_to_time(np.asarray(durations_us, dtype=float))
        for k, t in enumerate(times):
            if k % 2 == 0:
                psi = self.w_on @ (np.exp(-1j * self.e_on * t) * (self.w_on.T @ psi))
            else:
                psi = np.exp(-1j * self.kin * t) * psi
        return psi

    def fidelity(self, durations_us, target_vec) -> float:
        c = self.proj @ self.run(durations_us)
        return float(abs(np.vdot(target_vec, c)) ** 2)


def simulate_shortcut(seq: ShortcutSequence, bands: BandSolution, target=None) -> ShortcutResult:
    """Load a q=0 plane wave with the on/off sequence and project onto s, d.

    Each window is a piecewise-constant Hamiltonian, so it is applied as an
    exact matrix exponential; no time step is involved.
    """
    engine = _ShortcutEngine(bands)
    target_vec = _state_vector(seq.target if target is None else target)
    psi = engine.run(seq.durations_us)
    c = engine.proj @ psi
    fid = float(abs(np.vdot(target_vec, c)) ** 2)
    return ShortcutResult(psi, c, fid, float(1 - np.vdot(c, c).real))


@dataclass(frozen=True)
class ShortcutConfig:
    starts: int = 24
    maxfev: int = 4000
    threshold: float = 0.99
    good_enough: float = 0.9999


def design_shortcut(
    target, bands: BandSolution, cycles: int = 2, config: ShortcutConfig = ShortcutConfig(), seed: int = 0
) -> ShortcutSequence:
    """Variational on/off durations preparing ``target`` within 250 us.

    Durations are parametrized as 250 x_i^2 / (1 + sum x^2) us so the total
    limit holds by construction.  Seeded Nelder-Mead multi-start; the first
    start reaching ``config.good_enough`` ends the search.
    """
    if not 1 <= cycles <= 3:
        raise ValueError("cycles must be 1, 2 or 3")
    engine = _ShortcutEngine(bands)
    vec = _state_vector(target)
    label = target if isinstance(target, str) else "custom"
    f_empty = engine.fidelity([], vec)
    if f_empty >= config.threshold:
        return ShortcutSequence((), label, f_empty)

    n = 2 * cycles

    def durations(x):
        x2 = np.asarray(x) ** 2
        return SHORTCUT_MAX_US * x2 / (1 + x2.sum())

    def objective(x):
        return 1.0 - engine.fidelity(durations(x), vec)

    rng = np.random.default_rng(seed)
    best = None
    for x0 in rng.uniform(0.1, 1.0, size=(config.starts, n)):
        res = minimize(objective, x0, method="Nelder-Mead", options=dict(maxfev=config.maxfev, xatol=1e-10, fatol=1e-13))
        if best is None or res.fun < best.fun:
            best = res
        if 1 - best.fun >= config.good_enough:
            break
    fid = 1 - float(best.fun)
    if fid < config.threshold:
        raise ShortcutDesignError(f"no {cycles}-cycle sequence reaches {config.threshold}", fid)
    d = tuple(float(x) for x in durations(best.x))
    # replaying the rounded-to-float tuple defines the reported fidelity
    return ShortcutSequence(d, label, engine.fidelity(d, vec))


# ---------------------------------------------------------------------------
# gate characterization pipeline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PipelineConfig:
    steps_per_period: int = 1024
    noise_sigma: float = 0.0
    seed: int = 0
    tof_points: int = 16


@dataclass
class ProcessResult:
    chi: ProcessMatrix
    process_fidelity: float
    state_fidelities: np.ndarray  # reconstructed vs ideal output, six inputs
    final_fidelities: np.ndarray  # |<U psi|c>|^2 from the simulation
    leakage: np.ndarray


def _plan_dt(plan: DrivePlan, bands: BandSolution, steps_per_period: int) -> float:
    modulated = [s for s in plan.segments if isinstance(s, Modulated)]
    if modulated:
        return default_dt(plan, steps_per_period)
    # square pulses: resolve the qubit precession period
    return 2 * np.pi / bands.gap / steps_per_period


def characterize_gate(plan: DrivePlan, bands: BandSolution, target, config: PipelineConfig = PipelineConfig()) -> ProcessResult:
    """Six inputs through the simulation, state tomography of each, then QPT."""
    target = np.asarray(target, dtype=complex)
    dt = _plan_dt(plan, bands, config.steps_per_period)
    inputs = np.column_stack(list(SIX_STATES.values()))
    psi0 = bands.qubit_basis() @ inputs
    final = propagate(psi0, plan, dt).final if plan.segments else psi0
    proj = project_bands(final.T, bands)
    amps = proj.qubit_amplitudes()  # (6, 2)
    times = default_tof_times(bands, config.tof_points)
    seeds = np.random.SeedSequence(config.seed).generate_state(len(SIX_STATES))
    recon = []
    state_fids = []
    for k, c in enumerate(amps):
        rho = QubitDensityMatrix.from_state(c)
        data = simulate_tof_dataset(rho, bands, times_us=times, noise_seed=int(seeds[k]), noise_sigma=config.noise_sigma)
        est = reconstruct_state(data, bands).rho
        recon.append(est)
        ideal = target @ inputs[:, k]
        state_fids.append(state_fidelity(est, np.outer(ideal, ideal.conj())))
    ins = [QubitDensityMatrix.from_state(v) for v in SIX_STATES.values()]
    chi = qpt_reconstruct(ins, recon)
    expected = target @ inputs
    final_fids = np.abs(np.sum(expected.conj() * amps.T, axis=0)) ** 2
    return ProcessResult(
        chi,
        process_fidelity(chi, chi_from_unitary(target)),
        np.array(state_fids),
        final_fids,
        np.asarray(proj.leakage),
    )


# ---------------------------------------------------------------------------
# dynamic (square-pulse) baseline
# ---------------------------------------------------------------------------


class DynamicGateError(RuntimeError):
    def __init__(self, message: str, best_fidelity: float):
        self.best_fidelity = best_fidelity
        super().__init__(f"{message} (best fidelity {best_fidelity:.6f})")


@dataclass(frozen=True)
class DynamicGateConfig:
    starts: int = 24
    maxfev: int = 3000
    amplitude_range: tuple = (-1.0, 1.0)  # depth v0 (1 + A), A in this range
    threshold: float = 0.98
    good_enough: float = 0.9999


def _is_identity(target) -> bool:
    t = np.asarray(target, dtype=complex)
    return abs(abs(np.trace(t)) - 2) < 1e-12


class _SquareEngine:
    def __init__(self, bands: BandSolution):
        model = bands.model
        self.kin = np.diag(kinetic_diagonal(model.q_max))
        self.pot = potential_matrix(model.q_max)
        self.basis = bands.qubit_basis().astype(complex)

    def block(self, depths, durations) -> np.ndarray:
        psi = self.basis
        for depth, t in zip(depths, durations):
            e, w = np.linalg.eigh(self.kin + depth * self.pot)
            psi = w @ (np.exp(-1j * e * t)[:, None] * (w.T @ psi))
        return self.basis.T @ psi


def build_dynamic_gate(
    target,
    bands: BandSolution,
    duration: float,
    n_pulses: int = 6,
    config: DynamicGateConfig = DynamicGateConfig(),
    seed: int = 0,
) -> DrivePlan:
    """Square lattice-depth pulses realizing ``target`` in a fixed total time.

    Segment k holds depth v0 (1 + A_k) for tau_k; the tau_k sum to
    ``duration`` (hbar/E_r).  The objective is the qubit-block gate fidelity
    |tr(U_target^dagger B)|^2 / 4, evaluated with exact exponentials.  No
    geometric condition is imposed, so the dynamical phase is left in.
    """
    v0 = bands.model.v0
    if _is_identity(target):
        return DrivePlan((), v0)
    target = np.asarray(target, dtype=complex)
    engine = _SquareEngine(bands)
    lo, hi = config.amplitude_range

    def unpack(x):
        amp = lo + (hi - lo) * np.sin(x[:n_pulses]) ** 2
        w = x[n_pulses:] ** 2
        return v0 * (1 + amp), duration * w / w.sum()

    def objective(x):
        B = engine.block(*unpack(x))
        return 1.0 - abs(np.trace(target.conj().T @ B)) ** 2 / 4

    rng = np.random.default_rng(seed)
    best = None
    for _ in range(config.starts):
        x0 = np.concatenate([rng.uniform(0, np.pi, n_pulses), rng.uniform(0.2, 1.0, n_pulses)])
        res = minimize(objective, x0, method="Nelder-Mead", options=dict(maxfev=config.maxfev, xatol=1e-10, fatol=1e-13))
        if best is None or res.fun < best.fun:
            best = res
        if 1 - best.fun >= config.good_enough:
            break
    depths, taus = unpack(best.x)
    plan = DrivePlan(tuple(Square(float(d), float(t)) for d, t in zip(depths, taus)), v0)
    fid = float(np.mean(six_state_fidelities(plan, bands, target, _plan_dt(plan, bands, 1024))))
    if fid < config.threshold:
        raise DynamicGateError(f"no {n_pulses}-pulse square sequence reaches {config.threshold}", fid)
    return plan


# ---------------------------------------------------------------------------
# robustness
# ---------------------------------------------------------------------------


def perturb_amplitude(plan: DrivePlan, rel: float) -> DrivePlan:
    """Scale every modulation amplitude A by (1 + rel).

    Modulated segments: A -> A (1 + rel), capped at 1.  Square segments hold
    depth v0 (1 + A), so their depth becomes v0 + (depth - v0)(1 + rel),
    floored at 0.
    """
    segs = []
    for s in plan.segments:
        if isinstance(s, Modulated):
            amp = s.amplitude * (1 + rel)
            if amp > 1:
                log.info("perturbed amplitude %.4f capped at 1", amp)
                amp = 1.0
            segs.append(replace(s, amplitude=max(amp, 0.0)))
        else:
            depth = plan.v0 + (s.depth_er - plan.v0) * (1 + rel)
            segs.append(replace(s, depth_er=max(depth, 0.0)))
    return DrivePlan(tuple(segs), plan.v0)


@dataclass
class RobustnessReport:
    grid: np.ndarray
    fidelities: dict = field(default_factory=dict)  # variant -> array over grid
    gate: str = "custom"

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        if np.any(np.diff(self.grid) < 0):
            raise ValueError("noise grid must be sorted")

    def to_csv(self, path) -> None:
        variants = sorted(self.fidelities)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["gate", "delta_a_rel"] + [f"fidelity_{v}" for v in variants])
            for i, d in enumerate(self.grid):
                writer.writerow([self.gate, repr(float(d))] + [repr(float(self.fidelities[v][i])) for v in variants])


def robustness_sweep(
    holonomic: PulseSequence | DrivePlan,
    dynamic: DrivePlan | None,
    noise_grid,
    bands: BandSolution,
    target,
    config: PipelineConfig = PipelineConfig(),
    gate: str = "custom",
) -> RobustnessReport:
    """Process fidelity versus DC amplitude offset for each gate variant."""
    v0 = bands.model.v0
    plans = {
        "holonomic": holonomic if isinstance(holonomic, DrivePlan) else DrivePlan.from_sequence(holonomic, v0)
    }
    if dynamic is not None:
        plans["dynamic"] = dynamic
    grid = np.sort(np.asarray(noise_grid, dtype=float))
    report = RobustnessReport(grid, {}, gate)
    for name, plan in plans.items():
        base = characterize_gate(plan, bands, target, config).process_fidelity
        if base < 0.98:
            log.warning("%s variant has noiseless process fidelity %.4f < 0.98", name, base)
        report.fidelities[name] = np.array(
            [base if d == 0 else characterize_gate(perturb_amplitude(plan, d), bands, target, config).process_fidelity for d in grid]
        )
    return report


# ---------------------------------------------------------------------------
# random-gate benchmark
# ---------------------------------------------------------------------------


def axis_angle_gate(theta: float, phi: float, beta: float) -> np.ndarray:
    """exp(i beta n.sigma / 2) with n = (sin theta cos phi, sin theta sin phi, cos theta)."""
    n = (np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta))
    gen = sum(c * P for c, P in zip(n, PAULIS[1:]))
    return np.cos(beta / 2) * PAULIS[0] + 1j * np.sin(beta / 2) * gen


def sample_gate_angles(n: int, seed: int) -> np.ndarray:
    """Uniform theta in [0, pi), phi in [0, 2 pi), beta in [0, 2 pi); shape (n, 3).

    Uniform theta over-weights the poles relative to the Haar measure.
    """
    rng = np.random.default_rng(seed)
    return np.column_stack([rng.uniform(0, np.pi, n), rng.uniform(0, 2 * np.pi, n), rng.uniform(0, 2 * np.pi, n)])


@dataclass(frozen=True)
class BenchmarkRow:
    index: int
    theta: float
    phi: float
    beta: float
    pulses: int
    fidelity_ideal: float
    fidelity_before: float
    fidelity: float
    status: str


BENCHMARK_COLUMNS = ("index", "theta", "phi", "beta", "pulses", "fidelity_ideal", "fidelity_before", "fidelity", "status")


def _benchmark_one(args) -> BenchmarkRow:
    index, (theta, phi, beta), model, seed, synth, elim = args
    bands = solve_bands(model)
    cmap = coupling(model, bands)
    target = axis_angle_gate(theta, phi, beta)
    try:
        seq = synthesize_sequence(target, bands.gap, cmap, 5, synth, rng_seed=seed, name=f"random-{index}")
    except SynthesisError as exc:
        log.warning("sample %d: %s", index, exc)
        return BenchmarkRow(index, theta, phi, beta, 0, exc.best_fidelity, np.nan, np.nan, "synthesis_failed")
    result = eliminate_leakage(seq, bands, target, elim, rng_seed=seed)
    status = "ok" if result.fidelity_after >= 0.98 else "below_threshold"
    return BenchmarkRow(
        index, theta, phi, beta, len(seq.pulses), seq.fidelity_ideal, result.fidelity_before, result.fidelity_after, status
    )


def random_gate_benchmark(
    n: int,
    seed: int,
    model: LatticeModel = LatticeModel(),
    synthesis: SynthesisConfig = SynthesisConfig(),
    elimination: EliminationConfig = EliminationConfig(),
    workers: int = 1,
) -> list:
    """Synthesize, leakage-eliminate and simulate ``n`` sampled gates.

    Rows come back in sample order whatever ``workers`` is; failures are kept
    as rows with a status instead of being dropped.
    """
    angles = sample_gate_angles(n, seed)
    seeds = np.random.SeedSequence(seed).generate_state(max(n, 1))
    jobs = [(i, tuple(float(a) for a in angles[i]), model, int(seeds[i]), synthesis, elimination) for i in range(n)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_benchmark_one, jobs))
    return [_benchmark_one(j) for j in jobs]


def write_benchmark_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(BENCHMARK_COLUMNS)
        for r in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in (getattr(r, c) for c in BENCHMARK_COLUMNS)])


# ---------------------------------------------------------------------------
# timing utilities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TwoSiteInteraction:
    """Nearest-neighbour orbital interaction energies; ``u4`` is neglected."""

    u1: float
    u2: float
    u3: float
    u4: float = 0.0

    @property
    def neglected(self) -> tuple:
        return ("u4",)

    def swap_times(self, hbar: float = 1.0) -> tuple:
        return swap_gate_times(self.u3, hbar)


def swap_gate_times(u3: float, hbar: float = 1.0) -> tuple:
    """(tau_swap, tau_sqrt_swap) = (pi hbar / (2 U3), pi hbar / (4 U3))."""
    if not u3 > 0:
        raise ValueError(f"exchange energy U3 must be positive, got {u3}")
    tau = np.pi * hbar / (2 * u3)
    return tau, tau / 2


@dataclass(frozen=True)
class TimescaleRow:
    gate: str
    periods: int
    duration_us: float
    limit_us: float
    within_limit: bool


def gate_duration_us(gate, model: LatticeModel | None = None, freq_khz: float | None = None) -> float:
    """Wall-clock length of a gate.

    ``gate`` is a PulseSequence (needs ``model``) or a period count (needs
    ``freq_khz``, one modulation period per pulse).
    """
    if isinstance(gate, PulseSequence):
        model = LatticeModel() if model is None else model
        return float(model.time_to_us(gate.duration))
    periods = int(gate)
    if periods == 0:
        return 0.0
    return periods * 1e3 / float(freq_khz)


def timescale_check(gates: dict, model: LatticeModel | None = None, freq_khz: float = 10.77) -> list:
    """Compare gate durations against a quarter of the stored T2 (2.1 ms).

    ``gates`` maps names to PulseSequence objects or period counts.
    """
    limit = T2_MS * 1e3 / 4
    rows = []
    for name, g in gates.items():
        periods = len(g.pulses) if isinstance(g, PulseSequence) else int(g)
        dur = gate_duration_us(g, model, freq_khz)
        rows.append(TimescaleRow(name, periods, dur, limit, dur <= limit))
    return rows


def default_workers(threads: int | None) -> int:
    if threads is None or threads <= 0:
        return 1
    return min(threads, os.cpu_count() or 1)
