"""Non-interacting propagation of the full plane-wave state under a driven lattice.

The potential step of the split-operator scheme is diagonal in the sine basis
that diagonalizes the truncated nearest-neighbour coupling (a type-I discrete
sine transform, built with ``scipy.fft.dst``).  The kinetic step is diagonal
in q.  With these two exact exponentials each step is unitary to roundoff and
the scheme is second order in the step size.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.fft import dst
from scipy.optimize import minimize

from .holonomy import (
    GATES,
    Pulse,
    PulseSequence,
    concatenate,
    holonomic_lambda,
    two_level_evolution,
)
from .lattice import BandSolution, CouplingMap, LatticeModel, kinetic_diagonal, potential_matrix, solve_bands

log = logging.getLogger(__name__)

SAMPLES_PER_PERIOD = 64

_S = 1 / np.sqrt(2)
SIX_STATES = {
    "0": np.array([1, 0], dtype=complex),
    "1": np.array([0, 1], dtype=complex),
    "+": np.array([_S, _S], dtype=complex),
    "-": np.array([_S, -_S], dtype=complex),
    "+i": np.array([_S, 1j * _S], dtype=complex),
    "-i": np.array([_S, -1j * _S], dtype=complex),
}


# -- drive plans -------------------------------------------------------------


@dataclass(frozen=True)
class Modulated:
    """Depth v0 (1 + A sin(w t + phi)), t restarting at 0 for this segment."""

    omega: float
    amplitude: float
    phi: float
    periods: int = 1

    @property
    def duration(self) -> float:
        return self.periods * 2 * np.pi / self.omega

    def depth(self, t, v0):
        return v0 * (1 + self.amplitude * np.sin(self.omega * np.asarray(t) + self.phi))


@dataclass(frozen=True)
class Square:
    """Constant depth (E_r) held for ``duration`` (hbar/E_r)."""

    depth_er: float
    duration: float

    def __post_init__(self):
        if self.depth_er < 0 or self.duration < 0:
            raise ValueError("square segments need depth >= 0 and duration >= 0")

    def depth(self, t, v0):
        return np.full(np.shape(t), self.depth_er, dtype=float)


@dataclass(frozen=True)
class DrivePlan:
    """Contiguous lattice-depth segments applied around a static depth v0."""

    segments: tuple
    v0: float

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        for seg in self.segments:
            if isinstance(seg, Modulated) and not 0 <= seg.amplitude <= 1:
                # A in [0, 1] keeps the modulated depth non-negative
                raise ValueError(f"modulation amplitude {seg.amplitude} outside [0, 1]")

    @property
    def duration(self) -> float:
        return float(sum(s.duration for s in self.segments))

    @classmethod
    def from_sequence(cls, seq: PulseSequence, v0: float) -> "DrivePlan":
        return cls(tuple(Modulated(p.omega, p.amplitude, p.phi) for p in seq.pulses), v0)

    def depth(self, t: float) -> float:
        start = 0.0
        for seg in self.segments:
            if t < start + seg.duration:
                return float(seg.depth(t - start, self.v0))
            start += seg.duration
        return float(self.v0)

    def to_dict(self, model: LatticeModel) -> dict:
        segs = []
        for s in self.segments:
            if isinstance(s, Modulated):
                segs.append(
                    {
                        "kind": "modulated",
                        "omega_khz": float(model.energy_to_khz(s.omega)),
                        "amplitude": s.amplitude,
                        "phi_rad": s.phi,
                        "periods": s.periods,
                    }
                )
            else:
                segs.append(
                    {"kind": "square", "depth_er": s.depth_er, "duration_us": float(model.time_to_us(s.duration))}
                )
        return {"v0_er": self.v0, "segments": segs}

    @classmethod
    def from_dict(cls, data: dict, model: LatticeModel) -> "DrivePlan":
        segs = []
        for s in data["segments"]:
            kind = s.get("kind")
            if kind == "modulated":
                segs.append(
                    Modulated(
                        float(model.khz_to_energy(s["omega_khz"])),
                        float(s["amplitude"]),
                        float(s["phi_rad"]),
                        int(s.get("periods", 1)),
                    )
                )
            elif kind == "square":
                segs.append(Square(float(s["depth_er"]), float(model.us_to_time(s["duration_us"]))))
            else:
                raise ValueError(f"unknown segment kind {kind!r}")
        return cls(tuple(segs), float(data.get("v0_er", model.v0)))


# -- split-step engine -------------------------------------------------------


class SplitStepPropagator:
    """Second-order split-operator propagation in the plane-wave basis."""

    def __init__(self, q_max: int):
        self.q_max = q_max
        n = 2 * q_max + 1
        self.kinetic = kinetic_diagonal(q_max)
        # orthonormal DST-I matrix, symmetric and self-inverse
        self.sine = dst(np.eye(n), type=1, norm="ortho", axis=0)
        k = np.arange(1, n + 1)
        # eigenvalues of cos^2(Kx) at unit depth: 1/2 + (1/4) 2 cos(pi k / (n + 1))
        self.potential_eigs = 0.5 + 0.5 * np.cos(np.pi * k / (n + 1))

    def step(self, psi: np.ndarray, depth: float, dt: float) -> np.ndarray:
        """One step: e^{-i H_K dt/2} e^{-i V H_P dt} e^{-i H_K dt/2} psi."""
        half = np.exp(-0.5j * self.kinetic * dt)
        pot = np.exp(-1j * depth * self.potential_eigs * dt)
        psi = _bcast(half, psi) * psi
        psi = self.sine @ (_bcast(pot, psi) * (self.sine @ psi))
        return _bcast(half, psi) * psi

    def evolve(self, psi: np.ndarray, depths: np.ndarray, dt: float, sample_at=()):
        """Apply ``len(depths)`` steps with midpoint depths ``depths``.

        ``sample_at`` holds step counts n (1..len(depths)) after which the
        state is recorded.  Returns ``(psi_final, samples)``.
        """
        psi = np.asarray(psi, dtype=complex)
        depths = np.asarray(depths, dtype=float)
        if len(depths) == 0:
            return psi.copy(), np.empty((0,) + psi.shape, dtype=complex)
        half = np.exp(-0.5j * self.kinetic * dt)
        half_b = _bcast(half, psi)
        # consecutive half kicks merge into one full kick conjugated by the transform
        mixer = self.sine @ (np.exp(-1j * self.kinetic * dt)[:, None] * self.sine)
        phases = np.exp(-1j * dt * np.outer(depths, self.potential_eigs))
        if psi.ndim == 2:
            phases = phases[:, :, None]
        wanted = np.zeros(len(depths) + 1, dtype=bool)
        wanted[np.asarray(sample_at, dtype=int)] = True
        samples = []
        chi = self.sine @ (half_b * psi)
        for n in range(len(depths)):
            xi = phases[n] * chi
            if wanted[n + 1]:
                samples.append(half_b * (self.sine @ xi))
            chi = mixer @ xi
        final = half_b * (self.sine @ xi)
        shape = (len(samples),) + psi.shape
        return final, (np.array(samples) if samples else np.empty(shape, dtype=complex))


def _bcast(vec, psi):
    return vec if psi.ndim == 1 else vec[:, None]


@lru_cache(maxsize=8)
def propagator_for(q_max: int) -> SplitStepPropagator:
    return SplitStepPropagator(q_max)


def split_step(psi: np.ndarray, depth: float, dt: float) -> np.ndarray:
    """Single split-operator step at midpoint depth ``depth``."""
    if dt <= 0:
        raise ValueError("time step must be positive")
    q_max = (np.shape(psi)[0] - 1) // 2
    return propagator_for(q_max).step(np.asarray(psi, dtype=complex), depth, dt)


def _segment_grid(seg, dt: float):
    """Number of steps and actual step for a segment (step shrunk to fit exactly)."""
    if seg.duration == 0:
        return 0, 0.0
    n = max(1, int(np.ceil(seg.duration / dt - 1e-9)))
    return n, seg.duration / n


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (n_samples, dim) or (n_samples, dim, n_columns)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def propagate(psi0, plan: DrivePlan, dt: float, sample_every: int | None = None) -> Trajectory:
    """Propagate ``psi0`` (vector or matrix of column states) through ``plan``.

    Each segment is cut into equal steps no longer than ``dt``.  Samples are
    taken every ``sample_every`` steps within each segment and at every
    segment end; ``None`` keeps only the start and segment ends.
    """
    psi = np.asarray(psi0, dtype=complex)
    q_max = (psi.shape[0] - 1) // 2
    engine = propagator_for(q_max)
    times, states = [0.0], [psi.copy()]
    t0 = 0.0
    for seg in plan.segments:
        n, h = _segment_grid(seg, dt)
        if n == 0:
            continue
        mids = (np.arange(n) + 0.5) * h
        every = n if sample_every is None else sample_every
        idx = sorted(set(range(every, n + 1, every)) | {n})
        psi, samples = engine.evolve(psi, seg.depth(mids, plan.v0), h, idx)
        times.extend(t0 + np.array(idx) * h)
        states.extend(samples)
        t0 += seg.duration
    return Trajectory(np.array(times), np.array(states))


# -- band projections --------------------------------------------------------


@dataclass(frozen=True)
class BandProjection:
    amplitudes: np.ndarray
    labels: tuple

    @property
    def populations(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def population(self, label: str):
        return self.populations[..., self.labels.index(label)]

    @property
    def leakage(self):
        return 1.0 - self.population("s") - self.population("d")

    def qubit_amplitudes(self) -> np.ndarray:
        """(c_d, c_s) along the last axis."""
        i_d, i_s = self.labels.index("d"), self.labels.index("s")
        return self.amplitudes[..., [i_d, i_s]]


def project_bands(psi, bands: BandSolution) -> BandProjection:
    """c_nu = <phi_nu|psi> for every band; ``psi`` may carry leading sample axes."""
    amps = np.asarray(psi) @ bands.vectors.conj()
    return BandProjection(amps, bands.labels)


def qubit_density_block(psi, bands: BandSolution) -> np.ndarray:
    """Unnormalized 2x2 block of |psi><psi| on (d, s)."""
    c = project_bands(psi, bands).qubit_amplitudes()
    return np.outer(c, c.conj())


def _common_phase(plan: DrivePlan, bands: BandSolution, times: np.ndarray) -> np.ndarray:
    """Integrated mean s/d energy (static plus modulated) for the qubit frame."""
    P = potential_matrix(bands.model.q_max)
    vs, vd = bands.vector("s"), bands.vector("d")
    pbar = 0.5 * (vs @ P @ vs + vd @ P @ vd)
    ebar = 0.5 * (bands.energy("s") + bands.energy("d")) + (plan.v0 - bands.model.v0) * pbar
    out = ebar * np.asarray(times, dtype=float)
    start = 0.0
    for seg in plan.segments:
        dur = seg.duration
        local = np.clip(np.asarray(times) - start, 0.0, dur)
        if isinstance(seg, Modulated):
            out = out + plan.v0 * seg.amplitude * pbar * (
                np.cos(seg.phi) - np.cos(seg.omega * local + seg.phi)
            ) / seg.omega
        else:
            out = out + (seg.depth_er - plan.v0) * pbar * local
        start += dur
    return out


def multiorbital_propagator(plan: DrivePlan, dt: float, bands: BandSolution, sample_every: int | None = None):
    """Band-basis propagators U(t) with the common s/d phase removed.

    Returns ``(times, U)``; ``U[k][nu, mu] = <nu| U(t_k) |mu>`` over all bands,
    multiplied by exp(+i integral of the mean s/d energy) so that the (d, s)
    block is directly comparable with the two-level model.
    """
    traj = propagate(bands.vectors.astype(complex), plan, dt, sample_every)
    U = np.einsum("ia,tib->tab", bands.vectors.conj(), traj.states)
    U = U * np.exp(1j * _common_phase(plan, bands, traj.times))[:, None, None]
    return traj.times, U


def qubit_block(U: np.ndarray, bands: BandSolution) -> np.ndarray:
    idx = list(bands.qubit_indices)
    return U[..., idx, :][..., :, idx]


# -- leakage loss and elimination --------------------------------------------


def leakage_loss(U: np.ndarray, U_star: np.ndarray, dt: float, bands: BandSolution | None = None, qubit=(None, None)) -> float:
    """Riemann-sum loss between band-basis propagators and the ideal qubit ones.

    ``U`` has shape (n_t, N, N) over all bands; ``U_star`` (n_t, 2, 2) in the
    (d, s) basis.  Penalizes the qubit-block mismatch plus every amplitude
    flowing between the qubit subspace and the remaining bands.
    """
    U = np.asarray(U)
    U_star = np.asarray(U_star)
    if U.shape[0] != U_star.shape[0]:
        raise ValueError(f"sample grids differ: {U.shape[0]} vs {U_star.shape[0]}")
    if bands is not None:
        idx = list(bands.qubit_indices)
    else:
        idx = list(qubit)
    other = np.setdiff1d(np.arange(U.shape[1]), idx)
    block = U[:, idx][:, :, idx]
    mismatch = np.sum(np.abs(U_star - block) ** 2, axis=(1, 2))
    leak = np.sum(np.abs(U[:, idx][:, :, other]) ** 2, axis=(1, 2)) + np.sum(
        np.abs(U[:, other][:, :, idx]) ** 2, axis=(1, 2)
    )
    return float(np.sum(mismatch + leak) * dt)


@dataclass(frozen=True)
class EliminationConfig:
    steps_per_period: int = 256
    omega_window: float = 0.10
    per_pulse_maxfev: int = 200
    polish_maxfev: int = 300
    polish: bool = True
    endpoint_weight: float = 20.0
    xatol: float = 1e-6
    fatol: float = 1e-9


@dataclass
class EliminationResult:
    sequence: PulseSequence
    loss_before: float
    loss_after: float
    fidelity_before: float
    fidelity_after: float
    improved: bool
    warning: str = ""
    per_pulse: list = field(default_factory=list)


class _QubitColumns:
    """Fast propagation of the d and s columns through modulated periods."""

    def __init__(self, bands: BandSolution, v0: float):
        self.bands = bands
        self.v0 = v0
        self.engine = propagator_for(bands.model.q_max)
        self.cols = bands.qubit_basis().astype(complex)
        i_d, i_s = bands.qubit_indices
        P = potential_matrix(bands.model.q_max)
        vs, vd = bands.vector("s"), bands.vector("d")
        self.pbar = 0.5 * (vs @ P @ vs + vd @ P @ vd)
        self.ebar = 0.5 * (bands.energy("s") + bands.energy("d"))
        self.proj = bands.vectors.conj().T  # rows: <nu|
        self.idx = [i_d, i_s]

    def pulse_samples(self, psi, pulse: Pulse, steps: int, t_offset: float = 0.0):
        """Propagate ``psi`` through one period, sampled at bin midpoints.

        Returns ``(psi_end, band_amplitudes (n_bins, N, ncol), phase_offset_end)``.
        """
        period = 2 * np.pi / pulse.omega
        h = period / steps
        per_bin = steps // SAMPLES_PER_PERIOD
        mids = (np.arange(steps) + 0.5) * h
        depths = self.v0 * (1 + pulse.amplitude * np.sin(pulse.omega * mids + pulse.phi))
        sample_at = per_bin // 2 + per_bin * np.arange(SAMPLES_PER_PERIOD)
        psi_end, samples = self.engine.evolve(psi, depths, h, sample_at)
        t_local = sample_at * h
        phase = t_offset + self.ebar * t_local + self.v0 * pulse.amplitude * self.pbar * (
            np.cos(pulse.phi) - np.cos(pulse.omega * t_local + pulse.phi)
        ) / pulse.omega
        amps = np.einsum("ai,tib->tab", self.proj, samples) * np.exp(1j * phase)[:, None, None]
        return psi_end, amps, t_offset + self.ebar * period

    def loss_from_amps(self, amps: np.ndarray, U_star: np.ndarray, dt_bin: float) -> float:
        """Loss using only propagated qubit columns; rows follow from unitarity.

        ``amps[t]`` holds the band amplitudes of the propagated d and s columns.
        """
        block = amps[:, self.idx, :]
        mismatch = np.sum(np.abs(U_star - block) ** 2, axis=(1, 2))
        col_norm = np.sum(np.abs(block) ** 2, axis=1)  # per input column
        leak_out = np.sum(1.0 - col_norm, axis=1)
        # row n of the full U: sum over all columns of |U_nm|^2 = 1
        leak_in = np.sum(1.0 - np.sum(np.abs(block) ** 2, axis=2), axis=1)
        return float(np.sum(mismatch + leak_out + leak_in) * dt_bin)

    def endpoint_from_state(self, psi_end, phase_end: float, U_end: np.ndarray) -> float:
        """Same integrand evaluated once, at the end of a period."""
        block = (self.proj[self.idx] @ psi_end) * np.exp(1j * phase_end)
        mismatch = np.sum(np.abs(U_end - block) ** 2)
        col_norm = np.sum(np.abs(block) ** 2, axis=0)
        row_norm = np.sum(np.abs(block) ** 2, axis=1)
        return float(mismatch + np.sum(1.0 - col_norm) + np.sum(1.0 - row_norm))


def _ideal_period_samples(delta: float, pulse_ideal: Pulse) -> np.ndarray:
    lam = holonomic_lambda(delta, pulse_ideal.omega)
    period = pulse_ideal.period
    t = (np.arange(SAMPLES_PER_PERIOD) + 0.5) * period / SAMPLES_PER_PERIOD
    return two_level_evolution(delta, lam, pulse_ideal.omega, pulse_ideal.phi, t)


def _ideal_period_end(delta: float, pulse_ideal: Pulse) -> np.ndarray:
    lam = holonomic_lambda(delta, pulse_ideal.omega)
    return two_level_evolution(delta, lam, pulse_ideal.omega, pulse_ideal.phi, [pulse_ideal.period])[0]


def pulse_loss(
    pulse: Pulse, ideal: Pulse, delta: float, cols: _QubitColumns, steps: int, endpoint_weight: float = 0.0
) -> float:
    """Leakage loss of one modulation period against its ideal evolution.

    With ``endpoint_weight > 0`` the mismatch at the end of the period is
    added with that weight.
    """
    U_star = _ideal_period_samples(delta, ideal)
    psi_end, amps, offset = cols.pulse_samples(cols.cols, pulse, steps)
    loss = cols.loss_from_amps(amps, U_star, pulse.period / SAMPLES_PER_PERIOD)
    if endpoint_weight:
        loss += endpoint_weight * cols.endpoint_from_state(psi_end, offset, _ideal_period_end(delta, ideal))
    return loss


def sequence_loss(
    pulses, ideal: PulseSequence, cols: _QubitColumns, steps: int, endpoint_weight: float = 0.0
) -> float:
    """Loss over the whole sequence with cumulative propagators.

    With ``endpoint_weight > 0`` the mismatch of the full gate at the end of
    the sequence is added with that weight.
    """
    delta = ideal.delta
    psi = cols.cols
    U_prev = np.eye(2, dtype=complex)
    total = 0.0
    offset = 0.0
    for p, p0 in zip(pulses, ideal.pulses):
        U_star = _ideal_period_samples(delta, p0) @ U_prev
        psi, amps, offset = cols.pulse_samples(psi, p, steps, offset)
        total += cols.loss_from_amps(amps, U_star, p.period / SAMPLES_PER_PERIOD)
        U_prev = _ideal_period_end(delta, p0) @ U_prev
    if endpoint_weight:
        total += endpoint_weight * cols.endpoint_from_state(psi, offset, U_prev)
    return total


def _clip_pulse(x, ideal: Pulse, window: float) -> Pulse:
    omega = float(np.clip(x[0], ideal.omega * (1 - window), ideal.omega * (1 + window)))
    return Pulse(omega, float(np.clip(x[1], 0.0, 1.0)), float(np.mod(x[2], 2 * np.pi)))


def six_state_fidelities(seq_or_plan, bands: BandSolution, target, dt: float, v0: float | None = None) -> np.ndarray:
    """Final-state fidelities |<U_target psi|c>|^2 over the six cardinal states.

    ``c`` are the (d, s) band amplitudes of the propagated state, so population
    left outside the qubit counts as infidelity.
    """
    v0 = bands.model.v0 if v0 is None else v0
    plan = seq_or_plan if isinstance(seq_or_plan, DrivePlan) else DrivePlan.from_sequence(seq_or_plan, v0)
    inputs = np.column_stack(list(SIX_STATES.values()))
    psi0 = bands.qubit_basis() @ inputs
    final = propagate(psi0, plan, dt).final
    c = project_bands(final.T, bands).qubit_amplitudes().T  # (2, 6)
    expected = np.asarray(target) @ inputs
    return np.abs(np.sum(expected.conj() * c, axis=0)) ** 2


def default_dt(seq: PulseSequence | DrivePlan, per_period: int = 1024) -> float:
    """T_min / per_period for the fastest modulation in the drive."""
    if isinstance(seq, PulseSequence):
        periods = [p.period for p in seq.pulses]
    else:
        periods = [2 * np.pi / s.omega for s in seq.segments if isinstance(s, Modulated)]
    return min(periods) / per_period if periods else 1e-3


def eliminate_leakage(
    ideal_seq: PulseSequence,
    bands: BandSolution,
    target=None,
    config: EliminationConfig = EliminationConfig(),
    rng_seed: int = 0,
    v0: float | None = None,
) -> EliminationResult:
    """Re-optimize each period's (w, A, phi) to follow the ideal holonomic evolution.

    Pulses are optimized one at a time against their own ideal period, then
    jointly against the cumulative ideal evolution.  Starting simplices are
    jittered with ``rng_seed``; identical inputs give identical outputs.
    """
    v0 = bands.model.v0 if v0 is None else v0
    target = concatenate(ideal_seq) if target is None else np.asarray(target)
    if config.steps_per_period % (2 * SAMPLES_PER_PERIOD):
        raise ValueError("steps_per_period must be a multiple of 128")
    cols = _QubitColumns(bands, v0)
    steps = config.steps_per_period
    rng = np.random.default_rng(rng_seed)
    delta = ideal_seq.delta
    window = config.omega_window
    weight = config.endpoint_weight

    def fid(seq):
        return float(np.mean(six_state_fidelities(seq, bands, target, default_dt(seq), v0)))

    loss_before = sequence_loss(ideal_seq.pulses, ideal_seq, cols, steps, weight)
    fid_before = fid(ideal_seq)
    if all(p.amplitude == 0 for p in ideal_seq.pulses):
        # an undriven sequence has nothing to re-optimize
        return EliminationResult(ideal_seq, loss_before, loss_before, fid_before, fid_before, False)

    pulses = []
    per_pulse = []
    for ideal in ideal_seq.pulses:
        if ideal.amplitude == 0:
            pulses.append(ideal)
            per_pulse.append((0.0, 0.0))
            continue

        def objective(x, ideal=ideal):
            return pulse_loss(_clip_pulse(x, ideal, window), ideal, delta, cols, steps, weight)

        x0 = np.array([ideal.omega, ideal.amplitude, ideal.phi])
        jitter = 1 + 0.1 * rng.uniform(-1, 1, size=3)
        scale = np.array([0.002 * ideal.omega, 0.05, 0.05]) * jitter
        simplex = np.vstack([x0, x0 + np.diag(scale)])
        l0 = objective(x0)
        res = minimize(
            objective,
            x0,
            method="Nelder-Mead",
            options=dict(initial_simplex=simplex, maxfev=config.per_pulse_maxfev, xatol=config.xatol, fatol=config.fatol),
        )
        best = _clip_pulse(res.x, ideal, window) if res.fun < l0 else ideal
        pulses.append(best)
        per_pulse.append((l0, min(res.fun, l0)))

    if config.polish and any(p.amplitude > 0 for p in ideal_seq.pulses):
        def joint(x):
            ps = [_clip_pulse(x[3 * j : 3 * j + 3], ideal_seq.pulses[j], window) for j in range(len(pulses))]
            return sequence_loss(ps, ideal_seq, cols, steps, weight)

        x0 = np.concatenate([[p.omega, p.amplitude, p.phi] for p in pulses])
        scale = np.concatenate([[0.001 * p.omega, 0.02, 0.02] for p in ideal_seq.pulses])
        scale = scale * (1 + 0.1 * rng.uniform(-1, 1, size=len(scale)))
        simplex = np.vstack([x0, x0 + np.diag(scale)])
        l0 = joint(x0)
        res = minimize(
            joint,
            x0,
            method="Nelder-Mead",
            options=dict(initial_simplex=simplex, maxfev=config.polish_maxfev, xatol=config.xatol, fatol=config.fatol),
        )
        if res.fun < l0:
            pulses = [_clip_pulse(res.x[3 * j : 3 * j + 3], ideal_seq.pulses[j], window) for j in range(len(pulses))]

    new_seq = replace(ideal_seq, pulses=tuple(pulses), meta={**ideal_seq.meta, "leakage_eliminated": True})
    loss_after = sequence_loss(new_seq.pulses, ideal_seq, cols, steps, weight)
    fid_after = fid(new_seq)
    improved = loss_after < loss_before and fid_after >= fid_before
    warning = ""
    if not improved:
        warning = "leakage elimination found no improvement; returning the input sequence"
        log.warning(warning)
        new_seq, loss_after, fid_after = ideal_seq, loss_before, fid_before
    return EliminationResult(new_seq, loss_before, loss_after, fid_before, fid_after, improved, warning, per_pulse)
