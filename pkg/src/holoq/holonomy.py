"""Ideal two-level holonomic control of the s/d orbital qubit.

Qubit basis: |0> = d (upper level), |1> = s.  The control Hamiltonian is

    H(t) = (Delta/2) sz + (lambda/2) (-cos(w t + phi) sy + sin(w t + phi) sx)

and one modulation period T = 2 pi / w under lambda^2 = Delta (w - Delta)
produces a purely geometric rotation parametrized by cos^2(beta) = Delta / w.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from .lattice import CouplingMap, LatticeModel

log = logging.getLogger(__name__)

I2 = np.eye(2, dtype=complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = (I2, SX, SY, SZ)

GATES = {
    "id": I2,
    "x": SX,
    "y": SY,
    "z": SZ,
    "h": (SX + SZ) / np.sqrt(2),
    # textbook pi/8 gate diag(1, e^{i pi/4})
    "t": np.diag([1, np.exp(1j * np.pi / 4)]),
    # z rotation by pi/8, the gate realized by the published pi/8 pulse tables
    "t_table": np.diag([1, np.exp(1j * np.pi / 8)]),
}


class UnreachableBetaError(ValueError):
    """Holonomic condition needs a modulation amplitude above 1."""

    def __init__(self, amplitude: float, omega_max: float):
        self.amplitude = amplitude
        self.omega_max = omega_max
        super().__init__(
            f"holonomic amplitude {amplitude:.4f} > 1; the largest feasible "
            f"modulation frequency is {omega_max:.6f} E_r/hbar"
        )


class SynthesisError(RuntimeError):
    def __init__(self, message: str, best_fidelity: float, best=None):
        self.best_fidelity = best_fidelity
        self.best = best
        super().__init__(f"{message} (best fidelity {best_fidelity:.8f}); increase M_max")


@dataclass(frozen=True)
class Pulse:
    """One modulation period: frequency (E_r/hbar), amplitude A and phase phi."""

    omega: float
    amplitude: float
    phi: float

    def __post_init__(self):
        if self.omega <= 0:
            raise ValueError("modulation frequency must be positive")
        if not 0 <= self.amplitude <= 1:
            raise ValueError(f"amplitude must lie in [0, 1], got {self.amplitude}")

    @property
    def period(self) -> float:
        return 2 * np.pi / self.omega

    def beta(self, delta: float) -> float:
        return beta_for_omega(delta, self.omega)

    def scaled(self, factor: float) -> "Pulse":
        """Copy with amplitude scaled (DC amplitude offset); clipped to [0, 1]."""
        return replace(self, amplitude=float(np.clip(self.amplitude * factor, 0.0, 1.0)))


@dataclass(frozen=True)
class PulseSequence:
    pulses: tuple
    delta: float
    target: str = "custom"
    fidelity_ideal: float = float("nan")
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if len(self.pulses) < 1:
            raise ValueError("a pulse sequence needs at least one pulse")
        object.__setattr__(self, "pulses", tuple(self.pulses))

    def __len__(self):
        return len(self.pulses)

    def betas(self) -> np.ndarray:
        return np.array([p.beta(self.delta) for p in self.pulses])

    def phis(self) -> np.ndarray:
        return np.array([p.phi for p in self.pulses])

    @property
    def duration(self) -> float:
        return float(sum(p.period for p in self.pulses))

    def to_dict(self, model: LatticeModel) -> dict:
        return {
            "delta_er": self.delta,
            "pulses": [
                {
                    "omega_khz": float(model.energy_to_khz(p.omega)),
                    "amplitude": p.amplitude,
                    "phi_rad": p.phi,
                }
                for p in self.pulses
            ],
            "fidelity_ideal": self.fidelity_ideal,
            "target": self.target,
            "recoil_frequency_hz": model.recoil_frequency,
            **({"meta": self.meta} if self.meta else {}),
        }

    @classmethod
    def from_dict(cls, data: dict, model: LatticeModel) -> "PulseSequence":
        pulses = [
            Pulse(float(model.khz_to_energy(p["omega_khz"])), float(p["amplitude"]), float(p["phi_rad"]))
            for p in data["pulses"]
        ]
        return cls(
            tuple(pulses),
            float(data["delta_er"]),
            data.get("target", "custom"),
            float(data.get("fidelity_ideal", float("nan"))),
            dict(data.get("meta", {})),
        )


def beta_for_omega(delta: float, omega: float) -> float:
    if omega < delta:
        raise ValueError(f"modulation frequency {omega} below the gap {delta}")
    return float(np.arccos(np.sqrt(delta / omega)))


def omega_for_beta(delta: float, beta: float) -> float:
    return float(delta / np.cos(beta) ** 2)


def holonomic_lambda(delta: float, omega: float) -> float:
    """Coupling that cancels the dynamical phase: lambda^2 + Delta (Delta - w) = 0."""
    if omega < delta:
        raise ValueError(f"modulation frequency {omega} below the gap {delta}")
    return float(np.sqrt(delta * (omega - delta)))


def holonomic_amplitude(delta: float, omega: float, cmap: CouplingMap) -> float:
    """Modulation amplitude A realizing the holonomic condition at frequency ``omega``."""
    lam = holonomic_lambda(delta, omega)
    if lam == 0:
        return 0.0
    if cmap.lambda_per_unit_A <= 0:
        raise UnreachableBetaError(float("inf"), delta)
    amp = lam / cmap.lambda_per_unit_A
    if amp > 1 + 1e-12:
        raise UnreachableBetaError(amp, delta + cmap.lambda_per_unit_A**2 / delta)
    return float(min(amp, 1.0))


def pulse_for_beta(delta: float, beta: float, phi: float, cmap: CouplingMap) -> Pulse:
    omega = omega_for_beta(delta, beta)
    return Pulse(omega, holonomic_amplitude(delta, omega, cmap), float(np.mod(phi, 2 * np.pi)))


def control_hamiltonian(delta, lam, omega, phi, t) -> np.ndarray:
    """H(t) as a 2x2 matrix (or stack of matrices for array ``t``)."""
    theta = omega * np.asarray(t, dtype=float) + phi
    c, s = np.cos(theta), np.sin(theta)
    h = 0.5 * delta * SZ + 0.5 * lam * (
        -c[..., None, None] * SY + s[..., None, None] * SX
    )
    return h


def invariant(delta, lam, omega, phi, t) -> np.ndarray:
    """Lewis-Riesenfeld dynamical invariant of ``control_hamiltonian``."""
    theta = omega * np.asarray(t, dtype=float) + phi
    return (delta - omega) * SZ + lam * (
        -np.cos(theta)[..., None, None] * SY + np.sin(theta)[..., None, None] * SX
    )


def _su2_exp(nx, ny, nz, angle):
    """exp(i angle (n . sigma)) for unit n."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c + 1j * s * nz, 1j * s * (nx - 1j * ny)], [1j * s * (nx + 1j * ny), c - 1j * s * nz]])


def single_period_unitary(beta: float, phi: float) -> np.ndarray:
    """U = -exp(i pi sin(b) [-sin(phi) cos(b) sx + cos(phi) cos(b) sy + sin(b) sz])."""
    cb, sb = np.cos(beta), np.sin(beta)
    return -_su2_exp(-np.sin(phi) * cb, np.cos(phi) * cb, sb, np.pi * sb)


def two_level_evolution(delta, lam, omega, phi, times) -> np.ndarray:
    """Exact U(t) of ``control_hamiltonian`` via the co-rotating frame.

    U(t) = exp(-i w t sz / 2) exp(-i H_rot t), H_rot = ((Delta - w) sz + lambda (sin phi sx - cos phi sy)) / 2.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    hx, hy, hz = 0.5 * lam * np.sin(phi), -0.5 * lam * np.cos(phi), 0.5 * (delta - omega)
    norm = np.sqrt(hx**2 + hy**2 + hz**2)
    out = np.empty((len(times), 2, 2), dtype=complex)
    for k, t in enumerate(times):
        if norm == 0:
            rot = I2
        else:
            rot = _su2_exp(hx / norm, hy / norm, hz / norm, -norm * t)
        frame = np.diag([np.exp(-0.5j * omega * t), np.exp(0.5j * omega * t)])
        out[k] = frame @ rot
    return out


def _step_exponentials(h: np.ndarray, dt: float) -> np.ndarray:
    """exp(-i h dt) for a stack of traceless Hermitian 2x2 matrices."""
    hx = h[:, 0, 1].real
    hy = h[:, 1, 0].imag
    hz = h[:, 0, 0].real
    norm = np.sqrt(hx**2 + hy**2 + hz**2)
    safe = np.where(norm > 0, norm, 1.0)
    c, s = np.cos(norm * dt), np.sin(norm * dt) / safe
    out = np.empty_like(h)
    out[:, 0, 0] = c - 1j * s * hz
    out[:, 1, 1] = c + 1j * s * hz
    out[:, 0, 1] = -1j * s * (hx - 1j * hy)
    out[:, 1, 0] = -1j * s * (hx + 1j * hy)
    return out


def integrate_two_level(delta, lam, omega, phi, t_span, n_steps):
    """Time-ordered propagator samples from midpoint piecewise exponentials.

    Returns ``(times, U)`` with ``U[k]`` the propagator from ``t_span[0]`` to
    ``times[k]``; ``times[0] = t_span[0]`` and ``U[0] = I``.  Global error is
    second order in the step.
    """
    t0, t1 = t_span
    if n_steps < 1:
        raise ValueError("n_steps must be positive")
    dt = (t1 - t0) / n_steps
    mids = t0 + (np.arange(n_steps) + 0.5) * dt
    steps = _step_exponentials(control_hamiltonian(delta, lam, omega, phi, mids), dt)
    # inclusive prefix product, later steps multiply from the left
    prod = steps.copy()
    k = 1
    while k < n_steps:
        prod[k:] = prod[k:] @ prod[:-k]
        k *= 2
    times = t0 + np.arange(n_steps + 1) * dt
    return times, np.concatenate([I2[None], prod])


def dynamical_phases(delta, lam, omega, phi, n_steps: int = 4096) -> np.ndarray:
    """gamma^d_n = -int_0^T <psi_n|H|psi_n> dt for both invariant eigenstates.

    The states come from the closed-form evolution; the integrand is smooth
    and periodic, so the trapezoid rule on ``n_steps`` intervals converges
    geometrically.
    """
    period = 2 * np.pi / omega
    times = np.linspace(0.0, period, n_steps + 1)
    U = two_level_evolution(delta, lam, omega, phi, times)
    _, vecs = np.linalg.eigh(invariant(delta, lam, omega, phi, 0.0))
    H = control_hamiltonian(delta, lam, omega, phi, times)
    phases = []
    for n in range(2):
        psi = U @ vecs[:, n]
        energy = np.einsum("ti,tij,tj->t", psi.conj(), H, psi).real
        phases.append(-np.trapezoid(energy, times))
    return np.array(phases)


def concatenate(seq: PulseSequence | list, delta: float | None = None) -> np.ndarray:
    """U = U_M ... U_1 with pulse 1 applied first.

    ``seq`` is a PulseSequence (beta from each pulse frequency) or a list of
    ``(beta, phi)`` pairs.
    """
    if isinstance(seq, PulseSequence):
        delta = seq.delta if delta is None else delta
        pairs = [(p.beta(delta), p.phi) for p in seq.pulses]
    else:
        pairs = list(seq)
    U = I2.copy()
    for beta, phi in pairs:
        U = single_period_unitary(beta, phi) @ U
    return U


def gate_fidelity(U, target) -> float:
    """|tr(U^dagger U_target)| / 2."""
    return float(min(1.0, abs(np.trace(np.conj(U).T @ target)) / 2))


def _quat(beta, phi):
    # single_period_unitary as a quaternion (w, x, y, z) meaning w I + i(x sx + y sy + z sz), times -1
    cb, sb = np.cos(beta), np.sin(beta)
    a = np.pi * sb
    s = np.sin(a)
    return np.cos(a), -s * np.sin(phi) * cb, s * np.cos(phi) * cb, s * sb


def _fidelity_from_params(params, target_q, beta_max):
    m = len(params) // 2
    w, x, y, z = 1.0, 0.0, 0.0, 0.0
    for j in range(m):
        beta = beta_max * np.sin(params[2 * j]) ** 2
        bw, bx, by, bz = _quat(beta, params[2 * j + 1])
        # (bw + i b.s)(w + i v.s) = (bw w - b.v) + i(bw v + w b - b x v)
        w, x, y, z = (
            bw * w - bx * x - by * y - bz * z,
            bw * x + w * bx - (by * z - bz * y),
            bw * y + w * by - (bz * x - bx * z),
            bw * z + w * bz - (bx * y - by * x),
        )
    tw, tx, ty, tz = target_q
    # tr(U^dag T)/2 for U = w + i v.s, T = tw + i t.s (up to the shared (-1)^M sign)
    return abs(w * tw + x * tx + y * ty + z * tz)


def _target_quaternion(target) -> tuple:
    T = np.asarray(target, dtype=complex)
    det = np.linalg.det(T)
    if not np.allclose(T.conj().T @ T, I2, atol=1e-9):
        raise ValueError("target is not unitary")
    T = T / np.sqrt(det)
    return (T[0, 0] + T[1, 1]).real / 2, (T[0, 1] + T[1, 0]).imag / 2, (T[0, 1] - T[1, 0]).real / 2, (T[0, 0] - T[1, 1]).imag / 2


@dataclass(frozen=True)
class SynthesisConfig:
    starts: int = 32
    xatol: float = 1e-12
    fatol: float = 1e-12
    maxiter: int = 20000
    target_fidelity: float = 0.99999
    threshold: float = 0.999
    # pulse angles are kept small so that the lattice stays close to the
    # two-level picture; None means the A <= 1 limit of the coupling map
    beta_max: float | None = 0.2


def synthesize_sequence(
    target,
    delta: float,
    cmap: CouplingMap,
    m_max: int = 5,
    config: SynthesisConfig = SynthesisConfig(),
    rng_seed: int = 0,
    name: str = "custom",
) -> PulseSequence:
    """Search (beta_j, phi_j) sequences maximizing the ideal gate fidelity.

    M grows from 1; the first M reaching ``config.target_fidelity`` wins,
    otherwise the best sequence found overall is returned if it beats
    ``config.threshold``.  Each M uses ``config.starts`` seeded Nelder-Mead
    runs; ties go to the lowest start index.
    """
    target_q = _target_quaternion(target)
    beta_max = cmap.beta_max if config.beta_max is None else min(config.beta_max, cmap.beta_max)
    rng = np.random.default_rng(rng_seed)
    best = None
    for m in range(1, m_max + 1):
        starts = rng.uniform(0, 2 * np.pi, size=(config.starts, 2 * m))
        best_m = None
        for x0 in starts:
            res = minimize(
                lambda p: 1.0 - _fidelity_from_params(p, target_q, beta_max),
                x0,
                method="Nelder-Mead",
                options=dict(xatol=config.xatol, fatol=config.fatol, maxiter=config.maxiter, maxfev=config.maxiter),
            )
            fid = 1.0 - res.fun
            if best_m is None or fid > best_m[0]:
                best_m = (fid, res.x)
        log.debug("M=%d best ideal fidelity %.12f", m, best_m[0])
        if best is None or best_m[0] > best[0]:
            best = best_m
        if best_m[0] >= config.target_fidelity:
            break
    fid, params = best
    if fid < config.threshold:
        raise SynthesisError(f"no sequence with M <= {m_max} reaches {config.threshold}", fid)
    pairs = [
        (beta_max * np.sin(params[2 * j]) ** 2, float(np.mod(params[2 * j + 1], 2 * np.pi)))
        for j in range(len(params) // 2)
    ]
    pulses = tuple(pulse_for_beta(delta, b, p, cmap) for b, p in pairs)
    seq = PulseSequence(pulses, delta, name, 0.0)
    return replace(seq, fidelity_ideal=gate_fidelity(concatenate(seq), target))


def gate_matrix(name: str) -> np.ndarray:
    try:
        return GATES[name]
    except KeyError:
        raise KeyError(f"unknown gate {name!r}; known: {sorted(GATES)}") from None
