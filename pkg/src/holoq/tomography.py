"""Time-of-flight state tomography, process tomography and Ramsey fits.

Qubit density matrices live in the {|d>, |s>} basis.  After release from the
lattice the s and d orbitals interfere in the momentum peaks at p = 2 l hbar K;
the peak amplitude of band nu is its plane-wave coefficient at q = l.  Holding
the state in the static lattice for a time t before release rotates the
coherence as rho_ds -> rho_ds exp(-i Delta t), so the peak weights versus hold
time determine the full density matrix.
"""

from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import curve_fit

from .holonomy import PAULIS
from .lattice import BandSolution
from .multiorbital import SIX_STATES

log = logging.getLogger(__name__)

PEAK_ORDERS = (0, 1, -1)
PEAK_COLUMNS = ("w_0", "w_plus", "w_minus")
PROJECTION_WARN = 0.05


class TomographyError(RuntimeError):
    """Raised when a reconstruction is ill-posed."""


class ConditioningError(TomographyError):
    """The time grid does not determine the density matrix."""


# ---------------------------------------------------------------------------
# density matrices
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QubitDensityMatrix:
    """Unit-trace PSD 2x2 density matrix in the {|d>, |s>} basis.

    Stored as the real populations and the complex coherence, so Hermiticity
    holds by construction.
    """

    rho_dd: float
    rho_ss: float
    rho_ds: complex

    def __post_init__(self):
        tr = self.rho_dd + self.rho_ss
        if abs(tr - 1) > 1e-10:
            raise ValueError(f"density matrix trace {tr} != 1")
        if self.eigenvalues().min() < -1e-10:
            raise ValueError(f"density matrix is not PSD: eigenvalues {self.eigenvalues()}")

    @property
    def matrix(self) -> np.ndarray:
        c = complex(self.rho_ds)
        return np.array([[self.rho_dd, c], [c.conjugate(), self.rho_ss]], dtype=complex)

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)

    @property
    def bloch(self) -> np.ndarray:
        c = complex(self.rho_ds)
        return np.array([2 * c.real, -2 * c.imag, self.rho_dd - self.rho_ss])

    @classmethod
    def from_matrix(cls, rho) -> "QubitDensityMatrix":
        rho = np.asarray(rho, dtype=complex)
        return cls(float(rho[0, 0].real), float(rho[1, 1].real), complex(0.5 * (rho[0, 1] + np.conj(rho[1, 0]))))

    @classmethod
    def from_state(cls, amplitudes) -> "QubitDensityMatrix":
        """Pure state from (c_d, c_s) amplitudes; the norm is divided out."""
        c = np.asarray(amplitudes, dtype=complex)
        norm = np.vdot(c, c).real
        if norm == 0:
            raise ValueError("zero state vector")
        return cls.from_matrix(np.outer(c, c.conj()) / norm)


def nearest_density_matrix(rho) -> tuple[np.ndarray, float]:
    """Closest unit-trace PSD matrix by eigenvalue clipping.

    Returns the projected matrix and the Frobenius distance moved.
    """
    rho = np.asarray(rho, dtype=complex)
    herm = 0.5 * (rho + rho.conj().T)
    vals, vecs = np.linalg.eigh(herm)
    vals = np.clip(vals, 0.0, None)
    if vals.sum() <= 0:
        vals = np.full_like(vals, 1.0 / len(vals))
    vals = vals / vals.sum()
    out = (vecs * vals) @ vecs.conj().T
    return out, float(np.linalg.norm(out - rho))


def state_fidelity(rho_a, rho_b) -> float:
    """Normalized overlap |Tr(a b^dagger)| / sqrt(Tr(a a^dagger) Tr(b b^dagger))."""
    a = rho_a.matrix if isinstance(rho_a, QubitDensityMatrix) else np.asarray(rho_a, dtype=complex)
    b = rho_b.matrix if isinstance(rho_b, QubitDensityMatrix) else np.asarray(rho_b, dtype=complex)
    num = abs(np.vdot(b, a))
    den = np.sqrt(np.vdot(a, a).real * np.vdot(b, b).real)
    return float(min(1.0, num / den))


def six_state_inputs() -> dict:
    """Density matrices of the six cardinal states, keyed like ``SIX_STATES``."""
    return {k: QubitDensityMatrix.from_state(v) for k, v in SIX_STATES.items()}


# ---------------------------------------------------------------------------
# time-of-flight state tomography
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PeakWeights:
    """Momentum-peak populations as fractions of the total atom number.

    ``weights[:, j]`` is the peak at q = PEAK_ORDERS[j]; ``residual`` is the
    population in the |l| >= 2 peaks.
    """

    times: np.ndarray
    weights: np.ndarray
    residual: np.ndarray

    def normalized(self) -> np.ndarray:
        """Weights renormalized over the three retained peaks."""
        return self.weights / self.weights.sum(axis=1, keepdims=True)


def _peak_amplitudes(bands: BandSolution):
    q0 = bands.model.q_max
    rows = [q0 + order for order in PEAK_ORDERS]
    d = bands.vector("d")
    s = bands.vector("s")
    return d[rows], s[rows], d, s


def momentum_peaks(rho, bands: BandSolution, t_evo, delta: float | None = None) -> PeakWeights:
    """Peak weights at p = 0, +-2 hbar K after holding for ``t_evo`` (hbar/E_r).

    n_l(t) = rho_dd d_l^2 + rho_ss s_l^2 + 2 Re(rho_ds e^{-i Delta t}) d_l s_l,
    with d_l, s_l the real plane-wave coefficients of the two bands.
    """
    rho = rho if isinstance(rho, QubitDensityMatrix) else QubitDensityMatrix.from_matrix(rho)
    delta = bands.gap if delta is None else delta
    t = np.atleast_1d(np.asarray(t_evo, dtype=float))
    d3, s3, d_all, s_all = _peak_amplitudes(bands)
    coh = rho.rho_ds * np.exp(-1j * delta * t)
    w = rho.rho_dd * d3**2 + rho.rho_ss * s3**2 + 2 * np.outer(coh.real, d3 * s3)
    total = rho.rho_dd * np.sum(d_all**2) + rho.rho_ss * np.sum(s_all**2) + 2 * coh.real * np.dot(d_all, s_all)
    w = np.atleast_2d(w)
    return PeakWeights(t, w, total - w.sum(axis=1))


@dataclass(frozen=True)
class TofDataset:
    """Peak weights versus hold time, normalized over the retained peaks.

    ``weights[:, j]`` follows ``PEAK_COLUMNS``; rows sum to 1.
    """

    t_evo_us: np.ndarray
    weights: np.ndarray
    noise_sigma: float = 0.0

    def __post_init__(self):
        w = np.asarray(self.weights)
        if w.ndim != 2 or w.shape != (len(self.t_evo_us), len(PEAK_ORDERS)):
            raise ValueError("weights must have shape (n_times, 3)")
        if np.any(w < 0) or np.any(w > 1):
            raise ValueError("peak weights must lie in [0, 1]")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("t_evo_us",) + PEAK_COLUMNS)
            for t, row in zip(self.t_evo_us, self.weights):
                writer.writerow([repr(float(t))] + [repr(float(x)) for x in row])

    @classmethod
    def from_csv(cls, path, noise_sigma: float = 0.0) -> "TofDataset":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = {"t_evo_us", *PEAK_COLUMNS} - set(reader.fieldnames or ())
            if missing:
                raise ValueError(f"dataset is missing columns {sorted(missing)}")
            rows = [[float(r["t_evo_us"])] + [float(r[c]) for c in PEAK_COLUMNS] for r in reader]
        arr = np.array(rows, dtype=float).reshape(-1, 4)
        return cls(arr[:, 0], arr[:, 1:], noise_sigma)


def default_tof_times(bands: BandSolution, n: int = 16, delta: float | None = None) -> np.ndarray:
    """``n`` hold times (us) evenly covering one coherence period 2 pi / Delta."""
    delta = bands.gap if delta is None else delta
    period = 2 * np.pi / delta
    return bands.model.time_to_us(np.arange(n) * period / n)


def simulate_tof_dataset(
    rho,
    bands: BandSolution,
    delta: float | None = None,
    times_us=None,
    noise_seed: int | None = 0,
    noise_sigma: float = 0.0,
) -> TofDataset:
    """Synthetic peak weights with optional multiplicative Gaussian noise."""
    times_us = default_tof_times(bands, delta=delta) if times_us is None else np.asarray(times_us, dtype=float)
    peaks = momentum_peaks(rho, bands, bands.model.us_to_time(times_us), delta)
    w = peaks.weights
    if noise_sigma > 0:
        rng = np.random.default_rng(noise_seed)
        w = np.clip(w * (1 + noise_sigma * rng.standard_normal(w.shape)), 0.0, None)
    w = w / w.sum(axis=1, keepdims=True)
    return TofDataset(np.array(times_us), w, noise_sigma)


@dataclass(frozen=True)
class StateReconstruction:
    rho: QubitDensityMatrix
    residual: float
    projection_distance: float
    condition_number: float


def _design(bands: BandSolution, times, delta: float):
    d3, s3, _, _ = _peak_amplitudes(bands)
    t = np.asarray(times, dtype=float)
    # n_l = s_l^2 + x0 (d_l^2 - s_l^2) + 2 d_l s_l (x1 cos + x2 sin)
    const = np.broadcast_to(s3**2, (len(t), 3))
    g0 = np.broadcast_to(d3**2 - s3**2, (len(t), 3))
    g1 = np.outer(np.cos(delta * t), 2 * d3 * s3)
    g2 = np.outer(np.sin(delta * t), 2 * d3 * s3)
    return const, np.stack([g0, g1, g2], axis=-1)


def reconstruct_state(dataset: TofDataset, bands: BandSolution, delta: float | None = None) -> StateReconstruction:
    """Linear least squares for (rho_dd, Re rho_ds, Im rho_ds), then PSD projection.

    Each measured fraction w_l gives the linear condition
    n_l(rho) - w_l sum_k n_k(rho) = 0.
    """
    delta = bands.gap if delta is None else delta
    t = bands.model.us_to_time(dataset.t_evo_us)
    distinct = np.unique(np.round(np.mod(delta * t, 2 * np.pi), 9))
    if len(distinct) < 4:
        raise ConditioningError(f"need >= 4 distinct hold phases, got {len(distinct)}")
    if delta * (t.max() - t.min()) < np.pi * (1 - 1e-9):
        raise ConditioningError("hold times must span at least half a coherence period")

    const, grad = _design(bands, t, delta)
    w = np.asarray(dataset.weights)
    lhs = grad - w[:, :, None] * grad.sum(axis=1, keepdims=True)
    rhs = -(const - w * const.sum(axis=1, keepdims=True))
    lhs = lhs.reshape(-1, 3)
    rhs = rhs.reshape(-1)
    # columns scaled to unit norm so the condition number reflects the grid
    scale = np.linalg.norm(lhs, axis=0)
    if np.any(scale == 0):
        raise ConditioningError("design matrix has a zero column")
    cond = float(np.linalg.cond(lhs / scale))
    if not np.isfinite(cond) or cond > 1e8:
        raise ConditioningError(f"time grid is degenerate (condition number {cond:.3g})")
    x, *_ = np.linalg.lstsq(lhs / scale, rhs, rcond=None)
    x = x / scale
    residual = float(np.linalg.norm(lhs @ x - rhs))
    raw = np.array([[x[0], x[1] + 1j * x[2]], [x[1] - 1j * x[2], 1 - x[0]]])
    proj, dist = nearest_density_matrix(raw)
    if dist > 0:
        log.debug("state projection moved %.3g", dist)
    return StateReconstruction(QubitDensityMatrix.from_matrix(proj), residual, dist, cond)


# ---------------------------------------------------------------------------
# process tomography
# ---------------------------------------------------------------------------

# vec(P_m rho P_n^dagger) = (conj(P_n) kron P_m) vec(rho), column stacking
_CHI_BASIS = np.array(
    [np.kron(PAULIS[n].conj(), PAULIS[m]).reshape(-1) for m in range(4) for n in range(4)]
).T  # (16, 16): column m*4+n


def _vec(rho) -> np.ndarray:
    return np.asarray(rho, dtype=complex).reshape(-1, order="F")


@dataclass(frozen=True)
class ProcessMatrix:
    """chi matrix in the Pauli basis {I, sx, sy, sz}:  E(rho) = sum chi_mn P_m rho P_n^dagger."""

    chi: np.ndarray
    projection_distance: float = 0.0
    tp_residual: float = 0.0
    meta: dict = field(default_factory=dict)

    def apply(self, rho) -> np.ndarray:
        rho = np.asarray(rho, dtype=complex)
        return sum(self.chi[m, n] * PAULIS[m] @ rho @ PAULIS[n].conj().T for m in range(4) for n in range(4))

    def to_dict(self) -> dict:
        return {
            "basis": ["I", "X", "Y", "Z"],
            "chi": [[[float(z.real), float(z.imag)] for z in row] for row in self.chi],
            "projection_distance": self.projection_distance,
            "tp_residual": self.tp_residual,
            **({"meta": self.meta} if self.meta else {}),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ProcessMatrix":
        chi = np.array([[complex(re, im) for re, im in row] for row in data["chi"]])
        return cls(chi, data.get("projection_distance", 0.0), data.get("tp_residual", 0.0), data.get("meta", {}))

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def chi_from_unitary(U) -> np.ndarray:
    """chi of the channel rho -> U rho U^dagger."""
    U = np.asarray(U, dtype=complex)
    coeffs = np.array([np.trace(P.conj().T @ U) / 2 for P in PAULIS])
    return np.outer(coeffs, coeffs.conj())


def tp_residual(chi) -> float:
    """|| sum chi_mn P_n^dagger P_m - I ||."""
    total = sum(chi[m, n] * PAULIS[n].conj().T @ PAULIS[m] for m in range(4) for n in range(4))
    return float(np.linalg.norm(total - np.eye(2)))


def qpt_reconstruct(input_states, output_states, warn_threshold: float = PROJECTION_WARN) -> ProcessMatrix:
    """Least-squares process tomography over an over-complete input set.

    The linear map is fitted as vec(out) = S vec(in), expanded in the Pauli
    chi basis, then made Hermitian, PSD (eigenvalue clipping) and unit trace.
    """
    ins = np.column_stack([_vec(_as_matrix(r)) for r in input_states])
    outs = np.column_stack([_vec(_as_matrix(r)) for r in output_states])
    if ins.shape[1] != outs.shape[1]:
        raise ValueError("need one output state per input state")
    if np.linalg.matrix_rank(ins, tol=1e-9) < 4:
        raise ConditioningError("input states do not span the operator space")
    S = outs @ np.linalg.pinv(ins)
    chi_flat = np.linalg.solve(_CHI_BASIS, S.reshape(-1))
    raw = chi_flat.reshape(4, 4)
    herm = 0.5 * (raw + raw.conj().T)
    vals, vecs = np.linalg.eigh(herm)
    vals = np.clip(vals, 0.0, None)
    chi = (vecs * vals) @ vecs.conj().T
    tr = np.trace(chi).real
    chi = chi / tr if tr > 0 else np.diag([1.0, 0, 0, 0]).astype(complex)
    dist = float(np.linalg.norm(chi - raw))
    log.debug("chi projection: hermitian part moved %.3g, total %.3g", np.linalg.norm(herm - raw), dist)
    if dist > warn_threshold:
        msg = f"process data far from a physical channel (projection distance {dist:.3f})"
        log.warning(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return ProcessMatrix(chi, dist, tp_residual(chi))


def _as_matrix(rho):
    return rho.matrix if isinstance(rho, QubitDensityMatrix) else np.asarray(rho, dtype=complex)


def process_fidelity(chi_a, chi_b) -> float:
    """|Tr(a b^dagger)| / sqrt(Tr(a a^dagger) Tr(b b^dagger)) for chi matrices."""
    a = chi_a.chi if isinstance(chi_a, ProcessMatrix) else np.asarray(chi_a, dtype=complex)
    b = chi_b.chi if isinstance(chi_b, ProcessMatrix) else np.asarray(chi_b, dtype=complex)
    num = abs(np.vdot(b, a))
    den = np.sqrt(np.vdot(a, a).real * np.vdot(b, b).real)
    return float(min(1.0, num / den))


# ---------------------------------------------------------------------------
# Ramsey fringes
# ---------------------------------------------------------------------------


class RamseyFitError(RuntimeError):
    def __init__(self, message: str, best_residual: float):
        self.best_residual = best_residual
        super().__init__(f"{message} (best residual {best_residual:.3g})")


@dataclass(frozen=True)
class RamseyFit:
    """P(t) = amplitude exp(-t/t2) sin(omega t + phase) + offset, t in ms."""

    amplitude: float
    offset: float
    omega: float  # rad/ms
    phase: float
    t2: float  # ms
    residual: float  # root-mean-square misfit
    covariance: np.ndarray
    degenerate: bool = False

    @property
    def frequency_khz(self) -> float:
        return self.omega / (2 * np.pi)

    def __call__(self, t):
        return ramsey_model(np.asarray(t, dtype=float), self.amplitude, self.offset, self.omega, self.phase, self.t2)


def ramsey_model(t, amplitude, offset, omega, phase, t2):
    return amplitude * np.exp(-t / t2) * np.sin(omega * t + phase) + offset


def fit_ramsey(times_ms, populations, n_phase_starts: int = 8, seed: int = 0) -> RamseyFit:
    """Damped-sine fit with a seeded multi-start over the phase.

    The frequency guess comes from the periodogram peak.  A fit whose
    amplitude is indistinguishable from zero is returned with
    ``degenerate=True`` and an undefined (infinite) T2.
    """
    t = np.asarray(times_ms, dtype=float)
    y = np.asarray(populations, dtype=float)
    if t.shape != y.shape or t.ndim != 1:
        raise ValueError("times and populations must be 1D arrays of equal length")
    if len(t) < 8:
        raise ValueError("need at least 8 samples")
    span = t.max() - t.min()
    offset0 = float(np.mean(y))
    amp0 = float(np.std(y) * np.sqrt(2))
    if amp0 < 1e-9 * max(1.0, abs(offset0)):
        resid = float(np.sqrt(np.mean((y - offset0) ** 2)))
        return RamseyFit(0.0, offset0, 0.0, 0.0, np.inf, resid, np.full((5, 5), np.nan), True)

    omega0 = _periodogram_peak(t, y - offset0)
    if omega0 * span < 4 * np.pi * (1 - 1e-9):
        raise ValueError("samples must cover at least two oscillation periods")
    rng = np.random.default_rng(seed)
    phases = (np.arange(n_phase_starts) + rng.uniform(0, 1)) * 2 * np.pi / n_phase_starts
    best = None
    for phase0 in phases:
        p0 = [amp0, offset0, omega0, phase0, span]
        try:
            popt, pcov = curve_fit(
                ramsey_model,
                t,
                y,
                p0=p0,
                bounds=([0, -np.inf, 0.5 * omega0, -np.inf, 1e-6 * span], [np.inf, np.inf, 1.5 * omega0, np.inf, np.inf]),
                method="trf",
                xtol=1e-15,
                ftol=1e-15,
                gtol=1e-15,
                max_nfev=20000,
            )
        except (RuntimeError, ValueError) as exc:
            log.debug("ramsey start %.3f failed: %s", phase0, exc)
            continue
        resid = float(np.sqrt(np.mean((ramsey_model(t, *popt) - y) ** 2)))
        if best is None or resid < best[0]:
            best = (resid, popt, pcov)
    if best is None:
        raise RamseyFitError("no start converged", float(np.std(y)))
    resid, popt, pcov = best
    if resid > 0.5 * np.std(y):
        raise RamseyFitError("fit did not capture the fringes", resid)
    amplitude, offset, omega, phase, t2 = popt
    return RamseyFit(float(amplitude), float(offset), float(omega), float(np.mod(phase, 2 * np.pi)), float(t2), resid, pcov)


def _periodogram_peak(t, y) -> float:
    span = t.max() - t.min()
    nyquist = np.pi * (len(t) - 1) / span
    omegas = np.linspace(2 * np.pi / span, nyquist, 40 * len(t))
    power = np.abs(np.exp(-1j * np.outer(omegas, t)) @ y) ** 2
    return float(omegas[np.argmax(power)])
