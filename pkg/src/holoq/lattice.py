"""Plane-wave description of a 1D optical lattice at zero quasi-momentum.

Internal units: hbar = 1, energies in recoil energies E_r, momenta in units of
the reciprocal lattice vector 2K (integer q), time in hbar/E_r.  The lattice
potential is V cos^2(Kx) = V/2 + (V/4)(e^{2iKx} + e^{-2iKx}); the constant V/2
is kept on the diagonal.  It is a global phase during propagation and drops
out of every gap.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
from scipy import constants

RB87_MASS = 86.909180527 * constants.atomic_mass
ATOM_MASSES = {"Rb87": RB87_MASS}
BAND_LABELS = ("s", "p", "d", "f", "g", "h", "i")


class ConfigurationError(ValueError):
    """Raised for an invalid lattice configuration."""


@dataclass(frozen=True)
class LatticeModel:
    """Lattice depth, laser wavelength, atom mass and plane-wave cutoff.

    Attributes
    ----------
    v0 : float
        Static lattice depth in units of E_r.
    wavelength : float
        Lattice laser wavelength in meters.
    mass : float
        Atom mass in kg.
    q_max : int
        Plane waves e^{2iqKx} with |q| <= q_max are kept.
    """

    v0: float = 5.0
    wavelength: float = 1064e-9
    mass: float = RB87_MASS
    q_max: int = 16

    def __post_init__(self):
        if not np.isfinite(self.v0) or self.v0 < 0:
            raise ConfigurationError(f"lattice depth must be >= 0, got {self.v0}")
        if self.wavelength <= 0 or self.mass <= 0:
            raise ConfigurationError("wavelength and mass must be positive")
        if int(self.q_max) != self.q_max or self.q_max < 1:
            raise ConfigurationError(f"q_max must be an integer >= 1, got {self.q_max}")

    @property
    def dim(self) -> int:
        return 2 * self.q_max + 1

    @property
    def q(self) -> np.ndarray:
        return np.arange(-self.q_max, self.q_max + 1)

    @property
    def wavevector(self) -> float:
        """K = 2 pi / l in 1/m."""
        return 2 * np.pi / self.wavelength

    @property
    def recoil_energy(self) -> float:
        """E_r = h^2 / (2 m l^2) in joules."""
        return constants.h**2 / (2 * self.mass * self.wavelength**2)

    @property
    def recoil_frequency(self) -> float:
        """E_r / h in Hz."""
        return self.recoil_energy / constants.h

    # Unit bridges.  An energy E (E_r) and an angular frequency w (E_r/hbar)
    # share the same number, so both map to cyclic Hz via E_r/h.
    def energy_to_hz(self, energy):
        return np.asarray(energy) * self.recoil_frequency

    def hz_to_energy(self, freq_hz):
        return np.asarray(freq_hz) / self.recoil_frequency

    def energy_to_khz(self, energy):
        return self.energy_to_hz(energy) / 1e3

    def khz_to_energy(self, freq_khz):
        return self.hz_to_energy(np.asarray(freq_khz) * 1e3)

    def time_to_seconds(self, t):
        return np.asarray(t) * constants.hbar / self.recoil_energy

    def seconds_to_time(self, seconds):
        return np.asarray(seconds) * self.recoil_energy / constants.hbar

    def time_to_us(self, t):
        return self.time_to_seconds(t) * 1e6

    def us_to_time(self, us):
        return self.seconds_to_time(np.asarray(us) * 1e-6)

    def with_depth(self, v0: float) -> "LatticeModel":
        return LatticeModel(v0, self.wavelength, self.mass, self.q_max)


def potential_matrix(q_max: int) -> np.ndarray:
    """cos^2(Kx) at unit depth in the plane-wave basis."""
    n = 2 * q_max + 1
    return 0.5 * np.eye(n) + 0.25 * (np.eye(n, k=1) + np.eye(n, k=-1))


def kinetic_diagonal(q_max: int) -> np.ndarray:
    q = np.arange(-q_max, q_max + 1)
    return 4.0 * q.astype(float) ** 2


def build_hamiltonian(model: LatticeModel, depth: float | None = None) -> np.ndarray:
    """Real symmetric Hamiltonian (units of E_r) at lattice depth ``depth``.

    Diagonal 4 q^2 + depth/2, nearest-neighbour coupling depth/4.
    """
    depth = model.v0 if depth is None else depth
    if depth < 0:
        raise ValueError(f"lattice depth must be >= 0, got {depth}")
    return np.diag(kinetic_diagonal(model.q_max)) + depth * potential_matrix(model.q_max)


def _fix_phase(vec: np.ndarray) -> np.ndarray:
    # largest-magnitude entry real positive; ties resolved by first index
    j = np.argmax(np.round(np.abs(vec), 12))
    return vec * np.sign(vec[j])


@dataclass(frozen=True, eq=False)
class BandSolution:
    """Bloch bands at k=0, ascending in energy.

    ``vectors[:, n]`` holds the plane-wave coefficients of band n, ordered
    like ``model.q``.  ``parities[n]`` is +1 (even) or -1 (odd) under q -> -q.
    """

    model: LatticeModel
    energies: np.ndarray
    vectors: np.ndarray
    parities: np.ndarray

    @property
    def labels(self) -> tuple:
        names = list(BAND_LABELS) + [f"b{n}" for n in range(len(BAND_LABELS), len(self.energies))]
        return tuple(names[: len(self.energies)])

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def vector(self, label: str) -> np.ndarray:
        return self.vectors[:, self.index(label)]

    def energy(self, label: str) -> float:
        return float(self.energies[self.index(label)])

    @property
    def gap(self) -> float:
        """s-d gap (the qubit splitting)."""
        return self.energy("d") - self.energy("s")

    @property
    def gap_sg(self) -> float:
        return self.energy("g") - self.energy("s")

    @cached_property
    def qubit_indices(self) -> tuple[int, int]:
        """Band indices of the qubit basis (|0>=d, |1>=s)."""
        return self.index("d"), self.index("s")

    def qubit_basis(self) -> np.ndarray:
        """Plane-wave columns for |0>=d and |1>=s."""
        return self.vectors[:, list(self.qubit_indices)]

    def embed(self, qubit_state) -> np.ndarray:
        """Map a qubit amplitude vector (c_d, c_s) onto plane waves."""
        return self.qubit_basis() @ np.asarray(qubit_state, dtype=complex)


def _even_odd_blocks(model: LatticeModel, depth: float):
    """Hamiltonian restricted to the q -> -q symmetric and antisymmetric sectors."""
    Q = model.q_max
    n = np.arange(Q + 1)
    even = np.diag(4.0 * n**2 + depth / 2) + depth / 4 * (np.eye(Q + 1, k=1) + np.eye(Q + 1, k=-1))
    # (|0>) couples to (|1>+|-1>)/sqrt2 with weight sqrt2 * depth/4
    even[0, 1] = even[1, 0] = np.sqrt(2) * depth / 4
    m = np.arange(1, Q + 1)
    odd = np.diag(4.0 * m**2 + depth / 2) + depth / 4 * (np.eye(Q, k=1) + np.eye(Q, k=-1))
    return even, odd


def _sector_to_plane_waves(model: LatticeModel, coeffs: np.ndarray, parity: int) -> np.ndarray:
    Q = model.q_max
    out = np.zeros((model.dim, coeffs.shape[1]))
    if parity > 0:
        out[Q] = coeffs[0]
        out[Q + 1 :] = coeffs[1:] / np.sqrt(2)
        out[:Q] = coeffs[1:][::-1] / np.sqrt(2)
    else:
        out[Q + 1 :] = coeffs / np.sqrt(2)
        out[:Q] = -coeffs[::-1] / np.sqrt(2)
    return out


@lru_cache(maxsize=64)
def solve_bands(model: LatticeModel) -> BandSolution:
    """Diagonalize the k=0 lattice Hamiltonian sector by sector.

    Working in definite-parity sectors keeps parity exact even when levels
    cross or are degenerate (V0 -> 0).  Exact ties are ordered odd first,
    which reproduces s, p, d, f, g in the free-particle limit.
    """
    if model.q_max < 2:
        raise ConfigurationError("q_max >= 2 is required to resolve the lowest five bands")
    even, odd = _even_odd_blocks(model, model.v0)
    e_even, c_even = np.linalg.eigh(even)
    e_odd, c_odd = np.linalg.eigh(odd)
    energies = np.concatenate([e_odd, e_even])
    vectors = np.hstack(
        [_sector_to_plane_waves(model, c_odd, -1), _sector_to_plane_waves(model, c_even, +1)]
    )
    parities = np.concatenate([-np.ones(len(e_odd), int), np.ones(len(e_even), int)])
    order = np.argsort(energies, kind="stable")
    # Shallow lattices split the odd/even pairs only at high order in the
    # depth, which drops below eigensolver precision. Treat such pairs as
    # degenerate and put the odd state first, which is the ordering the
    # splitting approaches as the depth goes to zero. Energies stay sorted;
    # a swapped pair differs by less than the tolerance.
    tol = 1e-11 * max(1.0, float(np.max(np.abs(energies))))
    for k in range(len(order) - 1):
        a, b = order[k], order[k + 1]
        if abs(energies[a] - energies[b]) < tol and parities[a] > parities[b]:
            order[k], order[k + 1] = b, a
    energies, vectors, parities = np.sort(energies), vectors[:, order], parities[order]
    vectors = np.column_stack([_fix_phase(v) for v in vectors.T])

    expected = np.array([1, -1, 1, -1, 1])
    if not np.array_equal(parities[:5], expected):
        raise ConfigurationError(
            f"lowest five bands violate parity alternation: {parities[:5].tolist()}"
        )
    for arr in (energies, vectors, parities):
        arr.setflags(write=False)
    return BandSolution(model, energies, vectors, parities)


def dense_band_energies(model: LatticeModel) -> np.ndarray:
    """Energies from a plain full diagonalization (cross-check for solve_bands)."""
    return np.linalg.eigvalsh(build_hamiltonian(model))


@dataclass(frozen=True)
class CouplingMap:
    """Modulation-induced s-d coupling per unit modulation amplitude.

    ``lambda_per_unit_A`` is <d| V0 cos^2(Kx) |s> in E_r, so the two-level
    coupling is lambda = A * lambda_per_unit_A.
    """

    lambda_per_unit_A: float
    delta: float

    def coupling(self, amplitude):
        return np.asarray(amplitude) * self.lambda_per_unit_A

    def beta_of(self, lam):
        """Pulse angle beta from a holonomic coupling: Delta tan(beta) = lambda."""
        return np.arctan(np.asarray(lam) / self.delta)

    def amplitude_for_beta(self, beta):
        """A = |Delta tan beta| / lambda_per_unit_A."""
        if self.lambda_per_unit_A == 0:
            raise ValueError("no modulation coupling at zero lattice depth")
        return np.abs(self.delta * np.tan(beta)) / self.lambda_per_unit_A

    @property
    def beta_max(self) -> float:
        """Largest beta reachable with A <= 1."""
        return float(np.arctan(self.lambda_per_unit_A / self.delta))


def coupling(model: LatticeModel, bands: BandSolution | None = None) -> CouplingMap:
    bands = solve_bands(model) if bands is None else bands
    if model.v0 == 0:
        return CouplingMap(0.0, bands.gap)
    vp = model.v0 * potential_matrix(model.q_max)
    lam = float(bands.vector("d") @ vp @ bands.vector("s"))
    return CouplingMap(lam, bands.gap)
