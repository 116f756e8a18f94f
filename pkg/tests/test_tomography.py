import warnings

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from holoq.holonomy import GATES, PAULIS
from holoq.lattice import build_hamiltonian
from holoq.tomography import (
    PEAK_COLUMNS,
    ConditioningError,
    ProcessMatrix,
    QubitDensityMatrix,
    RamseyFitError,
    TofDataset,
    chi_from_unitary,
    default_tof_times,
    fit_ramsey,
    momentum_peaks,
    nearest_density_matrix,
    process_fidelity,
    qpt_reconstruct,
    ramsey_model,
    reconstruct_state,
    simulate_tof_dataset,
    six_state_inputs,
    state_fidelity,
    tp_residual,
)

from conftest import random_unitary

bloch_vectors = st.tuples(
    st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1)
).filter(lambda v: 1e-6 < np.linalg.norm(v) <= 1)


def rho_from_bloch(v):
    x, y, z = v
    return QubitDensityMatrix((1 + z) / 2, (1 - z) / 2, (x - 1j * y) / 2)


# -- density matrices and fidelities -----------------------------------------


def test_density_matrix_validation():
    with pytest.raises(ValueError):
        QubitDensityMatrix(0.7, 0.7, 0)
    with pytest.raises(ValueError):
        QubitDensityMatrix(0.5, 0.5, 0.6)
    rho = QubitDensityMatrix.from_state([1, 1j])
    assert np.allclose(rho.matrix, 0.5 * np.array([[1, -1j], [1j, 1]]))
    assert np.allclose(rho.bloch, [0, 1, 0])


def test_nearest_density_matrix():
    bad = np.array([[1.2, 0], [0, -0.2]])
    proj, dist = nearest_density_matrix(bad)
    assert np.allclose(proj, np.diag([1.0, 0.0]))
    assert dist == pytest.approx(np.sqrt(0.08))
    good = rho_from_bloch((0.3, 0.1, -0.4)).matrix
    assert nearest_density_matrix(good)[1] < 1e-15


def test_state_fidelity_examples():
    zero, one = np.diag([1.0, 0]), np.diag([0, 1.0])
    assert state_fidelity(zero, zero) == pytest.approx(1.0)
    assert state_fidelity(zero, one) == 0.0
    assert state_fidelity(zero, np.eye(2) / 2) == pytest.approx(1 / np.sqrt(2))


def test_process_fidelity_examples():
    ident = chi_from_unitary(np.eye(2))
    x = chi_from_unitary(GATES["x"])
    assert np.allclose(ident, np.diag([1, 0, 0, 0]))
    assert np.allclose(x, np.diag([0, 1, 0, 0]))
    assert process_fidelity(ident, ident) == pytest.approx(1.0)
    assert process_fidelity(ident, x) == 0.0
    # depolarizing with strength p: chi = diag(1 - 3p/4, p/4, p/4, p/4)
    p = 0.3
    dep = np.diag([1 - 3 * p / 4, p / 4, p / 4, p / 4])
    expected = (1 - 3 * p / 4) / np.sqrt((1 - 3 * p / 4) ** 2 + 3 * p**2 / 16)
    assert process_fidelity(dep, ident) == pytest.approx(expected)


@settings(max_examples=50, deadline=None)
@given(bloch_vectors, bloch_vectors)
def test_state_fidelity_symmetric_and_bounded(a, b):
    ra, rb = rho_from_bloch(a), rho_from_bloch(b)
    f = state_fidelity(ra, rb)
    assert 0 <= f <= 1
    assert f == pytest.approx(state_fidelity(rb, ra), abs=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_process_fidelity_symmetric_and_bounded(seed):
    rng = np.random.default_rng(seed)
    a, b = chi_from_unitary(random_unitary(rng)), chi_from_unitary(random_unitary(rng))
    f = process_fidelity(a, b)
    assert 0 <= f <= 1
    assert f == pytest.approx(process_fidelity(b, a), abs=1e-15)


# -- momentum peaks and state tomography -------------------------------------


def test_momentum_peaks_against_static_propagation(model, bands):
    """Peak weights agree with |psi_q(t)|^2 from exact evolution in the static lattice."""
    H = build_hamiltonian(model)
    amps = np.array([0.6, 0.8 * np.exp(0.7j)])
    psi0 = bands.embed(amps)
    rho = QubitDensityMatrix.from_state(amps)
    times = np.array([0.0, 0.37, 1.1, 2.9])
    peaks = momentum_peaks(rho, bands, times)
    q0 = model.q_max
    for t, w, resid in zip(times, peaks.weights, peaks.residual):
        psi = sla.expm(-1j * H * t) @ psi0
        probs = np.abs(psi) ** 2
        assert np.allclose(w, probs[[q0, q0 + 1, q0 - 1]], atol=1e-12)
        assert resid == pytest.approx(1 - probs[[q0, q0 + 1, q0 - 1]].sum(), abs=1e-12)


def test_diagonal_states_give_time_independent_peaks(bands):
    rho = QubitDensityMatrix(0.3, 0.7, 0.0)
    peaks = momentum_peaks(rho, bands, np.linspace(0, 3, 13))
    assert np.allclose(peaks.weights, peaks.weights[0], atol=1e-15)
    # coherence shows up only on peaks where both bands have weight
    coh = momentum_peaks(QubitDensityMatrix(0.5, 0.5, 0.5), bands, [0.0, 0.6])
    assert not np.allclose(coh.weights[0], coh.weights[1])


def test_default_grid_covers_one_period(model, bands):
    t = default_tof_times(bands)
    assert len(t) == 16
    assert t[-1] + t[1] == pytest.approx(model.time_to_us(2 * np.pi / bands.gap))
    assert 90 < model.time_to_us(2 * np.pi / bands.gap) < 96


def test_noiseless_reconstruction_of_ground_state(bands):
    rho = QubitDensityMatrix(1.0, 0.0, 0.0)
    rec = reconstruct_state(simulate_tof_dataset(rho, bands), bands)
    assert state_fidelity(rec.rho, rho) >= 1 - 1e-10
    assert rec.residual < 1e-12


@pytest.mark.parametrize("label", ["0", "1", "+", "-", "+i", "-i"])
def test_six_states_round_trip(label, bands):
    rho = six_state_inputs()[label]
    rec = reconstruct_state(simulate_tof_dataset(rho, bands), bands)
    assert state_fidelity(rec.rho, rho) >= 1 - 1e-8


@settings(max_examples=30, deadline=None)
@given(bloch_vectors)
def test_round_trip_any_state(v):
    from holoq.lattice import LatticeModel, solve_bands

    bands = solve_bands(LatticeModel())
    rho = rho_from_bloch(v)
    rec = reconstruct_state(simulate_tof_dataset(rho, bands), bands)
    assert state_fidelity(rec.rho, rho) >= 1 - 1e-8
    assert rec.rho.eigenvalues().min() >= -1e-10
    assert abs(rec.rho.rho_dd + rec.rho.rho_ss - 1) <= 1e-10


def test_noisy_reconstruction(bands):
    for label, rho in six_state_inputs().items():
        data = simulate_tof_dataset(rho, bands, noise_sigma=0.01, noise_seed=11)
        rec = reconstruct_state(data, bands)
        assert state_fidelity(rec.rho, rho) >= 0.999, label


def test_noise_is_seeded(bands):
    rho = six_state_inputs()["+"]
    a = simulate_tof_dataset(rho, bands, noise_sigma=0.02, noise_seed=4)
    b = simulate_tof_dataset(rho, bands, noise_sigma=0.02, noise_seed=4)
    c = simulate_tof_dataset(rho, bands, noise_sigma=0.02, noise_seed=5)
    assert np.array_equal(a.weights, b.weights)
    assert not np.array_equal(a.weights, c.weights)
    assert np.allclose(a.weights.sum(axis=1), 1)


def test_degenerate_grids_rejected(model, bands):
    rho = six_state_inputs()["+"]
    period_us = model.time_to_us(2 * np.pi / bands.gap)
    repeated = simulate_tof_dataset(rho, bands, times_us=np.arange(8) * period_us)
    with pytest.raises(ConditioningError):
        reconstruct_state(repeated, bands)
    short = simulate_tof_dataset(rho, bands, times_us=np.linspace(0, 0.2 * period_us, 8))
    with pytest.raises(ConditioningError):
        reconstruct_state(short, bands)


def test_dataset_validation_and_csv(tmp_path, bands):
    data = simulate_tof_dataset(six_state_inputs()["-i"], bands, noise_sigma=0.01)
    path = tmp_path / "tof.csv"
    data.to_csv(path)
    header = path.read_text().splitlines()[0].split(",")
    assert header == ["t_evo_us", *PEAK_COLUMNS]
    back = TofDataset.from_csv(path)
    assert np.array_equal(back.t_evo_us, data.t_evo_us)
    assert np.array_equal(back.weights, data.weights)
    with pytest.raises(ValueError):
        TofDataset(np.zeros(2), np.full((2, 3), 1.5))
    path.write_text("t_evo_us,w_0\n0,1\n")
    with pytest.raises(ValueError):
        TofDataset.from_csv(path)


# -- process tomography ------------------------------------------------------


def apply_kraus(kraus, rho):
    return sum(K @ rho @ K.conj().T for K in kraus)


def channel_outputs(kraus):
    ins = [r.matrix for r in six_state_inputs().values()]
    return ins, [apply_kraus(kraus, r) for r in ins]


def pauli_pair_unitary(m, n):
    """Unitary (P_m + c P_n)/sqrt 2 mixing two Pauli operators, and its chi."""
    e = np.eye(4)
    if m == n:
        return PAULIS[m], np.outer(e[m], e[m]).astype(complex)
    c = 1j if 0 in (m, n) else 1.0
    v = (e[m] + c * e[n]) / np.sqrt(2)
    return (PAULIS[m] + c * PAULIS[n]) / np.sqrt(2), np.outer(v, v.conj())


@pytest.mark.parametrize("m", range(4))
@pytest.mark.parametrize("n", range(4))
def test_pauli_channel_basis_round_trip(m, n):
    U, chi = pauli_pair_unitary(m, n)
    assert np.allclose(U.conj().T @ U, np.eye(2))
    ins, outs = channel_outputs([U])
    rec = qpt_reconstruct(ins, outs)
    assert np.allclose(rec.chi, chi, atol=1e-8)
    assert np.allclose(chi_from_unitary(U), chi, atol=1e-12)
    assert rec.tp_residual < 1e-8


def test_mixed_channel_round_trip():
    p = 0.2
    kraus = [np.sqrt(1 - p) * np.eye(2), np.sqrt(p) * PAULIS[3]]
    rec = qpt_reconstruct(*channel_outputs(kraus))
    assert np.allclose(rec.chi, np.diag([1 - p, 0, 0, p]), atol=1e-10)
    assert rec.projection_distance < 1e-10


def test_amplitude_damping_round_trip():
    g = 0.3
    kraus = [np.array([[1, 0], [0, np.sqrt(1 - g)]]), np.array([[0, np.sqrt(g)], [0, 0]])]
    ins, outs = channel_outputs(kraus)
    rec = qpt_reconstruct(ins, outs)
    for r_in, r_out in zip(ins, outs):
        assert np.allclose(rec.apply(r_in), r_out, atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_chi_invariants_for_random_unitaries(seed):
    U = random_unitary(np.random.default_rng(seed))
    rec = qpt_reconstruct(*channel_outputs([U]))
    assert np.allclose(rec.chi, rec.chi.conj().T)
    assert np.linalg.eigvalsh(rec.chi).min() >= -1e-8
    assert np.trace(rec.chi).real == pytest.approx(1.0)
    assert tp_residual(rec.chi) < 1e-8
    assert process_fidelity(rec, chi_from_unitary(U)) == pytest.approx(1.0, abs=1e-10)


def test_non_cp_data_warns():
    ins = [r.matrix for r in six_state_inputs().values()]
    # transpose is positive but not completely positive
    outs = [r.T for r in ins]
    with pytest.warns(RuntimeWarning, match="projection distance"):
        rec = qpt_reconstruct(ins, outs)
    assert rec.projection_distance > 0.05


def test_physical_data_does_not_warn():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        qpt_reconstruct(*channel_outputs([GATES["h"]]))


def test_qpt_input_errors():
    ins = [r.matrix for r in six_state_inputs().values()]
    with pytest.raises(ValueError):
        qpt_reconstruct(ins, ins[:5])
    with pytest.raises(ConditioningError):
        qpt_reconstruct(ins[:2], ins[:2])


def test_process_matrix_json_round_trip(tmp_path):
    rec = qpt_reconstruct(*channel_outputs([GATES["t"]]))
    path = tmp_path / "chi.json"
    rec.to_json(path)
    import json

    data = json.loads(path.read_text())
    back = ProcessMatrix.from_dict(data)
    assert np.array_equal(back.chi, rec.chi)


# -- Ramsey fits -------------------------------------------------------------

RAMSEY_TRUE = dict(amplitude=0.45, offset=0.5, omega=2 * np.pi * 10.77, phase=0.8, t2=2.1)


def test_ramsey_noiseless_exact():
    t = np.linspace(0, 3.0, 600)
    y = ramsey_model(t, **RAMSEY_TRUE)
    fit = fit_ramsey(t, y)
    assert fit.residual < 1e-12
    assert fit.t2 == pytest.approx(2.1, rel=1e-8)
    assert fit.frequency_khz == pytest.approx(10.77, rel=1e-10)
    assert np.allclose(fit(t), y, atol=1e-12)


def test_ramsey_noisy_within_two_percent():
    rng = np.random.default_rng(3)
    t = np.linspace(0, 3.0, 600)
    y = ramsey_model(t, **RAMSEY_TRUE) + 0.01 * rng.standard_normal(t.size)
    fit = fit_ramsey(t, y)
    assert fit.omega == pytest.approx(RAMSEY_TRUE["omega"], rel=0.02)
    assert fit.t2 == pytest.approx(2.1, rel=0.02)
    assert fit_ramsey(t, y).omega == fit.omega  # seeded multi-start


def test_ramsey_zero_amplitude_flagged():
    t = np.linspace(0, 1, 50)
    fit = fit_ramsey(t, np.full_like(t, 0.5))
    assert fit.degenerate and fit.amplitude == 0.0 and np.isinf(fit.t2)


def test_ramsey_preconditions():
    t = np.linspace(0, 1, 6)
    with pytest.raises(ValueError):
        fit_ramsey(t, np.sin(t))
    t = np.linspace(0, 0.1, 40)  # about one period at 10.77 kHz
    with pytest.raises(ValueError):
        fit_ramsey(t, ramsey_model(t, **RAMSEY_TRUE))


def test_ramsey_failure_reports_residual():
    rng = np.random.default_rng(0)
    t = np.linspace(0, 3, 200)
    with pytest.raises(RamseyFitError) as info:
        fit_ramsey(t, rng.uniform(0, 1, t.size))
    assert info.value.best_residual > 0
    assert "best residual" in str(info.value)
