import numpy as np
import pytest

from holoq.holonomy import GATES, SynthesisConfig, gate_fidelity
from holoq.lattice import LatticeModel
from holoq.multiorbital import DrivePlan, EliminationConfig, Modulated, Square
from holoq.protocols import (
    BENCHMARK_COLUMNS,
    SHORTCUT_MAX_US,
    DynamicGateConfig,
    DynamicGateError,
    PipelineConfig,
    RobustnessReport,
    ShortcutConfig,
    ShortcutDesignError,
    ShortcutSequence,
    TwoSiteInteraction,
    _benchmark_one,
    axis_angle_gate,
    build_dynamic_gate,
    characterize_gate,
    design_shortcut,
    gate_duration_us,
    load_published,
    perturb_amplitude,
    published_sequence,
    published_shortcut,
    random_gate_benchmark,
    replay,
    robustness_sweep,
    sample_gate_angles,
    simulate_shortcut,
    swap_gate_times,
    timescale_check,
    write_benchmark_csv,
)

STATES = ["0", "1", "+", "-", "+i", "-i"]


# -- published tables --------------------------------------------------------


def test_published_tables_shape():
    data = load_published()
    counts = {g: len(p) for g, p in data["s3"]["gates"].items()}
    assert counts == {"x": 4, "y": 4, "z": 5, "h": 5, "t": 5}
    assert set(data["s2"]["gates"]) == set(counts)
    assert set(data["shortcut"]["durations_us"]) == set(STATES)


def test_published_sequence_lookup(model):
    seq, target = published_sequence("s3", "x", model)
    assert len(seq) == 4 and np.array_equal(target, GATES["x"])
    _, t_target = published_sequence("s3", "t", model)
    assert np.array_equal(t_target, GATES["t_table"])
    with pytest.raises(KeyError):
        published_sequence("s4", "x", model)
    with pytest.raises(KeyError):
        published_sequence("s3", "cnot", model)


def test_replay_records_populations(model, bands):
    seq, target = published_sequence("s3", "x", model)
    res = replay(seq, bands, target, steps_per_period=512, sample_every=16)
    assert res.populations.shape[1:] == (6, model.dim)
    assert np.allclose(res.populations.sum(axis=2), 1, atol=1e-10)
    assert res.states == tuple(STATES)
    assert np.all((res.fidelities >= 0) & (res.fidelities <= 1))
    assert res.fidelities.mean() > 0.98


# -- shortcut loading --------------------------------------------------------


@pytest.mark.parametrize("state", STATES)
def test_published_shortcuts_load_their_states(state, bands):
    res = simulate_shortcut(published_shortcut(state), bands)
    assert res.fidelity >= 0.98


def test_empty_shortcut_is_band_projection(model, bands):
    res = simulate_shortcut(ShortcutSequence(()), bands, "1")
    # overlap of the q = 0 plane wave with the s band
    s0 = bands.vector("s")[model.q_max]
    assert res.fidelity == pytest.approx(s0**2, abs=1e-14)
    assert np.array_equal(res.state, (model.q == 0).astype(complex))


def test_shortcut_validation():
    with pytest.raises(ValueError):
        ShortcutSequence((10.0, -1.0))
    with pytest.raises(ValueError):
        ShortcutSequence((10.0,) * 7)
    with pytest.raises(ValueError):
        ShortcutSequence((200.0, 60.0))
    assert ShortcutSequence((1.0, 2.0, 3.0)).cycles == 2


def test_design_one_state_with_two_cycles(bands):
    seq = design_shortcut("1", bands, cycles=2)
    assert seq.fidelity >= 0.99
    assert seq.total_us <= SHORTCUT_MAX_US
    # replay reproduces the reported number exactly
    assert simulate_shortcut(seq, bands).fidelity == seq.fidelity


def test_design_is_seeded(bands):
    a = design_shortcut("+i", bands, cycles=1, seed=3)
    b = design_shortcut("+i", bands, cycles=1, seed=3)
    assert a.durations_us == b.durations_us


@pytest.mark.parametrize("state", STATES)
def test_every_cardinal_state_within_three_cycles(state, bands):
    for cycles in (1, 2, 3):
        try:
            seq = design_shortcut(state, bands, cycles=cycles)
            break
        except ShortcutDesignError:
            continue
    else:
        pytest.fail(f"state {state} not reachable with <= 3 cycles")
    assert seq.fidelity >= 0.99
    assert simulate_shortcut(seq, bands).fidelity == seq.fidelity


def test_design_accepts_zero_length_when_already_loaded(model, bands):
    # the q = 0 plane wave projected onto (d, s) is reachable with no pulses
    c = bands.qubit_basis().T @ (model.q == 0).astype(float)
    seq = design_shortcut(c, bands)
    assert seq.durations_us == ()
    # only the weight outside the qubit bands is missing
    assert seq.fidelity == pytest.approx(np.dot(c, c), abs=1e-14)


def test_design_failure_says_increase_cycles(bands):
    cfg = ShortcutConfig(starts=2, maxfev=50, threshold=0.999999999)
    with pytest.raises(ShortcutDesignError, match="increase cycles") as info:
        design_shortcut("-", bands, cycles=1, config=cfg)
    assert 0 <= info.value.best_fidelity < 0.999999999
    with pytest.raises(ValueError):
        design_shortcut("1", bands, cycles=4)


# -- gate characterization and robustness ------------------------------------


@pytest.fixture(scope="module")
def x_plan_eliminated(model, x_eliminated):
    return DrivePlan.from_sequence(x_eliminated.sequence, model.v0)


def test_characterize_identity(model, bands):
    res = characterize_gate(DrivePlan((), model.v0), bands, np.eye(2))
    assert res.process_fidelity == pytest.approx(1.0, abs=1e-10)
    assert np.allclose(res.state_fidelities, 1.0)


def test_robustness_zero_offset_equals_standalone_qpt(bands, x_plan_eliminated):
    cfg = PipelineConfig(steps_per_period=256)
    alone = characterize_gate(x_plan_eliminated, bands, GATES["x"], cfg).process_fidelity
    report = robustness_sweep(x_plan_eliminated, None, [0.05, 0.0], bands, GATES["x"], cfg, "x")
    assert list(report.grid) == [0.0, 0.05]
    assert abs(report.fidelities["holonomic"][0] - alone) <= 1e-12
    assert 0 <= report.fidelities["holonomic"][1] <= 1


def test_robustness_report_csv(tmp_path):
    rep = RobustnessReport([0.0, 0.1], {"holonomic": np.array([1.0, 0.9]), "dynamic": np.array([1.0, 0.5])}, "x")
    path = tmp_path / "r.csv"
    rep.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "gate,delta_a_rel,fidelity_dynamic,fidelity_holonomic"
    assert lines[2] == "x,0.1,0.5,0.9"
    with pytest.raises(ValueError):
        RobustnessReport([0.1, 0.0])


def test_perturb_amplitude():
    plan = DrivePlan((Modulated(6.0, 0.9, 0.1), Square(7.5, 1.0), Square(1.0, 1.0)), 5.0)
    out = perturb_amplitude(plan, 0.2)
    assert out.segments[0].amplitude == 1.0  # 1.08 capped
    assert out.segments[1].depth_er == pytest.approx(5.0 + 2.5 * 1.2)
    assert out.segments[2].depth_er == pytest.approx(5.0 - 4.0 * 1.2)
    assert perturb_amplitude(plan, 0.0) == plan
    assert perturb_amplitude(DrivePlan((Square(0.0, 1.0),), 5.0), 0.5).segments[0].depth_er == 0.0


def test_dynamic_identity_is_empty(bands):
    plan = build_dynamic_gate(np.eye(2), bands, duration=10.0)
    assert plan.segments == ()


def test_dynamic_gate_is_seeded(bands):
    cfg = DynamicGateConfig(starts=2, maxfev=300, threshold=0.0)
    a = build_dynamic_gate(GATES["x"], bands, 50.0, config=cfg, seed=4)
    b = build_dynamic_gate(GATES["x"], bands, 50.0, config=cfg, seed=4)
    assert a == b
    assert len(a.segments) == 6
    assert sum(s.duration for s in a.segments) == pytest.approx(50.0)


def test_dynamic_gate_failure(bands):
    with pytest.raises(DynamicGateError) as info:
        build_dynamic_gate(GATES["x"], bands, 0.01, config=DynamicGateConfig(starts=2, maxfev=200))
    assert info.value.best_fidelity < 0.98


# -- random benchmark --------------------------------------------------------


def test_axis_angle_gate():
    assert np.allclose(axis_angle_gate(0.4, 1.0, 0.0), np.eye(2))
    # beta = pi about x is X up to a global phase
    assert gate_fidelity(axis_angle_gate(np.pi / 2, 0.0, np.pi), GATES["x"]) == pytest.approx(1.0)
    U = axis_angle_gate(1.1, 2.3, 0.7)
    assert np.allclose(U.conj().T @ U, np.eye(2))


def test_sampling_ranges_and_cos_theta_mean():
    a = sample_gate_angles(10_000, 123)
    assert a.shape == (10_000, 3)
    assert a[:, 0].min() >= 0 and a[:, 0].max() < np.pi
    assert a[:, 1:].max() < 2 * np.pi
    assert -0.03 <= np.cos(a[:, 0]).mean() <= 0.03
    assert np.array_equal(a, sample_gate_angles(10_000, 123))


def test_identity_sample_has_unit_fidelity():
    row = _benchmark_one((0, (0.3, 0.2, 0.0), LatticeModel(), 1, SynthesisConfig(), EliminationConfig()))
    assert row.status == "ok"
    assert row.fidelity == pytest.approx(1.0, abs=1e-9)


def test_benchmark_deterministic(tmp_path):
    elim = EliminationConfig(per_pulse_maxfev=20, polish_maxfev=20)
    a = random_gate_benchmark(2, 9, elimination=elim)
    b = random_gate_benchmark(2, 9, elimination=elim)
    assert a == b
    pa, pb = tmp_path / "a.csv", tmp_path / "b.csv"
    write_benchmark_csv(a, pa)
    write_benchmark_csv(b, pb)
    assert pa.read_bytes() == pb.read_bytes()
    assert pa.read_text().splitlines()[0] == ",".join(BENCHMARK_COLUMNS)


def test_failed_synthesis_is_reported_not_dropped():
    synth = SynthesisConfig(starts=1, beta_max=0.01)
    row = _benchmark_one((5, (1.0, 0.5, 2.0), LatticeModel(), 0, synth, EliminationConfig()))
    assert row.status == "synthesis_failed"
    assert row.index == 5 and np.isnan(row.fidelity)


# -- timing ------------------------------------------------------------------


def test_swap_times():
    tau, tau_sqrt = swap_gate_times(np.pi / 2)
    assert tau == pytest.approx(1.0)
    assert tau_sqrt == tau / 2
    assert swap_gate_times(2 * 0.37)[0] == swap_gate_times(0.37)[0] / 2
    for bad in (0.0, -1.0):
        with pytest.raises(ValueError):
            swap_gate_times(bad)
    inter = TwoSiteInteraction(1.0, 2.0, 0.5)
    assert inter.neglected == ("u4",)
    assert inter.swap_times() == swap_gate_times(0.5)


def test_gate_durations():
    assert gate_duration_us(5, freq_khz=10.77) == pytest.approx(464.25, abs=0.01)
    assert gate_duration_us(4, freq_khz=10.77) == pytest.approx(371.4, abs=0.01)
    assert gate_duration_us(0, freq_khz=10.77) == 0.0


def test_timescale_check(model, x_sequence):
    rows = timescale_check({"x": x_sequence, "z5": 5}, model)
    assert rows[0].periods == len(x_sequence)
    assert rows[0].duration_us == pytest.approx(gate_duration_us(x_sequence, model))
    assert rows[1].limit_us == pytest.approx(525.0)
    assert all(r.within_limit for r in rows)
    assert not timescale_check({"long": 6}, model)[0].within_limit
