"""Synaptic monitoring: powers, health factors, sampling, assembly."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from onnkit import (
    Architecture,
    HealthLedger,
    OnnModel,
    SpmConfig,
    TrainConfig,
    allocate,
    build_elite,
    build_worst,
    instantaneous_hf,
    layer_powers,
    make_sublibrary,
    powers_from_kernels,
    prior_bp,
    rank_operators,
    sample_operator,
    spm_session,
    weight_power,
)
from onnkit.experiments import ImagePair

LIB = make_sublibrary([0], [0, 1], range(7))


def toy_pairs(seed=0, n=2, size=(8, 8)):
    rng = np.random.default_rng(seed)
    return [ImagePair(f"p{i}", rng.uniform(-1, 1, size),
                      rng.uniform(-0.5, 0.5, size)) for i in range(n)]


# -- weight power ------------------------------------------------------------

def test_power_of_constant_kernels_is_zero():
    kern = np.ones((4, 3, 3, 3))
    assert np.allclose(powers_from_kernels(kern), 0.0)


def test_power_averages_over_receiving_neurons():
    # neuron 0's outgoing kernels: one flat, one spread {0, 2}
    kern = np.zeros((2, 1, 1, 2))
    kern[1, 0, 0, :] = [0.0, 2.0]
    # population variance of [0, 2] is 1, mean over the two receivers is 0.5
    assert powers_from_kernels(kern)[0] == pytest.approx(0.5)


def test_weight_power_indexes_hidden_neurons():
    model = OnnModel(Architecture(hidden=(3, 3)))
    model.init_weights(np.random.default_rng(0))
    p = weight_power(model, 1, 0)
    assert p >= 0.0
    vec = layer_powers(model)
    assert set(vec) == {1, 2}
    assert vec[1].shape == (3,)
    assert vec[1][0] == pytest.approx(p)
    with pytest.raises(ValueError):
        weight_power(model, 3, 0)  # output layer has no outgoing kernels
    with pytest.raises(IndexError):
        weight_power(model, 1, 99)


def test_instantaneous_hf_is_relative_change():
    assert instantaneous_hf(2.0, 3.0) == pytest.approx(0.5)
    assert instantaneous_hf(2.0, 1.0) == pytest.approx(0.5)
    assert instantaneous_hf(2.0, 2.0) == 0.0
    # a dead starting power cannot be scored
    assert instantaneous_hf(0.0, 1.0) is None
    assert instantaneous_hf(1e-13, 1.0) is None


# -- ledger ------------------------------------------------------------------

def test_ledger_records_and_averages():
    led = HealthLedger([1, 2], LIB)
    led.record(1, 0, 1.0, 1.5)
    led.record(1, 0, 1.0, 2.0)
    assert led.count(1, 0) == 2
    assert led.mean_hf(1, 0) == pytest.approx(0.75)
    assert led.mean_hf(2, 0) == 0.0
    led.record(2, 7, 0.0, 5.0)  # skipped, prev below the power floor
    assert led.skipped[2] == 1
    assert led.count(2, 7) == 0


def test_ledger_warmup_flag():
    led = HealthLedger([1], LIB)
    for theta in LIB.indices:
        led.record(1, theta, 1.0, 2.0)
    assert not led.is_warm(1)
    for theta in LIB.indices:
        led.record(1, theta, 1.0, 2.0)
    assert led.is_warm(1)


def test_ledger_round_trips_through_json_and_csv(tmp_path):
    led = HealthLedger([1, 2], LIB, metadata={"note": "probe"})
    rng = np.random.default_rng(5)
    for _ in range(60):
        led.record(int(rng.integers(1, 3)), int(rng.choice(LIB.indices)),
                   1.0, 1.0 + rng.random())
    led.sessions_recorded = 5
    path = tmp_path / "hf.json"
    led.save_json(path)
    clone = HealthLedger.load_json(path)
    assert clone == led
    assert clone.sessions_recorded == 5
    assert clone.metadata["note"] == "probe"

    led.save_csv(tmp_path / "hf.csv")
    rows = (tmp_path / "hf.csv").read_text().splitlines()
    assert rows[0] == "layer,theta,count,hf"
    assert len(rows) == 1 + 2 * len(LIB)


# -- sampling ----------------------------------------------------------------

def test_cold_ledger_sampling_covers_before_repeating():
    led = HealthLedger([1], LIB)
    rng = np.random.default_rng(0)
    pending = {}
    draws = [sample_operator(led, 1, LIB, rng, pending) for _ in range(len(LIB))]
    assert sorted(draws) == sorted(LIB.indices)  # no repeats while cold


def test_warm_sampling_tracks_mean_hf():
    led = HealthLedger([1], LIB)
    hf_by_set = {t: 0.001 * (i + 1) for i, t in enumerate(LIB.indices)}
    for theta, hf in hf_by_set.items():
        led.record(1, theta, 1.0, 1.0 + hf)
        led.record(1, theta, 1.0, 1.0 + hf)
    assert led.is_warm(1)
    rng = np.random.default_rng(123)
    n = 20000
    counts = {t: 0 for t in LIB.indices}
    for _ in range(n):
        counts[sample_operator(led, 1, LIB, rng)] += 1
    total_hf = sum(hf_by_set.values())
    for theta, hf in hf_by_set.items():
        assert abs(counts[theta] / n - hf / total_hf) < 0.02


def test_warm_sampling_all_zero_falls_back_to_uniform():
    led = HealthLedger([1], LIB)
    for theta in LIB.indices:
        led.record(1, theta, 1.0, 1.0)
        led.record(1, theta, 1.0, 1.0)
    rng = np.random.default_rng(7)
    draws = {sample_operator(led, 1, LIB, rng) for _ in range(300)}
    assert len(draws) > len(LIB) // 2  # spread, not stuck on one set


# -- allocation --------------------------------------------------------------

def test_allocate_worked_example():
    assert allocate([0.67, 0.23, 0.22], 12) == [8, 2, 2]


def test_allocate_single_set_takes_all():
    assert allocate([0.4], 12) == [12]


def test_allocate_rejects_more_sets_than_neurons():
    with pytest.raises(ValueError):
        allocate([1.0, 1.0], 1)


def test_allocate_nonpositive_goes_uniform():
    assert allocate([0.5, 0.0, 0.5], 6) == [2, 2, 2]
    assert allocate([0.0, 0.0], 5) == [3, 2]


@given(
    st.integers(1, 3),
    st.integers(0, 10_000),
)
@settings(max_examples=300, deadline=None)
def test_allocate_conserves_neurons(s, seed):
    rng = np.random.default_rng(seed)
    # callers rank by HF before allocating, so the vector arrives descending
    hfs = np.sort(rng.uniform(1e-6, 1.0, s))[::-1]
    n = int(rng.integers(s, 25))
    counts = allocate(list(hfs), n)
    assert sum(counts) == n
    assert all(c >= 0 for c in counts)
    # the dominant set never receives fewer neurons than any other
    assert counts[0] == max(counts)


# -- sessions ----------------------------------------------------------------

def test_spm_session_credits_every_hidden_neuron():
    arch = Architecture(hidden=(3, 3))
    model = OnnModel(arch, sublibrary=LIB)
    rng = np.random.default_rng(0)
    model.init_weights(rng)
    led = HealthLedger([1, 2], LIB)
    cfg = SpmConfig(sessions=1, window=3, train=TrainConfig(iterations=3))
    before = [a.copy() for a in model.assignments]
    model, led, state = spm_session(model, toy_pairs(), cfg, led, rng)
    assert led.total_count(1) + led.skipped[1] == 3
    assert led.total_count(2) + led.skipped[2] == 3
    assert state.iteration == 3
    # weights survive reassignment even when the operator mix changes
    assert model.kernels[0].shape == (3, 1, 3, 3)
    changed = any(
        not np.array_equal(a, b) for a, b in zip(before, model.assignments)
    )
    assert changed


def test_prior_bp_accounting():
    arch = Architecture(hidden=(3, 3))
    cfg = SpmConfig(sessions=4, window=2, train=TrainConfig(iterations=2))
    led = prior_bp(toy_pairs(), LIB, cfg, arch, np.random.default_rng(1))
    assert led.sessions_recorded == 4
    assert led.diverged_sessions == 0
    for layer in (1, 2):
        assert led.total_count(layer) + led.skipped[layer] == 4 * 3


def test_snapshot_replay_reproduces_the_ledger():
    arch = Architecture(hidden=(3, 3))
    cfg = SpmConfig(sessions=3, window=2, train=TrainConfig(iterations=2))
    led = prior_bp(toy_pairs(), LIB, cfg, arch, np.random.default_rng(2),
                   record_snapshots=True)
    assert len(led.snapshots) == 3
    replay = HealthLedger([1, 2], LIB)
    for snap in led.snapshots:
        for h, layer in enumerate((1, 2)):
            starts = powers_from_kernels(snap["start_kernels"][layer])
            ends = powers_from_kernels(snap["end_kernels"][layer])
            for k in range(arch.hidden[h]):
                replay.record(layer, snap["assignments"][h][k],
                              float(starts[k]), float(ends[k]))
    for layer in (1, 2):
        for theta in LIB.indices:
            assert replay.count(layer, theta) == led.count(layer, theta)
            assert abs(replay.mean_hf(layer, theta)
                       - led.mean_hf(layer, theta)) <= 1e-12


def test_rank_operators_sorts_by_hf_then_index():
    led = HealthLedger([1], LIB)
    led.record(1, 0, 1.0, 1.5)
    led.record(1, 2, 1.0, 1.5)
    led.record(1, 1, 1.0, 1.9)
    ranking = rank_operators(led, 1)
    assert [t for t, _ in ranking[:3]] == [1, 0, 2]


# -- assembly ----------------------------------------------------------------

def _ranked_ledger():
    led = HealthLedger([1, 2], LIB)
    for i, theta in enumerate(LIB.indices):
        hf = 0.9 - 0.05 * i
        for _ in range(2):
            led.record(1, theta, 1.0, 1.0 + hf)
            led.record(2, theta, 1.0, 1.0 + max(hf - 0.1, 0.01))
    return led


def test_build_elite_single_set_fills_layers():
    led = _ranked_ledger()
    arch = Architecture()
    model = build_elite(led, 1, arch, np.random.default_rng(0))
    top1 = rank_operators(led, 1)[0][0]
    top2 = rank_operators(led, 2)[0][0]
    assert list(model.assignments[0]) == [top1] * 12
    assert list(model.assignments[1]) == [top2] * 12


def test_build_elite_splits_by_hf_share():
    led = HealthLedger([1, 2], LIB)
    for theta, hf in zip(LIB.indices, (0.67, 0.23, 0.22) + (0.0,) * 11):
        for _ in range(2):
            led.record(1, theta, 1.0, 1.0 + hf)
            led.record(2, theta, 1.0, 1.0 + hf)
    model = build_elite(led, 3, arch := Architecture(), np.random.default_rng(0))
    counts = {t: 0 for t in LIB.indices[:3]}
    for theta in model.assignments[0]:
        counts[int(theta)] += 1
    assert [counts[t] for t in LIB.indices[:3]] == [8, 2, 2]


def test_build_worst_splits_evenly():
    led = _ranked_ledger()
    model = build_worst(led, 3, Architecture(), np.random.default_rng(0))
    bottom = [t for t, _ in rank_operators(led, 1)[-3:]]
    counts = {}
    for theta in model.assignments[0]:
        counts[int(theta)] = counts.get(int(theta), 0) + 1
    assert sorted(counts) == sorted(bottom)
    assert sorted(counts.values()) == [4, 4, 4]


def test_build_elite_respects_sublibrary():
    led = _ranked_ledger()
    model = build_elite(led, 2, Architecture(), np.random.default_rng(0))
    assert model.sublibrary.indices == LIB.indices
    for layer_assign in model.assignments[:2]:
        for theta in layer_assign:
            assert int(theta) in LIB
