import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phasesteer.oscillation import (OscillatoryPair, PairFilterConfig, amplitude_zscores, analytic_signal,
                                    circular_mean, energy_map, filter_pairs, frequency_proxy, identify_pairs,
                                    node_average, rank_pairs, score_pairs, wrap)
from phasesteer.representation import IdentityMap, LatentMap, forward_array

T = np.arange(120)


def test_node_average():
    assert np.array_equal(node_average(np.full((5, 3, 2), 2.5), 1), np.full(5, 2.5))
    X = np.tile(np.arange(4.0)[None, :, None], (6, 1, 1))
    assert np.array_equal(node_average(X, 0), np.full(6, 1.5))
    with pytest.raises(IndexError):
        node_average(X, 1)


def test_planted_feature_series(clean_ds):
    p = clean_ds.process
    ref = p.amplitudes[0] * np.cos(p.frequencies[0] * clean_ds.frames + p.phases[0]) * p.pair_footprints[0].mean()
    np.testing.assert_allclose(node_average(clean_ds.true_latents, 0), ref, atol=1e-12)


def test_cosine_analytic_signal():
    phase, env = analytic_signal(np.cos(2 * np.pi * T / 20))
    slope = np.diff(np.unwrap(phase))[5:-5]
    assert np.all(np.abs(slope - 2 * np.pi / 20) <= 0.02 * 2 * np.pi / 20)
    assert np.all(np.abs(env[5:-5] - 1.0) <= 0.05)


def test_constant_series_has_no_envelope():
    _, env = analytic_signal(np.full(30, 4.2))
    assert np.all(env < 1e-12)


def test_sin_cos_quadrature():
    w = 2 * np.pi / 20
    pc, _ = analytic_signal(np.cos(w * T))
    ps, _ = analytic_signal(np.sin(w * T))
    assert np.all(np.abs(wrap(pc - ps)[5:-5] - np.pi / 2) <= 0.02)


def test_sin_cos_quadrature_with_leakage():
    # 120 frames hold a non-integer number of periods: pointwise error grows, the mean stays put
    w = 2 * np.pi / 23
    pc, _ = analytic_signal(np.cos(w * T))
    ps, _ = analytic_signal(np.sin(w * T))
    assert abs(np.angle(circular_mean(pc, ps, 5)) - np.pi / 2) <= 0.02


def test_analytic_signal_rejects_short():
    with pytest.raises(ValueError):
        analytic_signal(np.ones(7))


def test_frequency_proxy_linear_phase():
    assert abs(frequency_proxy(0.3 * np.arange(50)) - 0.3) < 1e-9
    assert abs(frequency_proxy(wrap(0.3 * np.arange(50))) - 0.3) < 1e-9


def test_frequency_proxy_single_wrap():
    phase = np.array([2.8, 3.0, -3.1, -2.9, -2.7])
    assert abs(frequency_proxy(phase) - frequency_proxy(np.unwrap(phase))) < 1e-12


def test_frequency_proxy_planted():
    w = 2 * np.pi / 24
    phase, _ = analytic_signal(np.cos(w * T + 0.4))
    assert abs(frequency_proxy(phase, 5) - w) <= 0.02 * w


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=8, max_size=64))
def test_envelope_dominates_real_part(xs):
    x = np.array(xs)
    _, env = analytic_signal(x)
    assert np.all(env >= np.abs(x - x.mean()) - 1e-9 * max(1.0, np.abs(x).max()))


@pytest.mark.parametrize("H", [60, 90, 120])
def test_hilbert_pair_coherence(H):
    x = np.cos(2 * np.pi * np.arange(H + 10) / 17)
    p1, _ = analytic_signal(x)
    p2, _ = analytic_signal(np.imag(np.fft.ifft(np.fft.fft(x - x.mean()) * _onesided(len(x)))))
    assert abs(circular_mean(p1, p2, 5)) >= 0.95


def _onesided(n):
    g = np.zeros(n)
    g[0] = 1
    g[1:(n + 1) // 2] = 2
    if n % 2 == 0:
        g[n // 2] = 1
    return g


def test_robust_zscores():
    z = amplitude_zscores([1.0, 1.0, 1.0, 1.0, 5.0])
    assert z[-1] > 1 and np.all(z[:4] < 0)
    assert np.array_equal(amplitude_zscores([2.0, 2.0]), [0.0, 0.0])


def _field(series, N=6):
    """Broadcast [T, D] node-uniform series to a [T, N, D] field."""
    s = np.asarray(series).T
    return np.repeat(s[:, None, :], N, axis=1)


def _toy(seed=0, D=12):
    r = np.random.default_rng(seed)
    cols = [0.05 * r.normal(size=120) for _ in range(D)]
    cols[3] = np.cos(0.3 * T)
    cols[7] = np.sin(0.3 * T)
    return _field(cols)


def test_planted_pairs_are_candidates(clean_ds):
    X = forward_array(LatentMap(clean_ds.mixing), clean_ds.embeddings.values)
    pairs = filter_pairs(X)
    found = {(p.i, p.j) for p in pairs}
    assert {(i, j) for i, j, _ in clean_ds.true_pairs} <= found
    planted = {f for i, j, _ in clean_ds.true_pairs for f in (i, j)}
    assert all(p.i in planted or p.j in planted for p in pairs)


def test_filter_orients_pair():
    pairs = filter_pairs(_toy(), PairFilterConfig(z_amp_min=2.0))
    assert [(p.i, p.j) for p in pairs] == [(3, 7)]
    assert abs(pairs[0].mean_phase_diff - np.pi / 2) < 0.05
    X = _toy()
    X[:, :, [3, 7]] = X[:, :, [7, 3]]
    assert [(p.i, p.j) for p in filter_pairs(X)] == [(7, 3)]


def test_frequency_gate():
    r = np.random.default_rng(0)
    cols = [0.01 * r.normal(size=120) for _ in range(10)]
    cols[0], cols[1] = np.cos(0.3 * T), np.sin(0.6 * T)
    assert filter_pairs(_field(cols)) == []


def test_duplicate_feature_fails_quadrature():
    r = np.random.default_rng(0)
    cols = [0.01 * r.normal(size=120) for _ in range(10)]
    cols[0] = cols[1] = np.cos(0.3 * T)
    assert filter_pairs(_field(cols)) == []
    with pytest.raises(ValueError):
        OscillatoryPair(1, 1, 0.3, 1.0, 0.0)


def test_filter_permutation_symmetric():
    X = _toy(3)
    perm = np.random.default_rng(1).permutation(X.shape[2])
    inv = np.argsort(perm)
    a = {(p.i, p.j) for p in filter_pairs(X)}
    b = {(int(inv[p.i]), int(inv[p.j])) for p in filter_pairs(X[:, :, inv])}
    assert a == b


def test_energy_map():
    X = np.zeros((4, 3, 2))
    assert not energy_map(X, 1).any()
    X[:, 0, 0] = 1.0
    assert energy_map(X, 0).tolist() == [1.0, 0.0, 0.0]
    with pytest.raises(IndexError):
        energy_map(X, 2)


def test_planted_energy_map(clean_ds):
    p = clean_ds.process
    c = p.amplitudes[0] * np.cos(p.frequencies[0] * clean_ds.frames + p.phases[0])
    ref = p.pair_footprints[0] ** 2 * np.mean(c ** 2)
    np.testing.assert_allclose(energy_map(clean_ds.true_latents, 0), ref, atol=1e-12)


def test_single_candidate_returned():
    cand = [OscillatoryPair(0, 1, 0.3, 0.7, 1.5)]
    out = rank_pairs(cand, _toy(), IdentityMap(12))
    assert [(p.i, p.j) for p in out] == [(0, 1)]


def test_colocalized_pair_ranks_first():
    X = np.zeros((120, 4, 4))
    X[:, 0, 0], X[:, 0, 1] = np.cos(0.3 * T), np.sin(0.3 * T)  # same node
    X[:, 1, 2], X[:, 2, 3] = np.cos(0.3 * T), np.sin(0.3 * T)  # disjoint nodes
    cand = [OscillatoryPair(2, 3, 0.3, 0.99, 1.57), OscillatoryPair(0, 1, 0.3, 0.99, 1.57)]
    scored = {(p.i, p.j): p for p in score_pairs(cand, X, IdentityMap(4))}
    assert scored[(0, 1)].footprint_score == pytest.approx(1.0) and scored[(2, 3)].footprint_score == 0.0
    out = rank_pairs(cand, X, IdentityMap(4))
    assert (out[0].i, out[0].j) == (0, 1)


def test_rank_ties_lexicographic():
    cand = [OscillatoryPair(4, 5, 0.3, 0.9, 1.5), OscillatoryPair(2, 3, 0.3, 0.9, 1.5)]
    X = np.zeros((120, 3, 6))
    out = rank_pairs(cand, X, IdentityMap(6))
    assert [(p.i, p.j) for p in out] == [(2, 3), (4, 5)]


def test_top_planted_pairs(clean_ds):
    X = forward_array(LatentMap(clean_ds.mixing), clean_ds.embeddings.values)
    out = identify_pairs(X, LatentMap(clean_ds.mixing), PairFilterConfig(top_P=3))
    assert sorted((p.i, p.j) for p in out) == [(i, j) for i, j, _ in clean_ds.true_pairs]


def test_rank_scale_invariant_per_metric():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(120, 6, 10)) ** 2
    cand = [OscillatoryPair(2 * k, 2 * k + 1, 0.3, rng.uniform(0.6, 1.0), 1.5) for k in range(5)]
    base = [(p.i, p.j) for p in rank_pairs(cand, X, IdentityMap(10), PairFilterConfig(top_P=5))]
    # amplitude score is linear in the field, footprint overlap is scale-free
    scaled = [(p.i, p.j) for p in rank_pairs(cand, 7.5 * X, IdentityMap(10), PairFilterConfig(top_P=5))]
    assert scaled == base
