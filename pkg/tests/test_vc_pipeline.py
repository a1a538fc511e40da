# tests/test_vc_pipeline.py
import numpy as np
import pytest
from scipy.spatial.distance import cdist

from errors import ConfigurationError, InputError, InputShapeError, NumericalFailureError
from kernels import ArdKernelParams
from svgp import SvdklModel, SvgpHead, VariationalState
from vc_pipeline import (MCC_COLUMNS, MCC_ORDER, F0Stats, Utterance, WarpingConfig, build_training_set,
                         convert_f0, convert_utterance, dtw_align, f0_stats, mcc_to_log_spectrum, mcd, warp_phase)


MCD_ONE_DIM = 10.0 / np.log(10.0) * np.sqrt(2.0)
MCD_ALL_DIMS = 10.0 / np.log(10.0) * np.sqrt(48.0)


def _utterance(mcc, f0=None):
    mcc = np.asarray(mcc, dtype=float)
    if f0 is None:
        f0 = np.full(mcc.shape[0], 120.0)
    return Utterance(16000, 5.0, f0, mcc)


def _separated_frames(frames):
    """Frames far apart from each other, so DTW keeps the diagonal."""
    t = np.arange(frames, dtype=float)[:, None]
    return 5.0 * t + 0.1 * np.arange(MCC_COLUMNS)[None, :]


def _brute_force_cost(cost):
    n_s, n_t = cost.shape
    best = np.inf
    stack = [(0, 0, cost[0, 0])]
    while stack:
        i, j, total = stack.pop()
        if i == n_s - 1 and j == n_t - 1:
            best = min(best, total)
            continue
        for di, dj in ((1, 1), (1, 0), (0, 1)):
            a, b = i + di, j + dj
            if a < n_s and b < n_t:
                stack.append((a, b, total + cost[a, b]))
    return best


def _identity_feature_model(rng, heads=MCC_ORDER):
    kernel = ArdKernelParams.isotropic(MCC_ORDER, length_scale=3.0)
    model_heads = [SvgpHead(VariationalState.from_cholesky(rng.standard_normal((2, MCC_ORDER)),
                                                          rng.standard_normal(2), 0.1 * np.eye(2)), 0.0)
                   for _ in range(heads)]
    return SvdklModel(None, kernel, model_heads, np.zeros(MCC_ORDER), np.ones(MCC_ORDER), np.zeros(heads),
                      f0_source=F0Stats(np.log(120.0), 0.1, 10), f0_target=F0Stats(np.log(200.0), 0.2, 10))


def test_dtw_identical_sequences(rng):
    seq = rng.standard_normal((6, MCC_ORDER))
    path, cost = dtw_align(seq, seq)
    assert path == [(i, i) for i in range(6)]
    assert cost == 0.0


def test_dtw_single_source_frame(rng):
    path, _ = dtw_align(rng.standard_normal((1, 3)), rng.standard_normal((5, 3)))
    assert path == [(0, j) for j in range(5)]


def test_dtw_matches_brute_force():
    rng = np.random.default_rng(77)
    for _ in range(50):
        src = rng.standard_normal((int(rng.integers(1, 9)), MCC_ORDER))
        tgt = rng.standard_normal((int(rng.integers(1, 9)), MCC_ORDER))
        path, cost = dtw_align(src, tgt)
        assert cost == _brute_force_cost(cdist(src, tgt, "sqeuclidean"))
        assert path[0] == (0, 0) and path[-1] == (src.shape[0] - 1, tgt.shape[0] - 1)
        for (i, j), (a, b) in zip(path, path[1:]):
            assert (a - i, b - j) in {(1, 0), (0, 1), (1, 1)}


def test_dtw_ties_prefer_diagonal():
    path, cost = dtw_align(np.zeros((4, 3)), np.zeros((4, 3)))
    assert path == [(i, i) for i in range(4)]
    assert cost == 0.0


def test_dtw_rejects_empty_and_mismatched():
    with pytest.raises(InputError):
        dtw_align(np.zeros((0, 3)), np.zeros((2, 3)))
    with pytest.raises(InputShapeError):
        dtw_align(np.zeros((2, 3)), np.zeros((2, 4)))


def test_training_set_from_identical_pair(rng):
    u = _utterance(rng.standard_normal((7, MCC_COLUMNS)))
    corpus = build_training_set([(u, u)])
    assert corpus.size == 7
    np.testing.assert_array_equal(corpus.X, corpus.Y)
    np.testing.assert_array_equal(corpus.X, u.mcc[:, 1:])


def test_training_set_concatenates_pairs(rng):
    pairs = [(_utterance(rng.standard_normal((n_s, MCC_COLUMNS))), _utterance(rng.standard_normal((n_t, MCC_COLUMNS))))
             for n_s, n_t in ((5, 7), (6, 3))]
    both = build_training_set(pairs, ["a", "b"])
    first = build_training_set(pairs[:1], ["a"])
    second = build_training_set(pairs[1:], ["b"])
    np.testing.assert_array_equal(both.X, np.vstack([first.X, second.X]))
    np.testing.assert_array_equal(both.Y, np.vstack([first.Y, second.Y]))
    assert both.provenance == first.provenance + second.provenance
    assert first.size >= 7 and second.size >= 6


def test_training_set_needs_two_frames(rng):
    short = _utterance(rng.standard_normal((1, MCC_COLUMNS)))
    with pytest.raises(InputError):
        build_training_set([(short, short)])


def test_f0_stats_two_points():
    stats = f0_stats([_utterance(np.zeros((2, MCC_COLUMNS)), np.exp([1.0, 3.0]))])
    assert stats.mean_log_f0 == pytest.approx(2.0)
    assert stats.std_log_f0 == pytest.approx(1.0)
    assert stats.voiced_frame_count == 2


def test_f0_stats_skip_unvoiced(rng):
    f0 = np.array([0.0, 110.0, 0.0, 130.0, 125.0, 0.0])
    mixed = f0_stats([_utterance(np.zeros((6, MCC_COLUMNS)), f0)])
    voiced = f0_stats([_utterance(np.zeros((3, MCC_COLUMNS)), f0[f0 > 0])])
    assert mixed == voiced


def test_constant_track_is_rejected_as_source():
    stats = f0_stats([_utterance(np.zeros((4, MCC_COLUMNS)), np.full(4, 100.0))])
    assert stats.mean_log_f0 == pytest.approx(np.log(100.0))
    assert stats.std_log_f0 == pytest.approx(0.0, abs=1e-12)
    flat = F0Stats(stats.mean_log_f0, 0.0, stats.voiced_frame_count)
    with pytest.raises(NumericalFailureError):
        convert_f0(np.full(4, 100.0), flat, stats)


def test_f0_stats_need_two_voiced_frames():
    with pytest.raises(InputError):
        f0_stats([_utterance(np.zeros((3, MCC_COLUMNS)), np.array([0.0, 100.0, 0.0]))])


def test_convert_f0_identity_and_mean():
    stats = F0Stats(np.log(150.0), 0.3, 100)
    track = np.array([0.0, 120.0, 150.0, 180.0, 0.0])
    np.testing.assert_allclose(convert_f0(track, stats, stats), track, rtol=1e-12)
    target = F0Stats(np.log(220.0), 0.2, 100)
    assert np.log(convert_f0(np.array([150.0]), stats, target)[0]) == pytest.approx(np.log(220.0))
    assert convert_f0(track, stats, target)[0] == 0.0


def test_convert_f0_scales_deviation():
    out = convert_f0(np.array([np.e]), F0Stats(0.0, 1.0, 2), F0Stats(0.0, 2.0, 2))
    assert out[0] == pytest.approx(np.exp(2.0))


def test_convert_f0_round_trip(rng):
    track = np.where(rng.uniform(size=50) < 0.3, 0.0, rng.uniform(80.0, 250.0, 50))
    src, tgt = F0Stats(np.log(120.0), 0.15, 40), F0Stats(np.log(210.0), 0.3, 40)
    back = convert_f0(convert_f0(track, src, tgt), tgt, src)
    np.testing.assert_allclose(back, track, rtol=1e-10)
    assert np.array_equal(back == 0.0, track == 0.0)


def test_convert_f0_maps_statistics(rng):
    track = np.where(rng.uniform(size=80) < 0.2, 0.0, rng.uniform(90.0, 160.0, 80))
    src = f0_stats([_utterance(np.zeros((80, MCC_COLUMNS)), track)])
    tgt = F0Stats(np.log(200.0), 0.25, 10)
    mapped = f0_stats([_utterance(np.zeros((80, MCC_COLUMNS)), convert_f0(track, src, tgt))])
    assert mapped.mean_log_f0 == pytest.approx(tgt.mean_log_f0, abs=1e-10)
    assert mapped.std_log_f0 == pytest.approx(tgt.std_log_f0, abs=1e-10)
    assert mapped.voiced_frame_count == src.voiced_frame_count


def test_convert_utterance_keeps_metadata(rng):
    model = _identity_feature_model(rng)
    src = Utterance(22050, 5.0, np.array([0.0, 110.0, 130.0]), rng.standard_normal((3, MCC_COLUMNS)),
                    [[0.1], [0.2], [0.3]])
    out = convert_utterance(model, src)
    assert out.frame_count == 3
    assert out.sample_rate_hz == 22050 and out.frame_period_ms == 5.0
    assert out.aperiodicity == [[0.1], [0.2], [0.3]]
    assert np.array_equal(out.mcc[:, 0], src.mcc[:, 0])
    assert out.f0_hz[0] == 0.0
    assert np.log(out.f0_hz[1]) == pytest.approx(2.0 * (np.log(110.0) - np.log(120.0)) + np.log(200.0))


def test_convert_utterance_without_f0_stats_copies_track(rng, caplog):
    model = _identity_feature_model(rng)
    model.f0_source = None
    src = _utterance(rng.standard_normal((4, MCC_COLUMNS)))
    out = convert_utterance(model, src)
    assert np.array_equal(out.f0_hz, src.f0_hz)
    assert "F0" in caplog.text


def test_convert_utterance_dimension_mismatch(rng):
    model = _identity_feature_model(rng, heads=3)
    with pytest.raises(ConfigurationError):
        convert_utterance(model, _utterance(rng.standard_normal((4, MCC_COLUMNS))))


def test_mcd_self_distance(rng):
    u = _utterance(rng.standard_normal((5, MCC_COLUMNS)))
    assert mcd(u, u) == 0.0


def test_mcd_one_dimension_offset():
    base = _separated_frames(6)
    shifted = base.copy()
    shifted[:, 7] += 1.0
    assert mcd(_utterance(base), _utterance(shifted)) == pytest.approx(MCD_ONE_DIM, abs=1e-9)
    assert MCD_ONE_DIM == pytest.approx(6.1419, abs=1e-4)


def test_mcd_all_dimension_offset():
    base = _separated_frames(6)
    shifted = base.copy()
    shifted[:, 1:] += 1.0
    assert mcd(_utterance(base), _utterance(shifted)) == pytest.approx(MCD_ALL_DIMS, abs=1e-9)


def test_mcd_ignores_energy_column():
    base = _separated_frames(4)
    louder = base.copy()
    louder[:, 0] += 10.0
    assert mcd(_utterance(base), _utterance(louder)) == 0.0


def test_mcd_symmetric_and_nonnegative(rng):
    for frames_a, frames_b in ((5, 8), (9, 4), (6, 6)):
        a = _utterance(rng.standard_normal((frames_a, MCC_COLUMNS)))
        b = _utterance(rng.standard_normal((frames_b, MCC_COLUMNS)))
        assert mcd(a, b) >= 0.0
        assert mcd(a, b) == pytest.approx(mcd(b, a), rel=1e-12)


def test_warp_phase_identity_at_zero_alpha():
    omega = np.linspace(0.0, np.pi, 1024)
    np.testing.assert_allclose(warp_phase(omega, 0.0), omega, atol=1e-12)


@pytest.mark.parametrize("alpha", [-0.5, 0.0, 0.41, 0.8])
def test_warp_phase_endpoints_and_monotone(alpha):
    omega = np.linspace(0.0, np.pi, 1024)
    beta = warp_phase(omega, alpha)
    assert beta[0] == pytest.approx(0.0, abs=1e-12)
    assert beta[-1] == pytest.approx(np.pi, abs=1e-12)
    assert np.all(np.diff(beta) > 0.0)


def test_warp_phase_quarter_point():
    assert warp_phase(np.pi / 2, 0.41) == pytest.approx(np.arctan2(1 - 0.41 ** 2, -2 * 0.41), abs=1e-15)
    assert warp_phase(np.pi / 2, 0.41) == pytest.approx(2.349, abs=1e-3)


def test_warp_phase_rejects_unstable_alpha():
    with pytest.raises(ConfigurationError):
        warp_phase(0.5, 1.0)


def test_log_spectrum_cases():
    cfg = WarpingConfig(alpha=0.41, num_bins=33)
    np.testing.assert_array_equal(mcc_to_log_spectrum(np.zeros(MCC_COLUMNS), cfg), np.zeros(33))
    dc = np.zeros(MCC_COLUMNS)
    dc[0] = 1.5
    np.testing.assert_allclose(mcc_to_log_spectrum(dc, cfg), 1.5, rtol=1e-15)
    first = np.zeros(MCC_COLUMNS)
    first[1] = 1.0
    omega = np.pi * np.arange(65) / 64
    np.testing.assert_allclose(mcc_to_log_spectrum(first, WarpingConfig(alpha=0.0, num_bins=65)), np.cos(omega),
                               atol=1e-12)


def test_log_spectrum_rejects_all_pole_branch():
    with pytest.raises(ConfigurationError):
        mcc_to_log_spectrum(np.zeros(MCC_COLUMNS), WarpingConfig(gamma=-0.5))


def test_utterance_validation():
    with pytest.raises(InputShapeError):
        Utterance(16000, 5.0, np.zeros(3), np.zeros((2, MCC_COLUMNS)))
    with pytest.raises(InputError):
        Utterance(16000, 5.0, np.array([-1.0, 0.0]), np.zeros((2, MCC_COLUMNS)))
