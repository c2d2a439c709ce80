import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adsm.tensor import ContractViolation
from adsm.video import (TokenBatch, VideoSequence, build_linear_schedule, build_noise_schedule,
                        motion_weights, motion_weights_array, patchify, patchify_array, perturb,
                        sample_sigma_loguniform, sigma_to_index, stream, unpatchify, window_starts)


def test_two_level_ladder_is_the_endpoints():
    np.testing.assert_array_equal(build_noise_schedule(0.001, 1.0, 2).levels, [0.001, 1.0])


def test_twenty_level_ladder_matches_log_space_interpolation():
    levels = build_noise_schedule(0.001, 1.0, 20).levels
    oracle = np.exp(np.linspace(math.log(0.001), math.log(1.0), 20))
    np.testing.assert_allclose(levels, oracle, rtol=1e-12)
    r = math.exp(math.log(1000) / 19)
    assert r == pytest.approx(1.4384, abs=1e-4)
    np.testing.assert_allclose(levels[1:] / levels[:-1], r, rtol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.floats(1e-5, 0.1), st.floats(1.5, 1e4), st.integers(2, 60))
def test_geometric_ladder_properties(smin, span, L):
    levels = build_noise_schedule(smin, smin * span, L).levels
    assert len(levels) == L
    assert np.all(np.diff(levels) > 0)
    assert levels[0] == smin and levels[-1] == smin * span
    assert np.ptp(np.diff(np.log(levels))) <= 1e-12 * max(1.0, abs(np.log(span)))


def test_ladder_errors():
    with pytest.raises(ContractViolation):
        build_noise_schedule(1.0, 0.001, 5)
    with pytest.raises(ContractViolation):
        build_noise_schedule(0.0, 1.0, 5)
    with pytest.raises(ContractViolation):
        build_noise_schedule(0.001, 1.0, 0)


def test_linear_ladder():
    np.testing.assert_allclose(build_linear_schedule(0.1, 1.0, 4).levels, [0.1, 0.4, 0.7, 1.0])


def test_sigma_index_hits_ladder_steps():
    levels = build_noise_schedule(0.001, 1.0, 20).levels
    np.testing.assert_allclose(sigma_to_index(levels, 0.001, 1.0, 20), np.arange(1, 21), atol=1e-12)


def test_loguniform_mean_of_log():
    rng = np.random.default_rng(0)
    s = sample_sigma_loguniform(0.001, 1.0, rng, size=100_000)
    logs = np.log(s)
    se = logs.std() / math.sqrt(len(logs))
    assert abs(logs.mean() - (math.log(0.001) + math.log(1.0)) / 2) < 3 * se
    assert s.min() >= 0.001 and s.max() <= 1.0


def test_loguniform_degenerate_support():
    s = sample_sigma_loguniform(0.5 - 1e-9, 0.5, np.random.default_rng(1), size=1000)
    np.testing.assert_allclose(s, 0.5, rtol=1e-8)


def test_perturb_zero_sigma_returns_input_and_noise():
    x = np.random.default_rng(0).random((2, 4, 4, 3)).astype(np.float32)
    xt, eps = perturb(x, 0.0, np.random.default_rng(1))
    np.testing.assert_array_equal(xt, x)
    assert eps.shape == x.shape and eps.std() > 0


def test_perturb_per_batch_sigma():
    x = np.zeros((3, 2, 2), dtype=np.float64)
    xt, eps = perturb(x, np.array([0.0, 1.0, 2.0]), np.random.default_rng(0))
    np.testing.assert_allclose(xt, eps * np.array([0.0, 1.0, 2.0])[:, None, None])


def test_paper_geometry_token_count():
    frames = np.zeros((8, 160, 160, 3), dtype=np.float32)
    assert patchify(frames, 16).count == 800


def test_desk_geometry_token_count():
    assert patchify(np.zeros((8, 32, 32, 3)), 8).count == 8 * 16


def test_whole_frame_patches():
    x = np.random.default_rng(0).random((5, 8, 8, 2))
    tb = patchify(x, 8)
    assert tb.count == 5
    np.testing.assert_array_equal(tb.tokens[2], x[2].reshape(-1))


def test_token_order_is_frame_then_row_major():
    x = np.zeros((2, 4, 4, 1))
    x[1, 2:4, 0:2, 0] = 1.0  # frame 1, patch row 1, patch col 0
    tokens = patchify_array(x, 2)
    assert np.flatnonzero(tokens.sum(-1)).tolist() == [1 * 4 + 1 * 2 + 0]


def test_token_layout_within_patch():
    x = np.arange(1 * 2 * 2 * 3, dtype=np.float64).reshape(1, 2, 2, 3)
    np.testing.assert_array_equal(patchify_array(x, 2)[0], x[0].reshape(-1))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.sampled_from([(8, 2), (8, 4), (12, 3), (6, 6)]), st.integers(1, 3), st.integers(0, 2**16))
def test_patchify_round_trip(n, hd, c, seed):
    H, d = hd
    x = np.random.default_rng(seed).random((n, H, H, c)).astype(np.float32)
    tb = patchify(x, d)
    assert tb.count == n * (H // d) ** 2
    assert unpatchify(tb, H, H).tobytes() == x.tobytes()


def test_shuffled_tokens_reconstruct():
    x = np.random.default_rng(0).random((3, 8, 8, 3))
    tb = patchify(x, 4)
    perm = np.random.default_rng(1).permutation(tb.count)
    shuffled = TokenBatch(tb.tokens[perm], tb.positions[perm], 4, 3)
    np.testing.assert_array_equal(unpatchify(shuffled, 8, 8), x)


def test_missing_or_duplicate_token_is_an_error():
    tb = patchify(np.zeros((2, 8, 8, 1)), 4)
    with pytest.raises(ContractViolation):
        unpatchify(TokenBatch(tb.tokens[1:], tb.positions[1:], 4, 1), 8, 8)
    pos = tb.positions.copy()
    pos[1] = pos[0]
    with pytest.raises(ContractViolation):
        unpatchify(TokenBatch(tb.tokens, pos, 4, 1), 8, 8)


def test_indivisible_geometry_is_an_error():
    with pytest.raises(ContractViolation):
        patchify(np.zeros((2, 10, 10, 1)), 4)


def test_static_video_gets_uniform_weights():
    x = np.tile(np.random.default_rng(0).random((1, 8, 8, 3)), (4, 1, 1, 1))
    w = motion_weights(x, 4).omega
    np.testing.assert_allclose(w, 1 / 16)


def test_one_moving_patch_takes_all_weight():
    x = np.zeros((4, 8, 8, 1))
    x[-1, 4:6, 0:2, 0] = 0.5  # spatial patch (row 1, col 0) -> index 2
    w = motion_weights(x, 4).omega.reshape(4, 4)
    np.testing.assert_allclose(w[:, 2], 0.25)
    assert w[:, [0, 1, 3]].sum() == 0


def test_two_patch_shares():
    x = np.zeros((2, 4, 4, 1))
    x[-1, 0, 0, 0] = 0.2      # patch 0
    x[-1, 2, 3, 0] = 0.6      # patch 3
    mw = motion_weights(x, 2)
    np.testing.assert_allclose(mw.upsilon, [0.2, 0, 0, 0.6])
    np.testing.assert_allclose(mw.spatial, [0.25, 0, 0, 0.75])
    np.testing.assert_allclose(mw.omega, np.tile([0.125, 0, 0, 0.375], 2))


def test_motion_uses_channel_mean_of_per_channel_max():
    x = np.zeros((2, 2, 2, 2))
    x[-1, 0, 0, 0] = 0.4
    x[-1, 1, 1, 1] = 0.2
    np.testing.assert_allclose(motion_weights(x, 2).upsilon, [0.3])


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 5), st.integers(0, 2**16), st.booleans())
def test_motion_weights_sum_to_one(n, seed, static):
    rng = np.random.default_rng(seed)
    x = rng.random((2, n, 8, 8, 3))
    if static:
        x[:, -1] = x[:, 0]
    w = motion_weights_array(x, 4)
    assert w.shape == (2, n * 4)
    assert np.all(w >= 0)
    np.testing.assert_allclose(w.sum(-1), 1.0, atol=1e-9)


def test_motion_needs_two_frames():
    with pytest.raises(ContractViolation):
        motion_weights(np.zeros((1, 4, 4, 1)), 2)


def test_window_starts():
    assert window_starts(20, 8) == [0, 8]
    assert window_starts(16, 8) == [0, 8]
    assert window_starts(7, 8) == []


def test_stream_is_keyed_and_reproducible():
    a = stream(3, "x", 1).random(4)
    assert np.array_equal(a, stream(3, "x", 1).random(4))
    assert not np.array_equal(a, stream(3, "x", 2).random(4))


def test_video_sequence_validation():
    with pytest.raises(ContractViolation):
        VideoSequence(np.zeros((4, 8, 8)), 0)
    with pytest.raises(ContractViolation):
        VideoSequence(np.zeros((4, 8, 8, 1)), 0, np.zeros(3))
