import numpy as np
import pytest

from asymreduce import kernels
from asymreduce.backbone import gen_synthetic_sequence
from asymreduce.exceptions import InvalidInputError
from asymreduce.kv_path import (
    KvMode,
    KvReducer,
    kept_frames,
    length_adaptive_rkv,
    random_token_prune,
    stride_merge_with_average,
    stride_prune,
)

SC, P_PATCH = 5, 6
P = SC + P_PATCH


def test_kept_frames():
    np.testing.assert_array_equal(kept_frames(5, 1), np.arange(5))
    np.testing.assert_array_equal(kept_frames(6, 2), [0, 2, 4])
    assert kept_frames(1000, 25).size == 40
    with pytest.raises(InvalidInputError):
        kept_frames(6, 0)


def test_stride_prune_keeps_whole_frames(rng):
    S = 7
    x = rng.standard_normal((S * P, 3))
    out, frames = stride_prune(x, S, P, 3)
    np.testing.assert_array_equal(frames, [0, 3, 6])
    np.testing.assert_array_equal(out, x.reshape(S, P, 3)[[0, 3, 6]].reshape(-1, 3))


@pytest.mark.parametrize("r_kv", [1, 2, 3, 8])
def test_stride_prune_zero_comparisons(rng, r_kv):
    x = rng.standard_normal((9 * P, 3))
    with kernels.count_ops() as c:
        stride_prune(x, 9, P, r_kv)
        KvReducer(r_kv).reduce(x, 9, P)
    assert c.comparisons == 0


def test_merge_equals_prune_on_duplicates():
    S = 8
    x = gen_synthetic_sequence(S, P_PATCH, 4, "smooth_walk", seed=1, sigma=0.0).reshape(S * P, 4)
    np.testing.assert_array_equal(
        stride_merge_with_average(x, S, P, 3), stride_prune(x, S, P, 3)[0]
    )


def test_merge_cluster_means():
    # 2 frames, r=2: frame 1 patches are copies of frame 0 patches shifted by +2
    d = 3
    base = np.random.default_rng(0).standard_normal((P, d)) * 10
    f1 = base.copy()
    f1[SC:] += 2.0
    x = np.concatenate([base, f1])
    out = stride_merge_with_average(x, 2, P, 2)
    np.testing.assert_array_equal(out[:SC], base[:SC])
    np.testing.assert_allclose(out[SC:], base[SC:] + 1.0, rtol=1e-12)


def test_merge_counts_comparisons(rng):
    S, r = 6, 2
    x = rng.standard_normal((S * P, 3))
    with kernels.count_ops() as c:
        stride_merge_with_average(x, S, P, r)
    n_src = (S - S // r) * P_PATCH
    n_dst = (S // r) * P_PATCH
    assert c.comparisons == n_src * n_dst > 0


def test_random_prune_size_and_determinism(rng):
    x = rng.standard_normal((10 * P, 2))
    a = random_token_prune(x, 10, P, 3, seed=4)
    b = random_token_prune(x, 10, P, 3, seed=4)
    assert a.shape[0] == int(np.ceil(10 * P / 3))
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("S, expected", [(1, 1), (100, 1), (101, 3), (256, 7), (600, 15),
                                         (1000, 25)])
def test_length_adaptive_rkv(S, expected):
    assert length_adaptive_rkv(S) == expected


def test_reducer_modes(rng):
    x = rng.standard_normal((6 * P, 2))
    assert KvReducer(2, "stride_merge").mode is KvMode.STRIDE_MERGE
    assert KvReducer(2).reduce(x, 6, P).shape == (3 * P, 2)
    assert KvReducer(2, "stride_merge").reduce(x, 6, P).shape == (3 * P, 2)
    with pytest.raises(ValueError):
        KvReducer(2, "bogus")
