import math

import numpy as np
import pytest
from _fd import KINK_MARGIN, numeric_grad, random_loss_batch, rel_error
from hypothesis import given
from hypothesis import strategies as st

from hiq.core import EmbeddingBatch, HashConfig
from hiq.hashopt import cascade_assign
from hiq.metric import (
    masked_distance,
    npair_indices,
    npairs_loss,
    pairwise_masked,
    total_embedding_loss,
    triplet_semihard_loss,
)


def test_masked_distance_examples():
    e0, e1 = [1, 0], [0, 1]
    assert masked_distance([1, 5], [1, 5], e0, e1) == 0
    assert masked_distance([1, 5], [3, 9], e0, e0) == 2
    assert masked_distance([1, 5], [3, 9], e0, e1) == 6
    with pytest.raises(ValueError):
        masked_distance([1, 5], [3, 9, 1], e0, e1)


@given(st.integers(0, 2**32 - 1))
def test_distance_symmetry(seed):
    rng = np.random.default_rng(seed)
    f, codes, _ = random_loss_batch(rng)
    dist, _, _ = pairwise_masked(f, codes)
    assert np.allclose(dist, dist.T) and (dist >= 0).all() and (np.diag(dist) == 0).all()
    i, j = rng.integers(0, len(f), size=2)
    assert dist[i, j] == pytest.approx(masked_distance(f[i], f[j], codes[i], codes[j]))


def test_triplet_degenerate():
    f = np.ones((4, 3))
    codes = np.tile([1, 0, 0], (4, 1))
    out = triplet_semihard_loss(f, codes, [0, 0, 1, 1], margin=0.7)
    assert out.value == pytest.approx(0.7)


def test_triplet_single_class_warns():
    out = triplet_semihard_loss(np.random.default_rng(0).normal(size=(3, 2)), np.ones((3, 2)), [4, 4, 4])
    assert out.value == 0 and not out.grad.any() and out.warnings


def test_triplet_semi_hard_selection():
    # anchor 0, positive 1 at distance 1; negatives at 0.5 (easy side), 1.5, 3
    f = np.array([[0.0], [1.0], [0.5], [1.5], [3.0]])
    out = triplet_semihard_loss(f, np.ones((5, 1)), [0, 0, 1, 2, 3], margin=1.0)
    # pair (0,1): d_ap=1 picks 1.5 -> 0.5 ; pair (1,0): d_ap=1, negatives at 0.5,0.5,2 -> picks 2 -> 0
    assert out.value == pytest.approx(0.25)


def test_triplet_masked_coordinate_is_silent(rng):
    f = rng.normal(size=(6, 3))
    codes = np.tile([1, 1, 0], (6, 1))
    labels = [0, 0, 1, 1, 2, 2]
    out = triplet_semihard_loss(f, codes, labels)
    assert not out.grad[:, 2].any()
    g = f.copy()
    g[:, 2] += 10
    assert triplet_semihard_loss(g, codes, labels).value == out.value


def test_npairs_saturated():
    f = np.array([[0.0], [0.0], [100.0], [100.0]])
    out = npairs_loss(f, np.ones((4, 1)), [0, 0, 1, 1])
    assert out.value < 1e-30


def test_npairs_uniform_distances():
    f = np.zeros((6, 2))
    out = npairs_loss(f, np.ones((6, 2)), [0, 0, 1, 1, 2, 2])
    assert out.value == pytest.approx(math.log(3))


def test_npairs_single_example_class():
    f = np.random.default_rng(1).normal(size=(5, 2))
    out = npairs_loss(f, np.ones((5, 2)), [0, 0, 1, 1, 2])
    assert any("single example" in w for w in out.warnings)
    assert not out.grad[4].any()


def test_npair_rotation():
    labels = [5, 5, 5, 9, 9]
    a0, p0, _ = npair_indices(labels, 0)
    a1, p1, _ = npair_indices(labels, 1)
    assert (a0.tolist(), p0.tolist()) == ([0, 3], [1, 4])
    assert (a1.tolist(), p1.tolist()) == ([1, 4], [2, 3])


def test_npairs_l2_penalty():
    f = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 0.0], [0.0, 2.0]])
    codes = np.ones((4, 2))
    base = npairs_loss(f, codes, [0, 0, 1, 1]).value
    reg = npairs_loss(f, codes, [0, 0, 1, 1], l2_reg=0.1).value
    # anchors 0,2 and positives 1,3: mean |a|^2 = 2.5, mean |p|^2 = 2.5
    assert reg - base == pytest.approx(0.1 * 0.25 * 5.0)


@pytest.mark.parametrize("seed", range(10))
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    checked = 0
    while checked < 2:
        f, codes, labels = random_loss_batch(rng)
        for loss in (
            lambda x: triplet_semihard_loss(x, codes, labels, margin=0.5),
            lambda x: npairs_loss(x, codes, labels, l2_reg=0.01, rotation=seed),
        ):
            out = loss(f)
            if out.kink_gap < KINK_MARGIN:
                continue
            num = numeric_grad(lambda x: loss(x).value, f)
            assert rel_error(out.grad, num) < 1e-4
            checked += 1


@given(st.integers(0, 2**32 - 1))
def test_mask_locality(seed):
    rng = np.random.default_rng(seed)
    f, codes, labels = random_loss_batch(rng)
    silent = ~codes.astype(bool).any(axis=0)
    for out in (triplet_semihard_loss(f, codes, labels), npairs_loss(f, codes, labels)):
        assert not out.grad[:, silent].any()
        assert np.isfinite(out.grad).all()


def level_batch(rng, k):
    d = 3
    f = rng.normal(size=(8, d * k))
    return EmbeddingBatch(f, np.repeat(np.arange(4), 2), d), HashConfig(d=d, k=k, k_s=2, alpha=0.1, beta=0.1)


def test_total_loss_depth_one(rng):
    b, cfg = level_batch(rng, 1)
    lev = cascade_assign(b, cfg).levels
    out = total_embedding_loss(b, lev, "triplet")
    single = triplet_semihard_loss(b.level_slice(1), lev[0].item_codes, lev[0].remapped_labels)
    assert out.value == single.value and np.array_equal(out.grad, single.grad)


def test_total_loss_block_structure(rng):
    b, cfg = level_batch(rng, 2)
    lev = cascade_assign(b, cfg).levels
    # every item shares one remapped label at level 2 -> that level's loss is zero
    lev[1] = type(lev[1])(**{**lev[1].__dict__, "remapped_labels": np.zeros(8, dtype=np.int64)})
    out = total_embedding_loss(b, lev, "triplet")
    assert not out.grad[:, 3:].any()


@pytest.mark.parametrize("kind", ["triplet", "npairs"])
def test_total_loss_directional_derivative(kind):
    rng = np.random.default_rng(3)
    for _ in range(20):
        b, cfg = level_batch(rng, 2)
        lev = cascade_assign(b, cfg).levels
        out = total_embedding_loss(b, lev, kind)
        if out.kink_gap < KINK_MARGIN:
            continue
        u = rng.normal(size=b.features.shape)
        h = 1e-6

        def val(x):
            return total_embedding_loss(EmbeddingBatch(x, b.labels, b.d), lev, kind).value

        fd = (val(b.features + h * u) - val(b.features - h * u)) / (2 * h)
        an = float((out.grad * u).sum())
        assert abs(fd - an) <= 1e-4 * max(abs(an), 1e-6)
        return
    pytest.fail("no kink-free batch found")


def test_total_loss_validation(rng):
    b, cfg = level_batch(rng, 2)
    lev = cascade_assign(b, cfg).levels
    with pytest.raises(ValueError):
        total_embedding_loss(b, lev[:1])
    with pytest.raises(ValueError):
        total_embedding_loss(b, lev, "contrastive")
