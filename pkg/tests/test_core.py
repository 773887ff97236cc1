import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hiq.core import (
    ClassMeanSet,
    ConfigError,
    EmbeddingBatch,
    HashConfig,
    HierarchicalCode,
    SiblingPartition,
    compact_code,
    dense_code,
    validate_config,
)


def test_config_examples():
    validate_config(HashConfig(d=32, k=2, k_s=1, alpha=0.1, beta=0.1))
    validate_config(HashConfig(d=2, k=1, k_s=1))
    with pytest.raises(ConfigError, match="k_s exceeds d"):
        HashConfig(d=4, k=2, k_s=5)


@pytest.mark.parametrize(
    "kw, msg",
    [
        ({"d": 0, "k": 1}, "d must be positive"),
        ({"d": 4, "k": 0}, "k must be positive"),
        ({"d": 4, "k": 1, "k_s": 0}, "k_s must be at least 1"),
        ({"d": 4, "k": 1, "alpha": -1.0}, "alpha"),
        ({"d": 4, "k": 1, "beta": float("nan")}, "beta"),
        ({"d": 4, "k": 1, "cost_scale": 0}, "cost_scale"),
        ({"d": 1024, "k": 7}, "overflows"),
        ({"d": 2.5, "k": 1}, "integer"),
    ],
)
def test_config_rejects(kw, msg):
    with pytest.raises(ConfigError, match=msg):
        HashConfig(**kw)


def test_config_reports_every_problem():
    with pytest.raises(ConfigError) as exc:
        HashConfig(d=4, k=0, k_s=9, alpha=-1)
    text = str(exc.value)
    assert "k must be positive" in text and "k_s exceeds d" in text and "alpha" in text


def test_level_sparsity():
    cfg = HashConfig(d=8, k=3, k_s=2)
    assert [cfg.level_sparsity(v) for v in (1, 2, 3)] == [1, 1, 2]
    with pytest.raises(ValueError):
        cfg.level_sparsity(4)


def test_dense_code_examples():
    cfg = HashConfig(d=2, k=2, k_s=2)
    h = dense_code(HierarchicalCode((0,), (0, 1)), cfg)
    assert h.tolist() == [[1, 1], [0, 1]]

    h = dense_code(HierarchicalCode((), (2,)), HashConfig(d=3, k=1, k_s=1))
    assert h[:, 0].tolist() == [0, 0, 1]

    h = dense_code(HierarchicalCode((1, 3), (0, 2)), HashConfig(d=4, k=3, k_s=2))
    assert h[:, 0].tolist() == [0, 1, 0, 0]
    assert h[:, 1].tolist() == [0, 0, 0, 1]
    assert h[:, 2].tolist() == [1, 0, 1, 0]


def test_code_validation():
    cfg = HashConfig(d=4, k=2, k_s=2)
    with pytest.raises(ValueError, match="duplicate"):
        HierarchicalCode((0,), (1, 1))
    with pytest.raises(ValueError, match="leaves"):
        dense_code(HierarchicalCode((0,), (1,)), cfg)
    with pytest.raises(ValueError, match="outside"):
        dense_code(HierarchicalCode((4,), (0, 1)), cfg)
    with pytest.raises(ValueError):
        compact_code(np.ones((4, 2)), cfg)


def test_leaf_set_is_sorted():
    assert HierarchicalCode((), (3, 1)).leaf_set == (1, 3)


@pytest.mark.parametrize("d,k", [(d, k) for d in range(1, 5) for k in range(1, 4)])
def test_round_trip_exhaustive(d, k):
    for k_s in range(1, d + 1):
        cfg = HashConfig(d=d, k=k, k_s=k_s)
        for branch in itertools.product(range(d), repeat=k - 1):
            for leaves in itertools.combinations(range(d), k_s):
                code = HierarchicalCode(branch, leaves)
                assert compact_code(dense_code(code, cfg), cfg) == code


def test_batch_slices_cover_features():
    f = np.arange(24.0).reshape(2, 12)
    b = EmbeddingBatch(f, [0, 1], d=4)
    assert b.k == 3
    assert np.array_equal(np.hstack([b.level_slice(v) for v in (1, 2, 3)]), f)
    with pytest.raises(ValueError):
        b.level_slice(0)
    with pytest.raises(ValueError, match="multiple"):
        EmbeddingBatch(f, [0, 1], d=5)
    with pytest.raises(ValueError, match="labels"):
        EmbeddingBatch(f, [0], d=4)


def test_batch_is_read_only():
    b = EmbeddingBatch(np.zeros((2, 4)), [3, 1], d=2)
    with pytest.raises(ValueError):
        b.features[0, 0] = 1.0
    assert b.class_ids().tolist() == [3, 1]


def test_class_mean_set_shapes():
    s = ClassMeanSet([1.0, 2.0], [5], 1)
    assert s.n_c == 1 and s.d == 2
    with pytest.raises(ValueError):
        ClassMeanSet(np.zeros((2, 2)), [0], 1)


def test_partition_examples():
    p = SiblingPartition.from_keys([0, 0, 1])
    assert p.pool == (2,) and p.sibling_groups == ((0, 1),)
    assert p.group_of().tolist() == [1, 1, 0]
    assert SiblingPartition.from_keys([0, 1, 2]).sibling_groups == ()
    assert SiblingPartition.from_keys([7] * 4).sibling_groups == ((0, 1, 2, 3),)
    with pytest.raises(ValueError):
        SiblingPartition(((0,), (1,)))
    with pytest.raises(ValueError):
        SiblingPartition(((0,), (0, 1)))


@given(st.lists(st.integers(0, 5), min_size=1, max_size=20))
def test_partition_covers_classes(keys):
    p = SiblingPartition.from_keys(keys)
    members = sorted(c for g in p.groups for c in g)
    assert members == list(range(len(keys)))
    for g in p.sibling_groups:
        assert len(g) >= 2 and len({keys[c] for c in g}) == 1
    for a, b in itertools.combinations(range(len(keys)), 2):
        same = p.group_of()[a] == p.group_of()[b] and p.group_of()[a] > 0
        assert same == (keys[a] == keys[b])


@given(st.integers(1, 5), st.integers(1, 3), st.data())
def test_round_trip_property(d, k, data):
    k_s = data.draw(st.integers(1, d))
    cfg = HashConfig(d=d, k=k, k_s=k_s)
    branch = tuple(data.draw(st.integers(0, d - 1)) for _ in range(k - 1))
    leaves = data.draw(st.sets(st.integers(0, d - 1), min_size=k_s, max_size=k_s))
    code = HierarchicalCode(branch, tuple(leaves))
    h = dense_code(code, cfg)
    assert (h[:, :-1].sum(axis=0) == 1).all() and h[:, -1].sum() == k_s
    assert compact_code(h, cfg) == code
