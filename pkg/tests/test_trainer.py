import numpy as np
import pytest
from _fd import numeric_grad, rel_error

from hiq.core import ConfigError, HashConfig
from hiq.data import Dataset, gen_synthetic, split
from hiq.retrieval import build_table, nmi, precision_at_k, query_batch
from hiq.trainer import (
    EmbeddingModel,
    TrainConfig,
    TrainingDiverged,
    history_csv,
    load_checkpoint,
    make_model,
    sample_minibatch,
    save_checkpoint,
    train,
)

HCFG = HashConfig(d=4, k=2, k_s=1)


def small_data():
    return gen_synthetic(4, 10, 6, 6.0, 0)


def test_sample_minibatch_examples():
    ds = small_data()
    x, y = sample_minibatch(ds, 2, 2, np.random.default_rng(0))
    assert x.shape == (4, 6) and len(set(y.tolist())) == 2
    assert sorted(np.unique(y, return_counts=True)[1].tolist()) == [2, 2]
    x2, y2 = sample_minibatch(ds, 2, 2, np.random.default_rng(0))
    assert np.array_equal(x, x2) and np.array_equal(y, y2)
    with pytest.raises(ValueError, match="need 5 classes"):
        sample_minibatch(ds, 5, 2, np.random.default_rng(0))


def test_sample_minibatch_without_replacement():
    ds = Dataset(np.arange(6.0)[:, None], [0, 0, 0, 1, 1, 2])
    for seed in range(20):
        x, y = sample_minibatch(ds, 2, 2, np.random.default_rng(seed))
        assert len(set(x[:, 0].tolist())) == 4 and 2 not in y.tolist()


def test_model_shapes_and_identity_base():
    m = EmbeddingModel.create("one_hidden", 5, 8, hidden=7, seed=1)
    x = np.random.default_rng(0).normal(size=(3, 5))
    assert m.forward(x).shape == (3, 8) and m.out_dim == 8
    assert np.array_equal(m.base_embedding(x), x)
    m2 = EmbeddingModel.create("linear", 5, 8, base_dim=3, seed=1)
    assert m2.base_embedding(x).shape == (3, 3) and m2.base_dim == 3
    with pytest.raises(ValueError):
        EmbeddingModel("deep", {})


@pytest.mark.parametrize("kind", ["linear", "one_hidden"])
def test_model_backward(kind):
    rng = np.random.default_rng(2)
    m = EmbeddingModel.create(kind, 4, 6, hidden=5, base_dim=3, seed=3)
    x = rng.normal(size=(5, 4))
    w = rng.normal(size=(5, 6))
    grads = m.backward(x, w)
    for name, p in m.params.items():
        def fn(v, name=name):
            c = m.copy()
            c.params[name] = v
            return float((c.forward(x) * w).sum())
        assert rel_error(grads[name], numeric_grad(fn, p.copy())) < 1e-6


def test_config_validation():
    with pytest.raises(ConfigError, match="lr"):
        TrainConfig(lr=0)
    with pytest.raises(ConfigError, match="loss_kind"):
        TrainConfig(loss_kind="hinge")
    with pytest.raises(ConfigError, match="remap"):
        TrainConfig(remap="sometimes")
    assert TrainConfig(lr_milestones=[2, 4]).lr_at(3) == pytest.approx(0.03 * 0.3)
    assert TrainConfig(lr_milestones=[2, 4]).lr_at(4) == pytest.approx(0.03 * 0.09)


def test_zero_iterations_leave_model_unchanged():
    ds = small_data()
    m = make_model(TrainConfig(max_iter=0), HCFG, ds.input_dim)
    res = train(ds, m, TrainConfig(max_iter=0, n_classes=4), HCFG)
    assert res.history == []
    for k, v in m.params.items():
        assert np.array_equal(res.model.params[k], v)


def test_freeze_base():
    ds = small_data()
    tcfg = TrainConfig(max_iter=20, n_classes=4)
    m = make_model(tcfg, HCFG, ds.input_dim)
    res = train(ds, m, tcfg, HCFG)
    assert np.array_equal(res.model.params["Wb"], m.params["Wb"])
    assert np.array_equal(res.model.params["bb"], m.params["bb"])
    assert not np.array_equal(res.model.params["W"], m.params["W"])
    tcfg = TrainConfig(max_iter=20, n_classes=4, freeze_base=False)
    res = train(ds, m, tcfg, HCFG)
    assert not np.array_equal(res.model.params["Wb"], m.params["Wb"])


def test_history_records():
    ds = small_data()
    tcfg = TrainConfig(max_iter=5, n_classes=3, loss_kind="triplet", lr_milestones=[3])
    res = train(ds, make_model(tcfg, HCFG, ds.input_dim), tcfg, HCFG)
    assert [r["iteration"] for r in res.history] == list(range(5))
    assert [r["lr"] for r in res.history][2:4] == [0.03, 0.03 * 0.3]
    for r in res.history:
        assert r["bound_gap"] >= -1e-12 and 1 <= r["occupancy_1"] <= 3 and 1 <= r["occupancy_2"] <= 3
    text = history_csv(res.history, 2)
    assert text.splitlines()[0] == "iteration,loss,g_hat,bound_gap,lr,occupancy_1,occupancy_2"
    assert len(text.splitlines()) == 6


def test_training_is_reproducible():
    ds = small_data()
    tcfg = TrainConfig(max_iter=30, n_classes=4, seed=5)
    m = make_model(tcfg, HCFG, ds.input_dim)
    a = train(ds, m, tcfg, HCFG)
    b = train(ds, m, tcfg, HCFG)
    assert history_csv(a.history, 2) == history_csv(b.history, 2)
    assert all(np.array_equal(a.model.params[k], b.model.params[k]) for k in m.params)


def test_python_backend_gives_same_run():
    ds = small_data()
    tcfg = TrainConfig(max_iter=15, n_classes=4, seed=2)
    m = make_model(tcfg, HCFG, ds.input_dim)
    a = train(ds, m, tcfg, HCFG, backend="python")
    b = train(ds, m, tcfg, HCFG)
    assert history_csv(a.history, 2) == history_csv(b.history, 2)


def test_divergence_guard():
    ds = small_data()
    tcfg = TrainConfig(max_iter=3, n_classes=4)
    m = make_model(tcfg, HCFG, ds.input_dim)
    m.params["W"][0, 0] = np.nan
    with pytest.raises(TrainingDiverged) as exc:
        train(ds, m, tcfg, HCFG)
    assert exc.value.snapshot["iteration"] == 0 and "W" in exc.value.snapshot["param_norms"]


def test_width_mismatch():
    ds = small_data()
    m = EmbeddingModel.create("linear", 6, 5)
    with pytest.raises(ValueError, match="d\\*k"):
        train(ds, m, TrainConfig(max_iter=1, n_classes=2), HCFG)


def test_checkpoint_round_trip(tmp_path):
    ds = small_data()
    tcfg = TrainConfig(max_iter=3, n_classes=4, lr_milestones=[1])
    res = train(ds, make_model(tcfg, HCFG, ds.input_dim), tcfg, HCFG)
    path = tmp_path / "ck.json"
    save_checkpoint(path, res.model, tcfg, HCFG, res.rng_state, 3)
    model, t2, h2, rec = load_checkpoint(path)
    assert t2 == tcfg and h2 == HCFG and rec["iteration"] == 3
    assert rec["rng_state"] == res.rng_state
    x = ds.features[:4]
    assert np.array_equal(model.forward(x), res.model.forward(x))
    path.write_text('{"format": "hiq-checkpoint", "version": 99}')
    with pytest.raises(ValueError, match="version"):
        load_checkpoint(path)


def test_sixteen_dim_clusters_end_to_end():
    ds = gen_synthetic(8, 100, 16, 8.0, 7)
    items, queries = split(ds, 0.2, 7)
    tcfg = TrainConfig(max_iter=500, n_classes=8, seed=7)
    res = train(items, make_model(tcfg, HCFG, 16), tcfg, HCFG)
    table = build_table(items.features, res.model, HCFG)
    rankings, _ = query_batch(table, queries.features, res.model)
    assert nmi(table, items.labels) >= 0.8
    assert precision_at_k(rankings, queries.labels, items.labels, 1) >= 0.9


def test_divergence_guard_on_loss(monkeypatch):
    import hiq.trainer as tr
    from hiq.metric import LossOutput

    def nan_loss(batch, *a, **kw):
        return LossOutput(float("nan"), np.zeros_like(batch.features))

    monkeypatch.setattr(tr, "total_embedding_loss", nan_loss)
    ds = small_data()
    tcfg = TrainConfig(max_iter=3, n_classes=4)
    with pytest.raises(TrainingDiverged, match="loss"):
        train(ds, make_model(tcfg, HCFG, ds.input_dim), tcfg, HCFG)
