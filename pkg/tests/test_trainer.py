import dataclasses

import numpy as np
import pytest
import torch

from semloop.comparator import bce_loss
from semloop.config import ConfigError, ModelConfig, TrainConfig, load_train_config, train_config_from_dict
from semloop.graph import build_graph
from semloop.synth import synth_scenes
from semloop.trainer import (
    ArchitectureError, Checkpoint, GraphTable, NumericalError, load_checkpoint, make_optimizer, predict_pairs,
    save_checkpoint, train,
)


@pytest.fixture(scope="module")
def small_set():
    data = synth_scenes(0, 20, n_pairs=40, seq_id="t")
    graphs = {("t", k): build_graph(c, seed=k) for k, c in enumerate(data.scans)}
    return data.pairs, graphs


def _cfg(**kw):
    base = dict(learning_rate=1e-3, batch_size=8, epochs=5, val_fraction=0.0, seed=0)
    base.update(kw)
    return TrainConfig(**base)


def test_one_step_descends(small_set):
    pairs, graphs = small_set
    cfg = _cfg(learning_rate=1e-5, dtype="float64")
    from semloop.comparator import LoopClosureNet
    model = LoopClosureNet(cfg.model, seed=0).double()
    table = GraphTable(graphs, torch.float64)
    batch = pairs[:16]
    g1 = table.take([(p.seq_id, p.i) for p in batch])
    g2 = table.take([(p.seq_id, p.j) for p in batch])
    y = torch.tensor([float(p.label) for p in batch], dtype=torch.float64)
    opt = make_optimizer(model, dataclasses.replace(cfg, weight_decay=0.0))
    before = bce_loss(model(g1, g2), y)
    opt.zero_grad()
    before.backward()
    opt.step()
    with torch.no_grad():
        after = bce_loss(model(g1, g2), y)
    assert after.item() < before.item()


def test_loss_decreases_over_first_epochs(small_set):
    pairs, graphs = small_set
    ckpt = train(_cfg(), pairs, graphs)
    losses = [r["loss"] for r in ckpt.history]
    assert len(losses) == 5
    assert losses[-1] < losses[0]


def test_identical_seeds_reproduce(small_set):
    pairs, graphs = small_set
    a = train(_cfg(epochs=3), pairs, graphs)
    b = train(_cfg(epochs=3), pairs, graphs)
    assert abs(a.history[-1]["loss"] - b.history[-1]["loss"]) <= 1e-6
    assert all(np.array_equal(a.state[k], b.state[k]) for k in a.state)


def test_checkpoint_round_trip(tmp_path, small_set):
    pairs, graphs = small_set
    ckpt = train(_cfg(epochs=2), pairs, graphs)
    save_checkpoint(ckpt, tmp_path / "c.npz")
    back = load_checkpoint(tmp_path / "c.npz")
    assert back.config == ckpt.config
    assert back.threshold == ckpt.threshold
    assert back.history == ckpt.history
    assert set(back.state) == set(ckpt.state)
    for k in ckpt.state:
        assert back.state[k].dtype == ckpt.state[k].dtype
        assert np.array_equal(back.state[k], ckpt.state[k])
    table = GraphTable(graphs)
    p1 = predict_pairs(ckpt.build_model(), pairs, table)
    p2 = predict_pairs(back.build_model(), pairs, table)
    assert np.array_equal(p1, p2)


def test_wrong_class_count_rejected(tmp_path, small_set):
    pairs, graphs = small_set
    ckpt = train(_cfg(epochs=1), pairs, graphs)
    save_checkpoint(ckpt, tmp_path / "c.npz")
    with pytest.raises(ArchitectureError):
        load_checkpoint(tmp_path / "c.npz", num_classes=13)
    bad = Checkpoint(dataclasses.replace(ckpt.config, model=ModelConfig(num_classes=13)), ckpt.state)
    with pytest.raises(ArchitectureError):
        bad.build_model()


def test_graph_class_mismatch_rejected(small_set):
    pairs, graphs = small_set
    with pytest.raises(ArchitectureError):
        train(_cfg(model=ModelConfig(num_classes=13), epochs=1), pairs, graphs)


def test_missing_graph_rejected(small_set):
    pairs, graphs = small_set
    partial = dict(list(graphs.items())[:5])
    with pytest.raises(KeyError):
        train(_cfg(epochs=1), pairs, partial)


def test_nan_loss_aborts_with_dump(tmp_path, small_set):
    pairs, graphs = small_set
    bad = {k: dataclasses.replace(g) for k, g in graphs.items()}
    for g in bad.values():
        g.cen = g.cen.copy()
        g.cen[g.mask] = np.nan
    with pytest.raises(NumericalError):
        train(_cfg(epochs=1), pairs, bad, dump_dir=tmp_path)
    assert list(tmp_path.glob("nan_batch_epoch1.json"))


def test_epoch_log_is_key_value(tmp_path, small_set):
    pairs, graphs = small_set
    train(_cfg(epochs=2), pairs, graphs, log_path=tmp_path / "log.txt")
    lines = (tmp_path / "log.txt").read_text().splitlines()
    assert len(lines) == 2
    rec = dict(kv.split("=") for kv in lines[1].split())
    assert rec["epoch"] == "2" and float(rec["loss"]) > 0


def test_config_unknown_keys(tmp_path):
    with pytest.raises(ConfigError, match="bogus"):
        train_config_from_dict({"bogus": 1})
    with pytest.raises(ConfigError, match="model"):
        train_config_from_dict({"model": {"feat_dim": 32, "layers": 2}})
    with pytest.raises(ConfigError):
        train_config_from_dict({"learning_rate": -1})
    with pytest.raises(ConfigError):
        ModelConfig(feat_dim=30, heads=4)
    (tmp_path / "c.yaml").write_text("epochs: 3\nmodel:\n  diff: false\n")
    cfg = load_train_config(tmp_path / "c.yaml")
    assert cfg.epochs == 3 and cfg.model.diff is False and cfg.learning_rate == 1e-4


def test_default_recipe():
    cfg = TrainConfig()
    assert (cfg.learning_rate, cfg.batch_size, cfg.epochs) == (1e-4, 128, 50)
    assert cfg.model.feat_dim == 32 and cfg.model.k == 10 and cfg.max_nodes == 50
