"""End-to-end training of encoder and comparator on labelled scan pairs."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import metrics
from .comparator import LoopClosureNet, bce_loss
from .config import TrainConfig, config_hash, model_config_from_dict, train_config_from_dict
from .encoder import stack_graphs

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
_DTYPES = {"float32": torch.float32, "float64": torch.float64}


class NumericalError(RuntimeError):
    pass


class ArchitectureError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: TrainConfig
    state: dict  # parameter name -> numpy array
    history: list = field(default_factory=list)
    threshold: float = 0.5

    def build_model(self) -> LoopClosureNet:
        model = LoopClosureNet(self.config.model).to(_DTYPES[self.config.dtype])
        expected = {k: tuple(v.shape) for k, v in model.state_dict().items()}
        got = {k: tuple(v.shape) for k, v in self.state.items()}
        if expected != got:
            missing = sorted(set(expected) - set(got))
            extra = sorted(set(got) - set(expected))
            shapes = sorted(k for k in set(expected) & set(got) if expected[k] != got[k])
            raise ArchitectureError(f"checkpoint does not fit model: missing={missing} extra={extra} shape={shapes}")
        model.load_state_dict({k: torch.from_numpy(np.array(v)) for k, v in self.state.items()})
        model.eval()
        return model


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": ckpt.config.to_dict(),
        "config_hash": config_hash(ckpt.config.to_dict()),
        "history": ckpt.history,
        "threshold": ckpt.threshold,
    }
    arrays = {f"param/{k}": v for k, v in ckpt.state.items()}
    arrays["__meta__"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path, num_classes: int | None = None) -> Checkpoint:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(data["__meta__"].tobytes().decode())
        state = {k[len("param/"):]: data[k] for k in data.files if k.startswith("param/")}
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ArchitectureError(f"checkpoint version {meta.get('version')} is not supported")
    cfg = train_config_from_dict(meta["config"])
    if num_classes is not None and cfg.model.num_classes != num_classes:
        raise ArchitectureError(f"checkpoint was trained for {cfg.model.num_classes} classes, data has {num_classes}")
    ckpt = Checkpoint(cfg, state, meta.get("history", []), float(meta.get("threshold", 0.5)))
    ckpt.build_model()  # validates the parameter set against the embedded architecture
    return ckpt


def model_state(model) -> dict:
    return {k: v.detach().cpu().numpy().copy() for k, v in model.state_dict().items()}


# ---------------------------------------------------------------------------


class GraphTable:
    """Graphs stacked once into tensors, addressed by ``(seq_id, index)`` key."""

    def __init__(self, graphs: dict, dtype=torch.float32):
        self.keys = sorted(graphs)
        self.row = {k: r for r, k in enumerate(self.keys)}
        self.tensors = stack_graphs([graphs[k] for k in self.keys], dtype) if self.keys else None

    def take(self, keys):
        rows = torch.as_tensor([self.row[k] for k in keys], dtype=torch.long)
        return tuple(t[rows] for t in self.tensors)


def predict_pairs(model: LoopClosureNet, pairs, table: GraphTable, batch_size: int = 512) -> np.ndarray:
    """Same-place probability for every pair; each graph is encoded once."""
    keys = sorted({(p.seq_id, k) for p in pairs for k in (p.i, p.j)})
    if not keys:
        return np.zeros(0)
    with torch.no_grad():
        vecs = []
        for s in range(0, len(keys), batch_size):
            vecs.append(model.encoder(*table.take(keys[s:s + batch_size])))
        vecs = torch.cat(vecs)
        pos = {k: r for r, k in enumerate(keys)}
        a = torch.as_tensor([pos[(p.seq_id, p.i)] for p in pairs])
        b = torch.as_tensor([pos[(p.seq_id, p.j)] for p in pairs])
        out = []
        for s in range(0, len(pairs), batch_size):
            out.append(model.comparator(vecs[a[s:s + batch_size]], vecs[b[s:s + batch_size]]))
    return torch.cat(out).numpy().astype(np.float64)


def _safe_summary(scores, labels) -> dict:
    labels = np.asarray(labels)
    if labels.size == 0 or labels.min() == labels.max():
        return {"max_f1": float("nan"), "threshold": 0.5}
    return metrics.summarize(scores, labels)


def split_pairs(pairs, val_fraction: float, seed: int):
    if val_fraction <= 0 or len(pairs) < 10:
        return list(pairs), []
    rng = np.random.default_rng(seed + 1)
    order = rng.permutation(len(pairs))
    n_val = int(math.ceil(val_fraction * len(pairs)))
    val = [pairs[k] for k in sorted(order[:n_val])]
    train = [pairs[k] for k in sorted(order[n_val:])]
    return train, val


def _epoch_order(labels: np.ndarray, balanced: bool, rng) -> np.ndarray:
    if not balanced:
        return rng.permutation(len(labels))
    pos = np.flatnonzero(labels == 1)
    neg = np.flatnonzero(labels == 0)
    n = min(len(pos), len(neg))
    if n == 0:
        return rng.permutation(len(labels))
    pick = np.concatenate([rng.choice(pos, n, replace=False), rng.choice(neg, n, replace=False)])
    return rng.permutation(pick)


def make_optimizer(model, cfg: TrainConfig):
    return torch.optim.AdamW(
        model.parameters(), lr=cfg.learning_rate, betas=tuple(cfg.betas), weight_decay=cfg.weight_decay
    )


def train(cfg: TrainConfig, pairs, graphs: dict, log_path=None, dump_dir=None, on_epoch=None) -> Checkpoint:
    """Train on ``pairs`` whose graphs are in ``graphs[(seq_id, index)]``.

    A fraction ``cfg.val_fraction`` of pairs is held out to choose the
    decision threshold. Each epoch appends a record to the history and, when
    ``log_path`` is set, a ``key=value`` line to that file.
    """
    missing = sorted({(p.seq_id, k) for p in pairs for k in (p.i, p.j)} - set(graphs))
    if missing:
        raise KeyError(f"{len(missing)} graph(s) missing, first: {missing[:3]}")
    for g in graphs.values():
        if g.num_classes != cfg.model.num_classes:
            raise ArchitectureError(f"graph has {g.num_classes} classes, config expects {cfg.model.num_classes}")
        break
    dtype = _DTYPES[cfg.dtype]
    train_pairs, val_pairs = split_pairs(list(pairs), cfg.val_fraction, cfg.seed)
    table = GraphTable(graphs, dtype)
    model = LoopClosureNet(cfg.model, seed=cfg.seed).to(dtype)
    opt = make_optimizer(model, cfg)
    rng = np.random.default_rng(cfg.seed)
    labels = np.array([p.label for p in train_pairs])
    history = []
    log_fh = open(log_path, "w") if log_path else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            model.train()
            order = _epoch_order(labels, cfg.balanced, rng)
            losses, seen_scores, seen_labels = [], [], []
            for s in range(0, len(order), cfg.batch_size):
                batch = [train_pairs[k] for k in order[s:s + cfg.batch_size]]
                g1 = table.take([(p.seq_id, p.i) for p in batch])
                g2 = table.take([(p.seq_id, p.j) for p in batch])
                y = torch.as_tensor([p.label for p in batch], dtype=dtype)
                pred = model(g1, g2)
                loss = bce_loss(pred, y)
                if not torch.isfinite(loss):
                    _dump_batch(dump_dir, epoch, batch, pred)
                    raise NumericalError(f"non-finite loss at epoch {epoch}; batch of {len(batch)} pairs")
                opt.zero_grad()
                loss.backward()
                opt.step()
                losses.append(loss.item() * len(batch))
                seen_scores.append(pred.detach().numpy())
                seen_labels.append(y.numpy())
            record = {"epoch": epoch, "loss": sum(losses) / len(order)}
            record["train_f1"] = _safe_summary(np.concatenate(seen_scores), np.concatenate(seen_labels))["max_f1"]
            if val_pairs:
                model.eval()
                vs = _safe_summary(predict_pairs(model, val_pairs, table), [p.label for p in val_pairs])
                record["val_f1"] = vs["max_f1"]
            history.append(record)
            line = " ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in record.items())
            log.info(line)
            if log_fh:
                log_fh.write(line + "\n")
                log_fh.flush()
            if on_epoch:
                on_epoch(record)
    finally:
        if log_fh:
            log_fh.close()

    model.eval()
    select = val_pairs if val_pairs and len({p.label for p in val_pairs}) == 2 else train_pairs
    threshold = _safe_summary(predict_pairs(model, select, table), [p.label for p in select])["threshold"]
    if not np.isfinite(threshold):
        threshold = 1.0
    return Checkpoint(cfg, model_state(model), history, float(threshold))


def _dump_batch(dump_dir, epoch, batch, pred):
    if dump_dir is None:
        return
    path = Path(dump_dir) / f"nan_batch_epoch{epoch}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({
        "epoch": epoch,
        "pairs": [[p.seq_id, p.i, p.j, p.label] for p in batch],
        "pred": [float(x) for x in pred.detach().numpy()],
    }))
    log.error("wrote offending batch to %s", path)


def parameter_count(cfg) -> int:
    if isinstance(cfg, dict):
        cfg = model_config_from_dict(cfg)
    return sum(p.numel() for p in LoopClosureNet(cfg).parameters())
