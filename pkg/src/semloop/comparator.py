"""Graph comparison head and loss."""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .config import ModelConfig
from .encoder import GraphEncoder, uniform_init_

EPS = 1e-7


class Comparator(nn.Module):
    """Similarity vector from second- and first-order difference terms plus the
    concatenated pair, followed by a small fully connected head.

    With ``diff=False`` only the concatenation term is kept.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        Fp, S = cfg.feat_dim, cfg.sim_dim
        self.diff = cfg.diff
        if self.diff:
            self.W1 = nn.Parameter(uniform_init_(torch.empty(S, Fp, Fp), Fp * Fp))
            self.W2 = nn.Parameter(uniform_init_(torch.empty(S, Fp), Fp))
        self.W3 = nn.Parameter(uniform_init_(torch.empty(S, 2 * Fp), 2 * Fp))
        self.b = nn.Parameter(uniform_init_(torch.empty(S), 2 * Fp))
        self.fc1 = nn.Linear(S, cfg.hidden)
        self.fc2 = nn.Linear(cfg.hidden, 1)

    def terms(self, e1, e2) -> dict:
        out = {"concat": torch.cat([e1, e2], dim=-1) @ self.W3.T}
        if self.diff:
            d = (e1 - e2).abs()
            out["second"] = torch.einsum("bi,sij,bj->bs", d, self.W1, d)
            out["first"] = d @ self.W2.T
        return out

    def similarity(self, e1, e2):
        return F.relu(sum(self.terms(e1, e2).values()) + self.b)

    def forward(self, e1, e2):
        s = self.similarity(e1, e2)
        return torch.sigmoid(self.fc2(F.relu(self.fc1(s)))).squeeze(-1)


def bce_loss(preds, labels, eps: float = EPS):
    preds = torch.as_tensor(preds)
    labels = torch.as_tensor(labels, dtype=preds.dtype)
    if preds.numel() == 0:
        raise ValueError("empty batch")
    p = preds.clamp(eps, 1 - eps)
    return -(labels * torch.log(p) + (1 - labels) * torch.log(1 - p)).mean()


class LoopClosureNet(nn.Module):
    """Encoder and comparator trained end to end on scan pairs."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.encoder = GraphEncoder(cfg)
            self.comparator = Comparator(cfg)

    def forward(self, g1, g2):
        return self.comparator(self.encoder(*g1), self.encoder(*g2))

    @property
    def dtype(self):
        return next(self.parameters()).dtype
