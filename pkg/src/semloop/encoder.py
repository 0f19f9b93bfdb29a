"""Semantic graph encoder: kNN graph attention per branch, fusion, graph embedding."""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .config import ModelConfig
from .graph import SemanticGraph


def uniform_init_(param: torch.Tensor, fan_in: int) -> torch.Tensor:
    bound = math.sqrt(1.0 / fan_in)
    with torch.no_grad():
        return param.uniform_(-bound, bound)


@torch.no_grad()
def knn_indices(cen: torch.Tensor, mask: torch.Tensor, k: int = 10) -> torch.Tensor:
    """Indices of the ``k`` nearest valid nodes by centroid distance, excluding self.

    Ties go to the lower index. A node with fewer than ``k`` valid
    neighbours repeats its nearest one; a node with none points at itself.
    Invalid rows point at themselves too (their outputs are zeroed later).
    Works on ``(N, 3)`` or batched ``(B, N, 3)`` input.
    """
    squeeze = cen.dim() == 2
    if squeeze:
        cen, mask = cen[None], mask[None]
    B, N, _ = cen.shape
    mask = mask.bool()
    dist = torch.cdist(cen, cen)
    eye = torch.eye(N, dtype=torch.bool, device=cen.device)
    blocked = eye[None] | ~mask[:, None, :]
    dist = dist.masked_fill(blocked, float("inf"))
    order = torch.sort(dist, dim=-1, stable=True).indices[..., :k]
    if order.shape[-1] < k:
        order = torch.cat([order, order[..., :1].expand(B, N, k - order.shape[-1])], dim=-1)
    n_other = (mask.sum(dim=1, keepdim=True) - mask.long()).clamp(min=0)  # (B, N)
    pos = torch.arange(k, device=cen.device)
    self_idx = torch.arange(N, device=cen.device)[None, :, None].expand(B, N, k)
    idx = torch.where(pos[None, None, :] < n_other[..., None], order, order[..., :1].expand(B, N, k))
    isolated = (n_other == 0) | ~mask
    idx = torch.where(isolated[..., None], self_idx, idx)
    return idx[0] if squeeze else idx


def _gather_neighbors(h: torch.Tensor, idx: torch.Tensor) -> torch.Tensor:
    B, N, Fdim = h.shape
    k = idx.shape[-1]
    flat = idx.reshape(B, N * k, 1).expand(B, N * k, Fdim)
    return torch.gather(h, 1, flat).reshape(B, N, k, Fdim)


class GATBranch(nn.Module):
    """Multi-head attention over kNN neighbours of ``[h_i || h_i - h_j]``.

    With ``attention=False`` neighbours are averaged with equal weight and
    no attention vectors exist.
    """

    def __init__(self, in_dim: int, out_dim: int, heads: int, attention: bool = True):
        super().__init__()
        self.heads = heads
        self.head_dim = out_dim // heads
        self.out_dim = out_dim
        self.attention = attention
        self.weight = nn.Parameter(torch.empty(out_dim, 2 * in_dim))  # heads stacked row-wise
        uniform_init_(self.weight, 2 * in_dim)
        if attention:
            self.att = nn.Parameter(torch.empty(heads, self.head_dim))
            uniform_init_(self.att, self.head_dim)

    def forward(self, h, idx, mask, return_attention: bool = False):
        B, N, _ = h.shape
        hj = _gather_neighbors(h, idx)
        hi = h[:, :, None, :].expand_as(hj)
        pair = torch.cat([hi, hi - hj], dim=-1)
        z = (pair @ self.weight.T).reshape(B, N, idx.shape[-1], self.heads, self.head_dim)
        if self.attention:
            logits = F.leaky_relu((z * self.att).sum(-1), 0.2)  # (B, N, k, Z)
            alpha = torch.softmax(logits, dim=2)
            agg = (alpha[..., None] * z).sum(2)
        else:
            alpha = None
            agg = z.mean(2)
        out = F.elu(agg).reshape(B, N, self.out_dim)
        out = torch.where(mask[..., None], out, torch.zeros_like(out))
        return (out, alpha) if return_attention else out


class SelfAttention(nn.Module):
    """Scaled dot-product self-attention restricted to valid nodes."""

    def __init__(self, in_dim: int, out_dim: int, key_dim: int):
        super().__init__()
        self.key_dim = key_dim
        self.query = nn.Linear(in_dim, key_dim)
        self.key = nn.Linear(in_dim, key_dim)
        self.value = nn.Linear(in_dim, out_dim)

    def forward(self, x, mask, return_attention: bool = False):
        logits = self.query(x) @ self.key(x).transpose(1, 2) / math.sqrt(self.key_dim)
        # an empty graph keeps all keys so the softmax stays finite; rows are zeroed below
        keys = mask | ~mask.any(dim=1, keepdim=True)
        logits = logits.masked_fill(~keys[:, None, :], float("-inf"))
        att = torch.softmax(logits, dim=-1)
        out = att @ self.value(x)
        out = torch.where(mask[..., None], out, torch.zeros_like(out))
        return (out, att) if return_attention else out


class GraphEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        Fp = cfg.feat_dim
        self.sem_branch = GATBranch(cfg.num_classes, Fp, cfg.heads, cfg.gat)
        self.cen_branch = GATBranch(3, Fp, cfg.heads, cfg.gat)
        self.geo_branch = GATBranch(6, Fp, cfg.heads, cfg.gat) if cfg.geo else None
        width = (3 if cfg.geo else 2) * Fp
        self.fusion = SelfAttention(width, Fp, Fp) if cfg.gat else nn.Linear(width, Fp)
        self.context = SelfAttention(Fp, Fp, Fp) if cfg.att else None

    def branches(self, sem, cen, bbox, mask):
        mask = mask.bool()
        zero = torch.zeros((), dtype=sem.dtype)
        # sanitise padding so masked slots cannot influence anything downstream
        sem = torch.where(mask[..., None], sem, zero)
        cen = torch.where(mask[..., None], cen, zero)
        bbox = torch.where(mask[..., None], bbox, zero)
        idx = knn_indices(cen, mask, self.cfg.k)
        s = self.cfg.coord_scale
        out = [self.sem_branch(sem, idx, mask), self.cen_branch(cen * s, idx, mask)]
        if self.geo_branch is not None:
            out.append(self.geo_branch(bbox * s, idx, mask))
        return out, idx, mask

    def node_embedding(self, sem, cen, bbox, mask):
        parts, _, mask = self.branches(sem, cen, bbox, mask)
        x = torch.cat(parts, dim=-1)
        if self.cfg.gat:
            f = self.fusion(x, mask)
        else:
            f = self.fusion(x)
            f = torch.where(mask[..., None], f, torch.zeros_like(f))
        return f, mask

    def graph_embedding(self, f, mask):
        n = mask.sum(dim=1, keepdim=True).clamp(min=1).to(f.dtype)
        if self.context is None:
            return f.sum(dim=1) / n
        u = self.context(f, mask)
        c = torch.tanh(u.sum(dim=1) / n)
        w = torch.sigmoid((f * c[:, None, :]).sum(-1))
        w = torch.where(mask, w, torch.zeros_like(w))
        return (w[..., None] * f).sum(dim=1)

    def forward(self, sem, cen, bbox, mask):
        f, mask = self.node_embedding(sem, cen, bbox, mask)
        return self.graph_embedding(f, mask)


def stack_graphs(graphs, dtype=torch.float32):
    """Batch semantic graphs into ``(sem, cen, bbox, mask)`` tensors."""
    graphs = list(graphs)
    return (
        torch.as_tensor(np.stack([g.sem for g in graphs]), dtype=dtype),
        torch.as_tensor(np.stack([g.cen for g in graphs]), dtype=dtype),
        torch.as_tensor(np.stack([g.bbox for g in graphs]), dtype=dtype),
        torch.as_tensor(np.stack([g.mask for g in graphs])),
    )


def encode(graph: SemanticGraph, encoder: GraphEncoder) -> np.ndarray:
    """Graph vector of a single graph; all-zero for an empty scene."""
    if graph.num_classes != encoder.cfg.num_classes:
        raise ValueError(f"graph has {graph.num_classes} classes, encoder expects {encoder.cfg.num_classes}")
    dtype = next(encoder.parameters()).dtype
    with torch.no_grad():
        e = encoder(*stack_graphs([graph], dtype))
    return e[0].numpy()
