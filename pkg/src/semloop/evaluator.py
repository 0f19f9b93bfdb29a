"""Pair evaluation, robustness perturbations and report files."""

from __future__ import annotations

import logging
import warnings
from pathlib import Path

import numpy as np
import torch

from .comparator import LoopClosureNet
from .encoder import stack_graphs
from .geometry import yaw_matrix
from .graph import build_graph
from .ingest import LabeledPointCloud
from .metrics import auc, best_threshold, max_f1, pr_curve, summarize  # noqa: F401

log = logging.getLogger(__name__)

REPORT_VERSION = 1
MAX_YAW_DEG = 30.0
OCCLUSION_FOV_DEG = 30.0
PERTURBATIONS = ("none", "rotate", "occlude", "both")


class MissingGraphWarning(UserWarning):
    pass


def draw_yaw(rng, max_yaw_deg: float = MAX_YAW_DEG) -> float:
    return float(np.radians(rng.uniform(-max_yaw_deg, max_yaw_deg)))


def draw_wedge(rng, fov_deg: float = OCCLUSION_FOV_DEG) -> tuple[float, float]:
    return float(rng.uniform(0.0, 2 * np.pi)), float(np.radians(fov_deg))


def perturb_rotation(cloud: LabeledPointCloud, seed=None, yaw: float | None = None,
                     max_yaw_deg: float = MAX_YAW_DEG) -> LabeledPointCloud:
    """Rotate about the sensor z axis by ``yaw`` (drawn in +-max_yaw_deg when omitted)."""
    if yaw is None:
        yaw = draw_yaw(np.random.default_rng(seed), max_yaw_deg)
    R = yaw_matrix(yaw)
    return LabeledPointCloud(cloud.points @ R.T, cloud.semantic.copy(), cloud.instance.copy())


def in_wedge(points: np.ndarray, start: float, width: float) -> np.ndarray:
    az = np.arctan2(points[:, 1], points[:, 0]) % (2 * np.pi)
    return ((az - start) % (2 * np.pi)) < width


def perturb_occlusion(cloud: LabeledPointCloud, seed=None, wedge: tuple | None = None,
                      fov_deg: float = OCCLUSION_FOV_DEG) -> LabeledPointCloud:
    """Drop every point whose azimuth falls in a horizontal wedge ``(start, width)`` in radians."""
    if wedge is None:
        wedge = draw_wedge(np.random.default_rng(seed), fov_deg)
    return cloud.select(~in_wedge(cloud.points, *wedge))


def apply_perturbation(cloud: LabeledPointCloud, mode: str, rng) -> tuple[LabeledPointCloud, dict]:
    """Apply ``mode``; "both" rotates first, then occludes."""
    if mode not in PERTURBATIONS:
        raise ValueError(f"unknown perturbation {mode!r}")
    record = {}
    if mode in ("rotate", "both"):
        record["yaw"] = draw_yaw(rng)
        cloud = perturb_rotation(cloud, yaw=record["yaw"])
    if mode in ("occlude", "both"):
        record["wedge"] = draw_wedge(rng)
        cloud = perturb_occlusion(cloud, wedge=record["wedge"])
    return cloud, record


def score_graph_pairs(model: LoopClosureNet, graph_pairs, batch_size: int = 256) -> np.ndarray:
    out = []
    with torch.no_grad():
        for s in range(0, len(graph_pairs), batch_size):
            chunk = graph_pairs[s:s + batch_size]
            g1 = stack_graphs([a for a, _ in chunk], model.dtype)
            g2 = stack_graphs([b for _, b in chunk], model.dtype)
            out.append(model(g1, g2))
    return torch.cat(out).numpy().astype(np.float64) if out else np.zeros(0)


def evaluate(model: LoopClosureNet, pairs, graphs: dict, clouds: dict | None = None, perturb: str = "none",
             seed: int = 0, perturb_both: bool = False, max_nodes: int = 50) -> dict:
    """Score ``pairs`` and summarise max F1, AUC and the PR curve.

    Perturbations act on the raw cloud of the query scan (``pair.i``; both
    scans with ``perturb_both``) whose graph is then rebuilt, so ``clouds``
    must be supplied for any mode other than "none". Each pair draws its own
    perturbation from ``seed``.
    """
    if perturb not in PERTURBATIONS:
        raise ValueError(f"unknown perturbation {perturb!r}")
    if perturb != "none" and clouds is None:
        raise ValueError("perturbed evaluation needs the raw clouds")
    need = graphs if perturb == "none" else clouds
    skipped = [p for p in pairs if (p.seq_id, p.i) not in need or (p.seq_id, p.j) not in need]
    if skipped:
        warnings.warn(f"skipping {len(skipped)} pair(s) with missing graphs", MissingGraphWarning, stacklevel=2)
    kept = [p for p in pairs if p not in set(skipped)]
    rng = np.random.default_rng(seed)
    graph_pairs, records = [], []
    for n, p in enumerate(kept):
        sides = []
        for which, k in (("i", p.i), ("j", p.j)):
            key = (p.seq_id, k)
            if perturb != "none" and (which == "i" or perturb_both):
                cloud, rec = apply_perturbation(clouds[key], perturb, rng)
                records.append({"pair": n, "scan": which, **rec})
                sides.append(build_graph(cloud, max_nodes=max_nodes, num_classes=model.cfg.num_classes,
                                         subsample="largest"))
            else:
                sides.append(graphs[key] if key in graphs else
                             build_graph(clouds[key], max_nodes=max_nodes, num_classes=model.cfg.num_classes,
                                         subsample="largest"))
        graph_pairs.append(tuple(sides))
    scores = score_graph_pairs(model, graph_pairs)
    labels = np.array([p.label for p in kept])
    report = summarize(scores, labels)
    report.update(
        perturb=perturb,
        seed=seed,
        n_pairs=len(kept),
        n_positive=int(labels.sum()),
        skipped=[(p.seq_id, p.i, p.j) for p in skipped],
        perturbations=records,
        scores=scores,
    )
    return report


# ---------------------------------------------------------------------------
# report file: key=value header, then a CSV curve table


def write_report(report: dict, path, config_hash: str = "", extra: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    head = {
        "version": REPORT_VERSION,
        "config_hash": config_hash,
        "perturb": report.get("perturb", "none"),
        "seed": report.get("seed", 0),
        "n_pairs": report.get("n_pairs", 0),
        "n_positive": report.get("n_positive", 0),
        "n_skipped": len(report.get("skipped", [])),
        "max_f1": repr(float(report["max_f1"])),
        "auc": repr(float(report["auc"])),
        "threshold": repr(float(report["threshold"])),
    }
    head.update(extra or {})
    lines = ["# semloop evaluation report"]
    lines += [f"{k}={v}" for k, v in head.items()]
    lines += ["[curve]", "threshold,precision,recall"]
    lines += [f"{t!r},{p!r},{r!r}" for t, p, r in report["curve"]]
    path.write_text("\n".join(lines) + "\n")


def read_report(path) -> dict:
    out, curve, in_curve = {}, [], False
    for line in Path(path).read_text().splitlines():
        if not line or line.startswith("#"):
            continue
        if line == "[curve]":
            in_curve = True
            continue
        if in_curve:
            if line.startswith("threshold"):
                continue
            t, p, r = line.split(",")
            curve.append((float(t), float(p), float(r)))
        else:
            k, v = line.split("=", 1)
            out[k] = v
    for k in ("max_f1", "auc", "threshold"):
        out[k] = float(out[k])
    for k in ("version", "n_pairs", "n_positive", "n_skipped", "seed"):
        if k in out:
            out[k] = int(out[k])
    out["curve"] = curve
    if out.get("version") != REPORT_VERSION:
        raise ValueError(f"unsupported report version {out.get('version')}")
    return out


def removed_fraction_expected(fov_deg: float = OCCLUSION_FOV_DEG) -> float:
    return fov_deg / 360.0


__all__ = [
    "pr_curve", "max_f1", "auc", "best_threshold", "summarize", "perturb_rotation", "perturb_occlusion",
    "apply_perturbation", "evaluate", "write_report", "read_report", "draw_yaw", "draw_wedge",
]
