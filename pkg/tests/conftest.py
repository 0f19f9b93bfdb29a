"""Shared fixtures.

The expensive ones (synthetic datasets, the ablation run that also yields
the desk-scale checkpoint, the square loop dataset) are session scoped and
built through the command line so those code paths are exercised too.
"""

from __future__ import annotations

import contextlib
import io
from pathlib import Path

import numpy as np
import pytest
import torch

from semloop.cli import main
from semloop.graph import SemanticGraph
from semloop.ingest import LabeledPointCloud

ROOT = Path(__file__).resolve().parents[1]
DESK_CONFIG = ROOT / "configs" / "desk.yaml"


def run_cli(*argv) -> tuple[int, str, str]:
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main([str(a) for a in argv])
    return code, out.getvalue(), err.getvalue()


def random_graph(rng, n_valid: int, max_nodes: int = 8, num_classes: int = 12, spread: float = 20.0):
    g = SemanticGraph.empty(max_nodes, num_classes)
    for s in range(n_valid):
        g.mask[s] = True
        g.sem[s, rng.integers(num_classes)] = 1.0
        c = rng.uniform(-spread, spread, 3)
        half = rng.uniform(0.2, 3.0, 3)
        g.cen[s] = c
        g.bbox[s] = np.r_[c - half, c + half]
    return g


def fd_check(module, inputs, prefix: str, eps: float = 1e-5, floor: float = 1e-6, chunk: int = 512):
    """Compare autograd and central-difference Jacobians of ``module(*inputs)``
    with respect to every parameter whose name starts with ``prefix``.

    Returns ``(n_params, max_rel)`` where the relative error of each entry is
    ``|analytic - numeric| / max(|numeric|, floor)``. Perturbed forward passes
    are batched with ``vmap`` so large parameter groups stay cheap.
    """
    base = {n: p.detach().clone() for n, p in module.named_parameters()}
    names = [n for n in base if n.startswith(prefix)]
    shapes = [base[n].shape for n in names]
    flat = torch.cat([base[n].reshape(-1) for n in names])

    def fn(v):
        params = dict(base)
        off = 0
        for n, s in zip(names, shapes):
            k = int(np.prod(s))
            params[n] = v[off:off + k].reshape(s)
            off += k
        return torch.func.functional_call(module, params, inputs).reshape(-1)

    analytic = torch.autograd.functional.jacobian(fn, flat)
    step = torch.eye(len(flat), dtype=flat.dtype) * eps
    cols = []
    for s in range(0, len(flat), chunk):
        cols.append((torch.vmap(fn)(flat + step[s:s + chunk]) - torch.vmap(fn)(flat - step[s:s + chunk])) / (2 * eps))
    numeric = torch.cat(cols).T
    rel = (analytic - numeric).abs() / numeric.abs().clamp(min=floor)
    return len(flat), float(rel.max())


def blob(center, cls, inst, n=20, rng=None, scale=0.3):
    rng = rng or np.random.default_rng(0)
    pts = np.asarray(center, float) + rng.normal(0, scale, (n, 3))
    return LabeledPointCloud(pts, np.full(n, cls), np.full(n, inst))


def concat(*clouds) -> LabeledPointCloud:
    return LabeledPointCloud(
        np.concatenate([c.points for c in clouds]),
        np.concatenate([c.semantic for c in clouds]),
        np.concatenate([c.instance for c in clouds]),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)


@pytest.fixture(scope="session")
def desk_data(tmp_path_factory):
    """Two synthetic revisit sequences (100 places, 200 pairs) with cached graphs."""
    root = tmp_path_factory.mktemp("desk")
    for seq, seed in (("s1", 1), ("s2", 2)):
        code, out, err = run_cli("synth", "revisit", "--out", root, "--seq", seq, "--seed", seed,
                                 "--places", 100, "--pairs", 200)
        assert code == 0, err
    code, out, err = run_cli("build-graphs", "--dataset-root", root, "--seq", "s1", "--seq", "s2",
                             "--out", "graphs")
    assert code == 0, err
    return root


@pytest.fixture(scope="session")
def ablation_run(desk_data):
    """All five variants trained on s1 with the desk config and scored on s2."""
    out = desk_data / "ablation"
    code, stdout, err = run_cli(
        "ablate", "--config", DESK_CONFIG, "--graphs", desk_data / "graphs",
        "--pairs", desk_data / "s1" / "pairs.csv", "--test-pairs", desk_data / "s2" / "pairs.csv",
        "--out", out, "--plot",
    )
    assert code == 0, err
    return out


@pytest.fixture(scope="session")
def desk_checkpoint(ablation_run):
    return ablation_run / "full.npz"


@pytest.fixture(scope="session")
def square_data(tmp_path_factory):
    """Square loop with drifting odometry; only keyframes are rendered."""
    root = tmp_path_factory.mktemp("square")
    code, out, err = run_cli("synth", "square", "--out", root, "--seq", "00", "--seed", 0, "--render-every", 5)
    assert code == 0, err
    return root


# one line per acceptance criterion, printed again at the end of the run
ACCEPTANCE_LINES: list[str] = []


def record(name: str, ok: bool, detail: str) -> bool:
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line, flush=True)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
