import math

import numpy as np
import pytest
import torch

from conftest import fd_check, random_graph
from semloop.comparator import EPS, Comparator, LoopClosureNet, bce_loss
from semloop.config import ModelConfig
from semloop.encoder import stack_graphs


def _comparator(dtype=torch.float64, **kw):
    torch.manual_seed(0)
    return Comparator(ModelConfig(**kw)).to(dtype)


def test_hand_case_two_dims():
    comp = _comparator(feat_dim=2, heads=1, sim_dim=1)
    with torch.no_grad():
        comp.W1.copy_(torch.eye(2)[None])
        comp.W2.zero_()
        comp.W3.zero_()
        comp.b.zero_()
    s = comp.similarity(torch.tensor([[1.0, 0.0]], dtype=torch.float64), torch.tensor([[0.0, 1.0]], dtype=torch.float64))
    assert s.tolist() == [[2.0]]


def test_equal_vectors_leave_only_concat_term(rng):
    comp = _comparator()
    e = torch.tensor(rng.normal(size=(3, 32)))
    terms = comp.terms(e, e)
    assert not terms["second"].any() and not terms["first"].any()
    expect = torch.relu(torch.cat([e, e], -1) @ comp.W3.T + comp.b)
    assert torch.equal(comp.similarity(e, e), expect)


def test_difference_terms_swap_symmetric(rng):
    comp = _comparator()
    e1, e2 = torch.tensor(rng.normal(size=(4, 32))), torch.tensor(rng.normal(size=(4, 32)))
    a, b = comp.terms(e1, e2), comp.terms(e2, e1)
    assert torch.equal(a["second"], b["second"])
    assert torch.equal(a["first"], b["first"])
    assert not torch.allclose(a["concat"], b["concat"])


def test_similarity_non_negative_and_probability_bounded(rng):
    comp = _comparator()
    e1, e2 = torch.tensor(rng.normal(size=(50, 32)) * 3), torch.tensor(rng.normal(size=(50, 32)) * 3)
    assert (comp.similarity(e1, e2) >= 0).all()
    p = comp(e1, e2)
    assert ((p > 0) & (p < 1)).all()
    assert torch.equal(p, comp(e1, e2))


def test_diff_off_has_concat_only():
    comp = _comparator(diff=False)
    assert not hasattr(comp, "W1") and not hasattr(comp, "W2")
    assert set(comp.terms(torch.zeros(1, 32, dtype=torch.float64), torch.ones(1, 32, dtype=torch.float64))) == {"concat"}


@pytest.mark.parametrize("prefix", ["comparator.W1", "comparator.W2", "comparator.W3", "comparator.fc"])
def test_prediction_gradients(rng, prefix):
    torch.manual_seed(0)
    net = LoopClosureNet(ModelConfig()).double()
    g1 = stack_graphs([random_graph(rng, 5, max_nodes=5)], torch.float64)
    g2 = stack_graphs([random_graph(rng, 5, max_nodes=5)], torch.float64)
    n, rel = fd_check(net, (g1, g2), prefix)
    assert n > 0 and rel <= 1e-4


def test_bce_cases():
    assert bce_loss(torch.tensor([0.5]), torch.tensor([1.0])).item() == pytest.approx(math.log(2), abs=1e-6)
    val = bce_loss(torch.tensor([0.9, 0.1], dtype=torch.float64), torch.tensor([1.0, 0.0])).item()
    assert val == pytest.approx(-math.log(0.9), abs=1e-12)
    assert val == pytest.approx(0.1054, abs=1e-4)
    near = bce_loss(torch.tensor([1 - EPS], dtype=torch.float64), torch.tensor([1.0])).item()
    assert 0 <= near < 1e-6


def test_bce_clamps_and_is_non_negative(rng):
    loss = bce_loss(torch.tensor([0.0, 1.0], dtype=torch.float64), torch.tensor([1.0, 0.0]))
    assert loss.item() == pytest.approx(-math.log(EPS), rel=1e-9)
    p = torch.tensor(rng.uniform(size=100))
    y = torch.tensor(rng.integers(0, 2, 100), dtype=torch.float64)
    assert bce_loss(p, y).item() > 0


def test_bce_empty_batch():
    with pytest.raises(ValueError):
        bce_loss(torch.zeros(0), torch.zeros(0))
