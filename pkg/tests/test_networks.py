import numpy as np
import pytest
import torch

from fgdiff.networks import (
    COCO17_EDGES,
    SkeletonGraph,
    build_generator,
    build_predictor,
    count_parameters,
)


def test_adjacency_symmetric_pattern_row_normalized():
    g = SkeletonGraph.coco17()
    a = g.adjacency
    assert a.shape == (17, 17)
    np.testing.assert_allclose(a.sum(axis=1), 1.0)
    assert np.all(np.diag(a) > 0)
    np.testing.assert_array_equal(a > 0, (a > 0).T)
    assert g.is_connected()
    assert len(COCO17_EDGES) == 18


@pytest.mark.parametrize("J", [1, 2, 8, 25])
def test_chain_graph_connected(J):
    assert SkeletonGraph.chain(J).is_connected()
    assert SkeletonGraph.default(J).num_joints == J


def test_graph_rejects_bad_edges():
    with pytest.raises(ValueError):
        SkeletonGraph(3, ((0, 3),))
    with pytest.raises(ValueError):
        SkeletonGraph(0, ())


def test_default_parameter_budget():
    g = SkeletonGraph.coco17()
    p = count_parameters(build_predictor(g, 24, 2))
    q = count_parameters(build_generator(g, 24, 2))
    assert p + q <= 1_000_000
    assert q / p <= 0.2


@pytest.mark.parametrize("shape", [(24, 2, 8), (24, 2, 17), (12, 3, 5)])
def test_shape_preserved(shape):
    N, C, J = shape
    g = SkeletonGraph.default(J)
    pred = build_predictor(g, N, C, width=16, depth=2, seed=0)
    gen = build_generator(g, N, C, seed=0)
    x = torch.randn(3, N, C, J)
    t = torch.tensor([1, 5, 10])
    cond = torch.randn(3, N, C * J)
    assert pred(x, t, cond).shape == x.shape
    assert pred(x, t).shape == x.shape
    assert gen(x, t).shape == x.shape


def test_generator_finite_on_bounded_inputs():
    g = SkeletonGraph.chain(8)
    gen = build_generator(g, 24, 2, seed=3)
    x = torch.empty(16, 24, 2, 8).uniform_(-2, 2)
    assert torch.isfinite(gen(x, torch.randint(1, 11, (16,)))).all()


def test_same_seed_same_init():
    g = SkeletonGraph.chain(8)
    a = build_predictor(g, 24, 2, seed=7).state_dict()
    b = build_predictor(g, 24, 2, seed=7).state_dict()
    c = build_predictor(g, 24, 2, seed=8).state_dict()
    assert all(torch.equal(a[k], b[k]) for k in a)
    assert not all(torch.equal(a[k], c[k]) for k in a)


def test_seeded_build_leaves_global_rng_alone():
    torch.manual_seed(0)
    expected = torch.rand(3)
    torch.manual_seed(0)
    build_predictor(SkeletonGraph.chain(4), 8, 2, seed=1)
    assert torch.equal(torch.rand(3), expected)


def test_predictor_distinguishes_joints():
    # a constant input must still produce joint-dependent output via the position embedding
    g = SkeletonGraph.chain(6)
    pred = build_predictor(g, 8, 2, width=8, depth=1, seed=0)
    with torch.no_grad():
        pred.pos.normal_()
    out = pred(torch.zeros(1, 8, 2, 6), torch.tensor([3]))
    assert not torch.allclose(out[..., 0], out[..., 1])


@pytest.mark.parametrize("kw", [dict(width=0), dict(depth=0), dict(kernel=4)])
def test_invalid_architecture(kw):
    with pytest.raises(ValueError):
        build_predictor(SkeletonGraph.chain(4), 8, 2, **kw)
