"""Region embeddings, pair scoring and the neighbor-contrastive pretraining loop."""

import math

import numpy as np
import pytest

from pagedet import nn
from pagedet.embeddings import (
    D_K,
    EmbeddingNet,
    PageSample,
    embed,
    evaluate_pairs,
    pretrain,
    region_patches,
    score_pair,
)
from pagedet.features import Backbone, FeatureConfig, crop_warp
from pagedet.geometry import BBox
from pagedet.neighbors import build_graph
from pagedet.page import GrayPage
from pagedet.proposals import propose_page


def three_block_sample(far_y=300):
    """Two neighboring blocks plus one isolated block on a white page."""
    height = far_y + 70
    pixels = np.full((height, 200), 255, dtype=np.uint8)
    for y0, y1 in ((20, 70), (86, 136), (far_y, far_y + 50)):
        pixels[y0:y1, 20:180] = 0
        # interior texture: solid blocks warp to constant patches, which embed
        # identically and stall pretraining at the zero saddle
        pixels[y0 + 2:y1 - 2:4, 40:160] = 255
    page = GrayPage.from_array(pixels)
    props = propose_page(page)
    graph = build_graph(props, 20)
    return PageSample(page, props, graph)


def test_zero_input_with_zero_biases_embeds_to_zero():
    net = EmbeddingNet(27, hidden=4, rng=np.random.default_rng(0))
    maps = nn.Tensor(np.zeros((2, 3, 3, 3)))
    out = embed(net, maps)
    assert out.data.shape == (2, D_K)
    assert np.array_equal(out.data, np.zeros((2, D_K)))


def test_single_hidden_unit_hand_computation():
    net = EmbeddingNet(2, hidden=1, rng=np.random.default_rng(1))
    net.w1.data[:] = np.array([[1.0], [2.0]])
    net.b1.data[:] = np.array([0.5])
    net.w2.data[:] = np.linspace(0.0, 1.0, D_K).reshape(1, D_K)
    net.b2.data[:] = 1.0
    maps = nn.Tensor(np.array([0.3, 0.2]).reshape(1, 2, 1, 1))
    out = embed(net, maps).data[0]
    # hidden = relu(0.3*1 + 0.2*2 + 0.5) = 1.2, out_k = 1.2*w2_k + 1
    assert out == pytest.approx(1.2 * np.linspace(0.0, 1.0, D_K) + 1.0, abs=1e-12)

    negative = nn.Tensor(np.array([-3.0, 0.0]).reshape(1, 2, 1, 1))
    assert embed(net, negative).data[0] == pytest.approx(np.ones(D_K), abs=1e-12)


def test_embed_rejects_dimension_mismatch():
    net = EmbeddingNet(27, hidden=4, rng=np.random.default_rng(2))
    with pytest.raises(ValueError, match="net expects"):
        embed(net, nn.Tensor(np.zeros((1, 2, 3, 3))))


def test_embedding_net_validation_and_tensor_names():
    with pytest.raises(ValueError):
        EmbeddingNet(0)
    net = EmbeddingNet(10, hidden=3, rng=np.random.default_rng(3))
    assert set(net.tensors()) == {"embedding.w1", "embedding.b1",
                                  "embedding.w2", "embedding.b2"}
    assert net.w2.data.shape == (3, D_K)


def test_score_pair_closed_forms():
    zero = np.zeros(4)
    assert score_pair(zero, zero) == pytest.approx(0.5, abs=1e-12)
    a = np.array([math.log(3.0), 0.0])
    b = np.array([1.0, 5.0])
    assert score_pair(a, b) == pytest.approx(0.75, abs=1e-12)
    assert score_pair(b, a) == score_pair(a, b)
    assert 0.0 < score_pair(np.full(4, -10.0), np.full(4, 10.0)) < 1e-6
    with pytest.raises(ValueError):
        score_pair(np.zeros(3), np.zeros(4))


def test_region_patches_shapes_and_values():
    sample = three_block_sample()
    patches = region_patches(sample.page, sample.props, 32)
    assert patches.shape == (3, 32, 32)
    for k, box in enumerate(sample.props):
        assert np.array_equal(patches[k], crop_warp(sample.page, box, 32))
    from pagedet.proposals import ProposalSet
    empty = region_patches(sample.page, ProposalSet(200, 370, []), 32)
    assert empty.shape == (0, 32, 32)


def test_pretrain_requires_neighbor_edges():
    pixels = np.full((200, 200), 255, dtype=np.uint8)
    pixels[20:70, 20:180] = 0  # one lone block: a graph with no edges
    page = GrayPage.from_array(pixels)
    props = propose_page(page)
    sample = PageSample(page, props, build_graph(props, 20))
    net = EmbeddingNet(FeatureConfig().flat_dim, 8, np.random.default_rng(4))
    bb = Backbone(rng=np.random.default_rng(5))
    with pytest.raises(ValueError, match="no neighbor edges"):
        pretrain([sample], net, bb, np.random.default_rng(6), epochs=1)
    with pytest.raises(ValueError, match="epochs"):
        pretrain([sample], net, bb, np.random.default_rng(6), epochs=0)


def test_pretrain_is_deterministic_and_reduces_loss():
    sample = three_block_sample()
    runs = []
    for _ in range(2):
        net = EmbeddingNet(FeatureConfig().flat_dim, 16, np.random.default_rng(7))
        bb = Backbone(rng=np.random.default_rng(8))
        losses = pretrain([sample], net, bb, np.random.default_rng(9),
                          epochs=10, lr=3e-3)
        runs.append((losses, {k: v.data.copy() for k, v in net.tensors().items()}))
    assert runs[0][0] == runs[1][0]
    for name in runs[0][1]:
        assert np.array_equal(runs[0][1][name], runs[1][1][name])
    losses = runs[0][0]
    assert len(losses) == 10
    assert losses[-1] < losses[0]


def test_pretrain_freeze_backbone_keeps_conv_weights():
    sample = three_block_sample()
    net = EmbeddingNet(FeatureConfig().flat_dim, 8, np.random.default_rng(10))
    bb = Backbone(rng=np.random.default_rng(11))
    conv_before = {k: v.data.copy() for k, v in bb.tensors().items()}
    emb_before = {k: v.data.copy() for k, v in net.tensors().items()}
    pretrain([sample], net, bb, np.random.default_rng(12), epochs=2,
             freeze_backbone=True)
    for name, arr in conv_before.items():
        assert np.array_equal(bb.tensors()[name].data, arr)
    assert any(not np.array_equal(net.tensors()[name].data, arr)
               for name, arr in emb_before.items())
    assert all(p.requires_grad for p in bb.params())  # flags restored


def test_pretraining_loss_gradients_check_out():
    cfg = FeatureConfig(warp_size=16, conv_channels=(2, 3))
    bb = Backbone(cfg, np.random.default_rng(13))
    net = EmbeddingNet(cfg.flat_dim, 4, np.random.default_rng(14))
    perturb = np.random.default_rng(15)
    params = net.params() + bb.params()
    for p in params:
        p.data += perturb.normal(0.0, 0.01, p.data.shape)
    patches = np.random.default_rng(16).random((3, 16, 16))
    labels = np.array([[1.0], [0.0], [1.0]])

    def f():
        emb = embed(net, bb.extract(patches))
        v_t = nn.index_rows(emb, [0, 0, 1])
        v_o = nn.index_rows(emb, [1, 2, 2])
        dots = nn.matmul(nn.mul(v_t, v_o), nn.Tensor(np.ones((D_K, 1))))
        return nn.logistic_pair_loss(dots, labels)

    err = nn.grad_check(f, params, max_coords_per_tensor=3,
                        rng=np.random.default_rng(17))
    assert err < 1e-4


def test_evaluate_pairs_scores_lie_in_unit_interval():
    sample = three_block_sample()
    net = EmbeddingNet(FeatureConfig().flat_dim, 8, np.random.default_rng(18))
    bb = Backbone(rng=np.random.default_rng(19))
    pos, neg = evaluate_pairs([sample], net, bb, np.random.default_rng(20))
    assert 0.0 <= pos <= 1.0
    assert 0.0 <= neg <= 1.0
