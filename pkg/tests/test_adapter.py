import json

import numpy as np
import pytest

from evla.errors import IndivisibleResolution, InvalidConfig, InvalidRate, ShapeMismatch
from evla.fusion.accounting import (
    REFERENCE_FLOPS,
    REFERENCE_PARAMS,
    count_parameters,
    describe_wiring,
    flops_estimate,
    parameter_breakdown,
)
from evla.fusion.adapter import (
    AdapterConfig,
    AdapterParams,
    adapter_forward,
    adapter_value_and_grad,
    branch_embeddings,
    image_dropout,
    image_only_forward,
    init_params,
    pad_to_patch,
    param_shapes,
    patch_embed_shared,
    shape_trace,
    token_grid_shape,
)
from evla.fusion.gradcheck import (
    FD_STEP,
    analytic_gradient,
    check_gradients,
    gradient_check,
    probe_params,
    random_probe,
)


# -- config ------------------------------------------------------------------

def test_defaults():
    c = AdapterConfig.paper_defaults()
    assert (c.patch_size, c.image_dim, c.event_dim, c.event_blocks) == (16, 768, 384, 4)
    assert c.fusion_layers == (3, 6, 9, 12) and c.fusion_hidden == 1536
    assert c.image_branch_blocks == 12


@pytest.mark.parametrize("kw", [
    {"fusion_layers": (3, 6)},
    {"fusion_layers": (3, 3, 9, 12)},
    {"fusion_layers": (3, 6, 9, 13)},
    {"image_branch_blocks": 10},
    {"image_heads": 7},
    {"block_type": "conv"},
    {"fusion_activation": "relu"},
    {"patch_size": 0},
])
def test_invalid_configs(kw):
    with pytest.raises(InvalidConfig):
        AdapterConfig(**kw)


def test_config_dict_round_trip():
    c = AdapterConfig.toy(shared_fusion=False)
    assert AdapterConfig.from_dict(json.loads(json.dumps(c.to_dict()))) == c
    with pytest.raises(InvalidConfig):
        AdapterConfig.from_dict({"patch": 4})


# -- parameters --------------------------------------------------------------

def test_patch_embedding_stored_once():
    names = list(param_shapes(AdapterConfig.toy()))
    assert sum("patch_embed" in n for n in names) == 2       # weight + bias


def test_params_are_views_into_flat():
    c = AdapterConfig.toy()
    p = init_params(c, seed=0)
    p.flat[p.slice_of("event.down.bias")] = 3.0
    assert np.all(p["event.down.bias"] == 3.0)


def test_init_statistics():
    p = init_params(AdapterConfig.paper_defaults(), seed=0)
    w = p["event.down.weight"]
    assert np.abs(w).max() <= 0.04 + 1e-7
    assert abs(w.std() - 0.02 * 0.88) < 1e-3         # truncation at 2 std shrinks std to ~0.88
    assert not p["event.down.bias"].any()
    assert np.all(p["event.blocks.0.ln1.gamma"] == 1)


def test_init_is_deterministic():
    c = AdapterConfig.toy()
    np.testing.assert_array_equal(init_params(c, 5).flat, init_params(c, 5).flat)
    assert not np.array_equal(init_params(c, 5).flat, init_params(c, 6).flat)


def test_shape_mismatch_is_named():
    c = AdapterConfig.toy()
    p = init_params(c)
    tensors = dict(p.items())
    tensors["event.down.weight"] = np.zeros((3, 3))
    bad = AdapterParams.from_tensors(tensors)
    with pytest.raises(ShapeMismatch) as exc:
        adapter_forward(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)), bad, c)
    assert exc.value.name == "event.down.weight"


# -- patch embedding ---------------------------------------------------------

def test_patch_embed_shape():
    c = AdapterConfig(patch_size=16, image_dim=16, event_dim=8, fusion_hidden=32,
                      image_heads=2, event_heads=2)
    p = init_params(c)
    assert patch_embed_shared(np.zeros((32, 32, 3)), p).shape == (4, 16)


def test_patch_embed_zero_frame_gives_bias():
    c = AdapterConfig.toy()
    p = init_params(c)
    p.flat[p.slice_of("patch_embed.bias")] = np.arange(8)
    tokens = patch_embed_shared(np.zeros((8, 8, 3)), p)
    assert np.all(tokens == np.arange(8, dtype=np.float32))


def test_patch_embed_indivisible():
    with pytest.raises(IndivisibleResolution):
        patch_embed_shared(np.zeros((10, 8, 3)), init_params(AdapterConfig.toy()))


def test_weight_sharing_bit_identical(rng):
    c = AdapterConfig.toy()
    p = init_params(c, seed=3)
    frame = rng.random((8, 8, 3))
    img_tokens, ev_tokens = branch_embeddings(frame, frame.copy(), p, c)
    np.testing.assert_array_equal(img_tokens, ev_tokens)
    np.testing.assert_array_equal(img_tokens, patch_embed_shared(frame, p))


def test_padding():
    assert pad_to_patch(np.ones((260, 346, 3)), 16).shape == (272, 352, 3)
    assert token_grid_shape(AdapterConfig(), (260, 346)) == (17, 22)
    f = np.ones((4, 4, 3))
    assert pad_to_patch(f, 4) is f


# -- forward -----------------------------------------------------------------

def test_toy_shape_contract(rng):
    c = AdapterConfig(patch_size=16, image_dim=16, event_dim=8, event_blocks=4,
                      fusion_hidden=32, image_heads=2, event_heads=2)
    p = init_params(c)
    img = rng.integers(0, 256, (64, 64, 3), dtype=np.uint8)
    out = adapter_forward(img, rng.random((64, 64, 3)), p, c)
    assert out.shape == (16, 16)
    out2 = adapter_forward(img, np.zeros((64, 64, 3)), p, c)
    assert out2.shape == out.shape


def test_trace_matches_symbolic(rng):
    c = AdapterConfig.toy()
    trace = []
    adapter_forward(np.zeros((10, 9, 3)), np.zeros((10, 9, 3)), init_params(c), c, trace=trace)
    assert trace == shape_trace(c, (10, 9))
    assert shape_trace(c, (10, 9))[0] == ("image.patch_embed", (9, 8))


def test_shape_trace_paper_config():
    trace = dict(shape_trace(AdapterConfig(), (260, 346)))
    assert trace["event.down"] == (374, 384)
    assert trace["fusion.3"] == (374, 768)
    assert "image.group.4" not in trace


def test_forward_is_deterministic(rng):
    c = AdapterConfig.toy()
    p = init_params(c, seed=1)
    img, ev = random_probe(c, 0)
    np.testing.assert_array_equal(adapter_forward(img, ev, p, c), adapter_forward(img, ev, p, c))


def test_input_shape_checks():
    c = AdapterConfig.toy()
    p = init_params(c)
    with pytest.raises(ShapeMismatch):
        adapter_forward(np.zeros((8, 8, 3)), np.zeros((8, 4, 3)), p, c)
    with pytest.raises(ShapeMismatch):
        adapter_forward(np.zeros((8, 8)), np.zeros((8, 8)), p, c)


def test_identity_fusion_reduces_to_image_branch(rng):
    c = AdapterConfig.toy(fusion_hidden=8, fusion_activation="identity")
    p = init_params(c, seed=2, dtype=np.float64)
    D = c.image_dim
    p["fusion.fc1.weight"][...] = np.vstack([np.eye(D), np.zeros((D, D))])
    p["fusion.fc2.weight"][...] = np.eye(D)
    img = rng.integers(0, 256, (8, 12, 3), dtype=np.uint8)
    ev = rng.random((8, 12, 3))
    np.testing.assert_array_equal(adapter_forward(img, ev, p, c), image_only_forward(img, p, c))


def test_one_stage_one_token_closed_form(rng):
    c = AdapterConfig(patch_size=2, image_dim=4, event_dim=2, event_blocks=1, fusion_layers=(1,),
                      fusion_hidden=3, image_branch_blocks=1, image_heads=1, event_heads=1,
                      block_type="linear", fusion_activation="identity")
    p = init_params(c, seed=4, std=0.5, dtype=np.float64)
    for name in p.names():
        if name.endswith("bias"):
            p[name][...] = rng.normal(size=p[name].shape)
    img = rng.integers(0, 256, (2, 2, 3), dtype=np.uint8)
    ev = rng.random((2, 2, 3))
    x = (img / 255.0).reshape(1, 12)
    e = ev.reshape(1, 12)
    Wp, bp = p["patch_embed.weight"], p["patch_embed.bias"]
    W1, b1 = p["fusion.fc1.weight"], p["fusion.fc1.bias"]
    W2, b2 = p["fusion.fc2.weight"], p["fusion.fc2.bias"]
    Wi, bi = p["image.blocks.0.weight"], p["image.blocks.0.bias"]
    Wd, bd = p["event.down.weight"], p["event.down.bias"]
    We, be = p["event.blocks.0.weight"], p["event.blocks.0.bias"]
    Wq, bq = p["event.proj.0.weight"], p["event.proj.0.bias"]
    # every stage is affine, so the network is out = x A + e B + c
    A = Wp @ Wi @ W1[:4] @ W2
    B = Wp @ Wd @ We @ Wq @ W1[4:] @ W2
    f_bias = bp @ Wi + bi
    e_bias = ((bp @ Wd + bd) @ We + be) @ Wq + bq
    const = (f_bias @ W1[:4] + e_bias @ W1[4:] + b1) @ W2 + b2
    expected = x @ A + e @ B + const
    np.testing.assert_allclose(adapter_forward(img, ev, p, c), expected, rtol=1e-12, atol=1e-13)


def test_per_stage_fusion_variant_runs(rng):
    c = AdapterConfig.toy(shared_fusion=False)
    p = init_params(c)
    assert "fusion.1.fc2.bias" in p and "fusion.fc2.bias" not in p
    assert adapter_forward(*random_probe(c, 0), p, c).shape == (4, 8)


# -- backward ----------------------------------------------------------------

def test_upstream_weighting_is_linear(rng):
    c = AdapterConfig.toy()
    p = probe_params(c, 0)
    img, ev = random_probe(c, 1)
    out, g1 = adapter_value_and_grad(img, ev, p, c)
    u = rng.normal(size=out.shape)
    _, gu = adapter_value_and_grad(img, ev, p, c, upstream=u)
    _, g2 = adapter_value_and_grad(img, ev, p, c, upstream=2 * u)
    np.testing.assert_allclose(g2.flat, 2 * gu.flat, rtol=1e-12, atol=1e-15)


def test_upstream_matches_directional_difference(rng):
    c = AdapterConfig.toy()
    p = probe_params(c, 0)
    img, ev = random_probe(c, 1)
    out = adapter_forward(img, ev, p, c)
    u = rng.normal(size=out.shape)
    _, g = adapter_value_and_grad(img, ev, p, c, upstream=u)
    d = rng.normal(size=p.size)
    h = 1e-6
    plus, minus = p.copy(), p.copy()
    plus.flat += h * d
    minus.flat -= h * d
    fd = ((adapter_forward(img, ev, plus, c) - adapter_forward(img, ev, minus, c)) * u).sum() / (2 * h)
    assert fd == pytest.approx(g.flat @ d, rel=1e-6)


@pytest.mark.parametrize("make,tol", [(AdapterConfig.toy, 1e-3), (AdapterConfig.linear_toy, 1e-6)])
def test_gradient_check_within_tolerance(make, tol):
    c = make()
    err = gradient_check(probe_params(c, 0), c, seed=0)
    assert err <= tol


def test_gradient_check_per_stage_fusion():
    c = AdapterConfig.linear_toy(shared_fusion=False)
    assert gradient_check(probe_params(c, 1), c, seed=1) <= 1e-6


def test_planted_bugs_are_detected():
    c = AdapterConfig.linear_toy()
    p = probe_params(c, 0)

    def drop_event_path(params, config, probe):
        g = analytic_gradient(params, config, probe).copy()
        g[params.slice_of("event.down.weight")] = 0.0
        return g

    def sign_flip(params, config, probe):
        g = analytic_gradient(params, config, probe).copy()
        g[params.slice_of("fusion.fc2.bias")] *= -1
        return g

    for bug in (drop_event_path, sign_flip):
        r = check_gradients(p, c, grad_fn=bug)
        assert r.max_rel_error > 1e-3
        assert r.worst_param in ("event.down.weight", "fusion.fc2.bias")


def test_gradient_check_default_step():
    assert FD_STEP == 1e-4


# -- accounting --------------------------------------------------------------

def test_paper_default_parameter_count():
    n = count_parameters(AdapterConfig.paper_defaults())
    # down 768*384+384, 4 event blocks at dim 384, 4 projections 384->768,
    # one fusion MLP 1536->1536->768
    block = 2 * 384 + (384 * 1152 + 1152) + (384 * 384 + 384) + 2 * 384 \
        + (384 * 1536 + 1536) + (1536 * 384 + 384)
    hand = (768 * 384 + 384) + 4 * block + 4 * (384 * 768 + 768) \
        + (1536 * 1536 + 1536) + (1536 * 768 + 768)
    assert n == hand == 12_117_120
    assert abs(n - REFERENCE_PARAMS) <= 0.2 * REFERENCE_PARAMS


def test_toy_parameter_count():
    # down 36, blocks 2 x 172, proj 2 x 40, fusion 272 + 136
    assert count_parameters(AdapterConfig.toy()) == 868
    assert sum(parameter_breakdown(AdapterConfig.toy()).values()) == 868


def test_zero_stage_config():
    c = AdapterConfig(event_blocks=0, fusion_layers=())
    assert count_parameters(c) == 0
    assert flops_estimate(c, (260, 346)) == 0.0


def test_linear_toy_flops_by_hand():
    # 4 tokens: embed 4*48*8, down 4*8*4, blocks 2*4*4*4, proj 2*4*4*8, fusion 2*4*(16*16+16*8)
    macs = 1536 + 128 + 128 + 256 + 3072
    assert flops_estimate(AdapterConfig.linear_toy(), (8, 8)) == 2 * macs


def test_paper_flops_in_band():
    f = flops_estimate(AdapterConfig.paper_defaults(), (260, 346))
    assert abs(f - REFERENCE_FLOPS) <= 0.3 * REFERENCE_FLOPS
    assert f == flops_estimate(AdapterConfig.paper_defaults(), (272, 352))


def test_per_stage_fusion_is_documented():
    assert "shared" in describe_wiring(AdapterConfig())
    assert "per stage" in describe_wiring(AdapterConfig(shared_fusion=False))


# -- image dropout -----------------------------------------------------------

def _batch(rng, n):
    return [(rng.random((2, 2, 3)) + 0.1, rng.random((2, 2, 3))) for _ in range(n)]


def test_dropout_rate_zero_and_one(rng):
    b = _batch(rng, 20)
    out, mask = image_dropout(b, 0.0)
    assert not mask.any() and all(o[0] is i[0] for o, i in zip(out, b))
    out, mask = image_dropout(b, 1.0)
    assert mask.all() and all(not o[0].any() for o in out)
    assert all(o[1] is i[1] for o, i in zip(out, b))


def test_dropout_fraction(rng):
    _, mask = image_dropout(_batch(rng, 10_000), 0.5, seed=7)
    assert abs(mask.mean() - 0.5) <= 0.02


def test_dropout_is_seeded(rng):
    b = _batch(rng, 50)
    np.testing.assert_array_equal(image_dropout(b, 0.3, 1)[1], image_dropout(b, 0.3, 1)[1])


def test_dropout_rate_validation():
    for r in (-0.1, 1.5):
        with pytest.raises(InvalidRate):
            image_dropout([], r)
