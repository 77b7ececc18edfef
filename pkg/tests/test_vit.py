import math

import numpy as np
import pytest
from scipy.special import erf
from scipy.stats import truncnorm

from posevinet import autodiff as ad
from posevinet import vit
from posevinet.autodiff import Tensor
from posevinet.errors import ConfigError, ContractError
from posevinet.imaging import Image
from posevinet.rng import Rng
from posevinet.vit import ViTConfig


def test_default_geometry():
    cfg = ViTConfig()
    assert cfg.num_patches == 196
    assert cfg.patch_dim == 768
    assert cfg.head_dim == 64


@pytest.mark.parametrize("kwargs", [
    dict(image_size=30, patch_height=16, patch_width=16),
    dict(embed_dim=10, num_heads=4),
    dict(image_size=20, patch_height=8, patch_width=8, stride_height=5, stride_width=5),
    dict(dropout_head=1.0),
])
def test_invalid_configs(kwargs):
    with pytest.raises(ConfigError):
        ViTConfig(**kwargs)


def test_overlapping_stride_geometry():
    cfg = ViTConfig(image_size=20, patch_height=8, patch_width=8, stride_height=4,
                    stride_width=6, embed_dim=8, num_heads=2)
    assert cfg.grid == (4, 3)
    patches = vit.patchify(np.random.default_rng(0).random((20, 20, 3)), cfg)
    assert patches.shape == (12, 192)


def test_patchify_single_window():
    cfg = ViTConfig(image_size=16, embed_dim=8, num_heads=2)
    img = np.random.default_rng(1).random((16, 16, 3))
    patches = vit.patchify(img, cfg)
    assert patches.shape == (1, 768)
    assert np.array_equal(patches[0], img.reshape(-1))


def test_patchify_enumeration_order():
    cfg = ViTConfig(image_size=32, embed_dim=8, num_heads=2)
    img = np.random.default_rng(2).random((32, 32, 3))
    patches = vit.patchify(img, cfg)
    assert patches.shape == (4, 768)
    blocks = [img[r:r + 16, c:c + 16] for r in (0, 16) for c in (0, 16)]
    for n, block in enumerate(blocks):
        assert np.array_equal(patches[n], block.reshape(-1))
    assert np.array_equal(patches[3], img[16:, 16:].reshape(-1))


def test_patchify_scales_images():
    cfg = ViTConfig(image_size=16, embed_dim=8, num_heads=2)
    img = Image(np.full((16, 16, 3), 255, dtype=np.uint8))
    assert np.array_equal(vit.patchify(img, cfg), np.ones((1, 768)))
    with pytest.raises(ConfigError):
        vit.patchify(np.zeros((8, 8, 3)), cfg)


def test_param_names_and_shapes(tiny_config):
    params = vit.init_params(tiny_config, 0)
    vit.check_params(params, tiny_config)
    assert params["pos_embed"].shape == (17, 8)
    assert params["patch_embed.weight"].shape == (48, 8)
    assert params["head.weight"].shape == (8, 3)
    assert len(params) == len(set(params))


def test_init_params_deterministic_and_bounded():
    cfg = ViTConfig(image_size=32, patch_height=8, patch_width=8, embed_dim=16, num_heads=4,
                    depth=2, num_classes=5)
    a, b = vit.init_params(cfg, 9), vit.init_params(cfg, 9)
    for name in a:
        assert a[name].tobytes() == b[name].tobytes()
        if name.endswith(("weight", "w_q", "w_k", "w_v", "w_o")):
            assert np.abs(a[name]).max() <= 0.04
    assert not np.array_equal(a["head.weight"], vit.init_params(cfg, 10)["head.weight"])
    assert (a["pos_embed"] == 0).all() and (a["cls_token"] == 0).all()
    assert (a["norm.gain"] == 1).all()


def test_truncated_normal_statistics():
    w = Rng(4).truncated_normal(100_000, std=0.02, bound=2.0)
    assert abs(w.mean()) < 0.001
    assert np.abs(w).max() <= 0.04
    # cutting at two standard deviations shrinks the spread to about 0.88 sigma
    expected_std = truncnorm(-2, 2, scale=0.02).std()
    assert abs(expected_std - 0.0175925) < 1e-6
    assert abs(w.std() - expected_std) < 0.002


# -- embedding -----------------------------------------------------------------------

def test_embed_zero_and_origin(tiny_config):
    params = {k: np.zeros_like(v) for k, v in vit.init_params(tiny_config, 0).items()}
    patches = Tensor(np.random.default_rng(0).random((2, 16, 48)))
    assert not vit.embed(patches, vit.as_tensors(params)).data.any()

    rng = np.random.default_rng(1)
    params["patch_embed.bias"] = rng.normal(size=8)
    params["pos_embed"] = rng.normal(size=(17, 8))
    params["cls_token"] = rng.normal(size=8)
    tokens = vit.embed(Tensor(np.zeros((1, 16, 48))), vit.as_tensors(params)).data[0]
    assert tokens.shape == (17, 8)
    assert np.allclose(tokens[1:], params["patch_embed.bias"] + params["pos_embed"][1:])
    assert np.allclose(tokens[0], params["cls_token"] + params["pos_embed"][0])


def test_embed_hand_computed():
    # D = 2, patch width 3, two patches: z_n = w x_n + b + W_pos[n]
    w = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    params = {"patch_embed.weight": Tensor(w), "patch_embed.bias": Tensor([0.5, -1.0]),
              "pos_embed": Tensor([[0.0, 0.0], [1.0, 2.0], [3.0, 4.0]]),
              "cls_token": Tensor([7.0, 8.0])}
    patches = Tensor([[[2.0, 3.0, 9.0], [-1.0, 4.0, 5.0]]])
    tokens = vit.embed(patches, params).data[0]
    assert tokens.tolist() == [[7.0, 8.0], [3.5, 4.0], [2.5, 7.0]]


def test_embed_shape_contract(tiny_config):
    params = vit.as_tensors(vit.init_params(tiny_config, 0))
    with pytest.raises(ContractError):
        vit.embed(Tensor(np.zeros((1, 16, 47))), params)


# -- attention -----------------------------------------------------------------------

def test_attention_single_token_returns_value():
    v = Tensor([[3.0, -2.0]])
    out = vit.attention(Tensor([[1.0, 5.0]]), Tensor([[0.3, 0.1]]), v).data
    assert np.array_equal(out, v.data)


def test_attention_identical_keys_average_values():
    q = Tensor([[1.0, 2.0], [-3.0, 0.5]])
    k = Tensor([[0.7, 0.2], [0.7, 0.2]])
    v = Tensor([[1.0, 10.0], [3.0, -2.0]])
    out = vit.attention(q, k, v).data
    assert np.allclose(out, [[2.0, 4.0], [2.0, 4.0]], atol=1e-15)


def test_attention_hand_example():
    out = vit.attention(Tensor([[1.0], [0.0]]), Tensor([[1.0], [0.0]]), Tensor([[2.0], [4.0]]))
    w0 = math.exp(1) / (math.exp(1) + 1)
    assert abs(w0 - 0.7311) < 1e-4
    assert abs(out.data[0, 0] - (2 * w0 + 4 * (1 - w0))) < 1e-12
    assert abs(out.data[0, 0] - 2.5379) < 1e-4
    assert abs(out.data[1, 0] - 3.0) < 1e-12


def brute_force_attention(q, k, v):
    d_k = q.shape[1]
    out = np.zeros((q.shape[0], v.shape[1]))
    for i in range(q.shape[0]):
        scores = [sum(q[i, a] * k[j, a] for a in range(d_k)) / math.sqrt(d_k)
                  for j in range(k.shape[0])]
        m = max(scores)
        e = [math.exp(s - m) for s in scores]
        for j in range(k.shape[0]):
            out[i] += e[j] / sum(e) * v[j]
    return out


def _block_params(D, seed, heads_identity=False):
    g = np.random.default_rng(seed)
    p = {f"attn.{n}": g.normal(size=(D, D)) for n in ("w_q", "w_k", "w_v", "w_o")}
    if heads_identity:
        p["attn.w_o"] = np.eye(D)
    return p


def test_mhsa_matches_per_head_composition():
    D, heads = 2, 2
    tokens = np.array([[[0.5, -1.0], [2.0, 0.3]]])
    p = _block_params(D, 3)
    out = vit.mhsa(Tensor(tokens), vit.as_tensors(p), "attn.", heads).data[0]
    x = tokens[0]
    q, k, v = x @ p["attn.w_q"], x @ p["attn.w_k"], x @ p["attn.w_v"]
    per_head = [brute_force_attention(q[:, [j]], k[:, [j]], v[:, [j]]) for j in range(heads)]
    expected = np.concatenate(per_head, axis=1) @ p["attn.w_o"]
    assert np.allclose(out, expected, atol=1e-12)


def test_mhsa_single_head_with_identity_output():
    g = np.random.default_rng(5)
    tokens = g.normal(size=(1, 4, 3))
    p = _block_params(3, 6, heads_identity=True)
    out = vit.mhsa(Tensor(tokens), vit.as_tensors(p), "attn.", 1).data[0]
    x = tokens[0]
    expected = brute_force_attention(x @ p["attn.w_q"], x @ p["attn.w_k"], x @ p["attn.w_v"])
    assert np.allclose(out, expected, atol=1e-12)


def test_mhsa_zero_projections():
    p = {f"attn.{n}": np.zeros((4, 4)) for n in ("w_q", "w_k", "w_v", "w_o")}
    tokens = Tensor(np.random.default_rng(0).normal(size=(2, 5, 4)))
    assert not vit.mhsa(tokens, vit.as_tensors(p), "attn.", 2).data.any()


# -- encoder block -------------------------------------------------------------------

def test_zero_block_is_identity(tiny_config):
    params = vit.init_params(tiny_config, 0)
    for name in params:
        if name.startswith("blocks."):
            params[name] = np.zeros_like(params[name])
    x = Tensor(np.random.default_rng(2).normal(size=(2, 17, 8)))
    out = vit.encoder_block(x, vit.as_tensors(params), 0, tiny_config, Rng(0), training=True)
    assert np.array_equal(out.data, x.data)


def test_block_inference_ignores_rng(tiny_config):
    params = vit.as_tensors(vit.random_params(tiny_config, 1))
    x = Tensor(np.random.default_rng(3).normal(size=(1, 17, 8)))
    a = vit.encoder_block(x, params, 0, tiny_config, Rng(1), training=False).data
    b = vit.encoder_block(x, params, 0, tiny_config, Rng(2), training=False).data
    assert np.array_equal(a, b)
    c = vit.encoder_block(x, params, 0, tiny_config, Rng(1), training=True).data
    assert not np.array_equal(a, c)


def straight_line_block(x, p, heads, eps=1e-5):
    """Independent pre-norm block: c_hat = mhsa(LN(x)) + x; c = MLP(LN(c_hat)) + c_hat."""
    def ln(v, g, b):
        mu = v.mean(-1, keepdims=True)
        var = ((v - mu) ** 2).mean(-1, keepdims=True)
        return (v - mu) / np.sqrt(var + eps) * g + b

    out = []
    for seq in x:
        h = ln(seq, p["blocks.0.norm1.gain"], p["blocks.0.norm1.bias"])
        q, k, v = (h @ p[f"blocks.0.attn.{n}"] for n in ("w_q", "w_k", "w_v"))
        dk = q.shape[1] // heads
        cols = [slice(j * dk, (j + 1) * dk) for j in range(heads)]
        attn = np.concatenate([brute_force_attention(q[:, c], k[:, c], v[:, c]) for c in cols], 1)
        c_hat = attn @ p["blocks.0.attn.w_o"] + seq
        h = ln(c_hat, p["blocks.0.norm2.gain"], p["blocks.0.norm2.bias"])
        h = h @ p["blocks.0.mlp.fc1.weight"] + p["blocks.0.mlp.fc1.bias"]
        h = h * 0.5 * (1 + erf(h / math.sqrt(2)))
        out.append(h @ p["blocks.0.mlp.fc2.weight"] + p["blocks.0.mlp.fc2.bias"] + c_hat)
    return np.stack(out)


def test_block_matches_straight_line_oracle(tiny_config):
    p = vit.random_params(tiny_config, 8)
    x = np.random.default_rng(9).normal(size=(2, 17, 8))
    out = vit.encoder_block(Tensor(x), vit.as_tensors(p), 0, tiny_config).data
    assert np.allclose(out, straight_line_block(x, p, tiny_config.num_heads), atol=1e-12)


# -- forward -------------------------------------------------------------------------

def _image(size, seed):
    return Image(np.random.default_rng(seed).integers(0, 256, (size, size, 3), dtype=np.uint8))


def test_zero_head_gives_uniform(tiny_config):
    params = vit.random_params(tiny_config, 2)
    params["head.weight"][:] = 0
    params["head.bias"][:] = 0
    dist = vit.forward(_image(16, 0), params, tiny_config)
    assert np.allclose(dist.probabilities, 1 / 3, atol=1e-15)


def test_forward_is_a_distribution_and_deterministic(tiny_config):
    params = vit.random_params(tiny_config, 3)
    a = vit.forward(_image(16, 1), params, tiny_config, Rng(5))
    b = vit.forward(_image(16, 1), params, tiny_config, Rng(5))
    assert a == b
    assert abs(a.probabilities.sum() - 1) < 1e-9 and (a.probabilities >= 0).all()
    with pytest.raises(ContractError):
        vit.forward(_image(8, 1), params, tiny_config)


def test_training_forward_uses_dropout(tiny_config):
    params = vit.random_params(tiny_config, 3)
    img = _image(16, 1)
    a = vit.forward(img, params, tiny_config, Rng(1), training=True)
    b = vit.forward(img, params, tiny_config, Rng(2), training=True)
    assert a != b


def test_patch_permutation_invariance_without_positions(tiny_config):
    params = vit.random_params(tiny_config, 4)
    params["pos_embed"][:] = 0
    tensors = vit.as_tensors(params)
    patches = vit.patchify(_image(16, 2), tiny_config)[None]
    base = vit.forward_patches(patches, tensors, tiny_config).data
    for seed in range(5):
        perm = np.random.default_rng(seed).permutation(tiny_config.num_patches)
        out = vit.forward_patches(patches[:, perm], tensors, tiny_config).data
        assert np.abs(out - base).max() < 1e-9


def test_positional_table_breaks_permutation_symmetry(tiny_config):
    params = vit.random_params(tiny_config, 4)
    tensors = vit.as_tensors(params)
    patches = vit.patchify(_image(16, 2), tiny_config)[None]
    perm = np.random.default_rng(0).permutation(tiny_config.num_patches)
    a = vit.forward_patches(patches, tensors, tiny_config).data
    b = vit.forward_patches(patches[:, perm], tensors, tiny_config).data
    assert np.abs(a - b).max() > 1e-6


def test_batched_forward_matches_single(tiny_config):
    params = vit.random_params(tiny_config, 6)
    imgs = [_image(16, s) for s in range(3)]
    batch = np.stack([im.to_float() for im in imgs])
    probs = vit.forward_batch(batch, vit.as_tensors(params), tiny_config).data
    for i, im in enumerate(imgs):
        assert np.allclose(probs[i], vit.forward(im, params, tiny_config).probabilities,
                           atol=1e-14)


def test_logit_shift_keeps_prediction(tiny_config):
    params = vit.random_params(tiny_config, 7)
    img = _image(16, 3)
    before = vit.forward(img, params, tiny_config).argmax()
    params["head.bias"] += 12.5
    assert vit.forward(img, params, tiny_config).argmax() == before


def test_gradient_check_passes_on_tiny_model():
    report = vit.gradient_check(seed=3)
    assert report.passed, report.lines()
    assert len(report.errors) == len(vit.param_shapes(vit.GRADCHECK_CONFIG))
