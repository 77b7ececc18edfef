"""Vision transformer over pose-composited images.

Pipeline: patchify -> linear patch embedding + CLS token + learned
positional table -> ``depth`` pre-norm encoder blocks (multi-head
self-attention, GELU MLP) -> final layernorm -> CLS output -> dense head ->
softmax.

Parameters live in a plain ``dict[str, np.ndarray]`` keyed by checkpoint
name; :func:`as_tensors` wraps them for a differentiable pass.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Mapping

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import autodiff as ad
from .autodiff import Tensor
from .distribution import ClassDistribution
from .errors import ConfigError, ContractError
from .imaging import Image
from .rng import Rng

INIT_STD = 0.02

ModelParams = dict  # name -> np.ndarray


@dataclass(frozen=True)
class ViTConfig:
    image_size: int = 224
    patch_height: int = 16
    patch_width: int = 16
    stride_height: int | None = None
    stride_width: int | None = None
    embed_dim: int = 256
    num_heads: int = 4
    depth: int = 4
    mlp_hidden: int | None = None
    num_classes: int = 16
    dropout_block: float = 0.25
    dropout_head: float = 0.50

    def __post_init__(self):
        if self.stride_height is None:
            object.__setattr__(self, "stride_height", self.patch_height)
        if self.stride_width is None:
            object.__setattr__(self, "stride_width", self.patch_width)
        if self.mlp_hidden is None:
            object.__setattr__(self, "mlp_hidden", 2 * self.embed_dim)
        for name in ("image_size", "patch_height", "patch_width", "stride_height",
                     "stride_width", "embed_dim", "num_heads", "mlp_hidden", "num_classes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.depth < 0:
            raise ConfigError("depth must be nonnegative")
        for p, s in ((self.patch_height, self.stride_height), (self.patch_width, self.stride_width)):
            if p > self.image_size or (self.image_size - p) % s:
                raise ConfigError(
                    f"patch {p} with stride {s} does not tile an image of {self.image_size}")
        if self.embed_dim % self.num_heads:
            raise ConfigError(f"embed_dim {self.embed_dim} not divisible by {self.num_heads} heads")
        for rate in (self.dropout_block, self.dropout_head):
            if not 0.0 <= rate < 1.0:
                raise ConfigError("dropout rates must be in [0, 1)")

    @property
    def grid(self) -> tuple[int, int]:
        return ((self.image_size - self.patch_height) // self.stride_height + 1,
                (self.image_size - self.patch_width) // self.stride_width + 1)

    @property
    def num_patches(self) -> int:
        rows, cols = self.grid
        return rows * cols

    @property
    def patch_dim(self) -> int:
        return self.patch_height * self.patch_width * 3

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ViTConfig":
        return cls(**d)


def param_shapes(config: ViTConfig) -> dict[str, tuple[int, ...]]:
    D, H, k = config.embed_dim, config.mlp_hidden, config.num_classes
    shapes = {
        "patch_embed.weight": (config.patch_dim, D),
        "patch_embed.bias": (D,),
        "pos_embed": (config.num_patches + 1, D),
        "cls_token": (D,),
    }
    for i in range(config.depth):
        b = f"blocks.{i}."
        shapes.update({
            b + "norm1.gain": (D,), b + "norm1.bias": (D,),
            b + "attn.w_q": (D, D), b + "attn.w_k": (D, D),
            b + "attn.w_v": (D, D), b + "attn.w_o": (D, D),
            b + "norm2.gain": (D,), b + "norm2.bias": (D,),
            b + "mlp.fc1.weight": (D, H), b + "mlp.fc1.bias": (H,),
            b + "mlp.fc2.weight": (H, D), b + "mlp.fc2.bias": (D,),
        })
    shapes.update({"norm.gain": (D,), "norm.bias": (D,),
                   "head.weight": (D, k), "head.bias": (k,)})
    return shapes


def _is_weight(name: str) -> bool:
    return name.endswith(("weight", ".w_q", ".w_k", ".w_v", ".w_o"))


def init_params(config: ViTConfig, seed: int = 0) -> ModelParams:
    """Truncated-normal weights (std 0.02, cut at 2 std); zero biases,
    positional table and CLS; unit layernorm gains."""
    rng = Rng(seed)
    params = {}
    for name, shape in param_shapes(config).items():
        if _is_weight(name):
            params[name] = rng.truncated_normal(shape, std=INIT_STD, bound=2.0)
        elif name.endswith(".gain"):
            params[name] = np.ones(shape)
        else:
            params[name] = np.zeros(shape)
    return params


def check_params(params: Mapping[str, np.ndarray], config: ViTConfig) -> None:
    expected = param_shapes(config)
    if set(params) != set(expected):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise ContractError(f"parameter names differ: missing {missing}, unexpected {extra}")
    for name, shape in expected.items():
        if np.shape(params[name]) != shape:
            raise ContractError(f"{name}: shape {np.shape(params[name])} != {shape}")


def as_tensors(params: Mapping[str, np.ndarray], requires_grad: bool = False) -> dict[str, Tensor]:
    return {name: Tensor(value, requires_grad=requires_grad) for name, value in params.items()}


def patchify(images, config: ViTConfig) -> np.ndarray:
    """Flatten sliding windows row-major, enumerating windows left to right
    then top to bottom.

    Accepts an :class:`Image`, a float array [H, W, 3] already scaled to
    [0, 1], or a batch [B, H, W, 3]. Returns [N, P] or [B, N, P].
    """
    x = images.to_float() if isinstance(images, Image) else np.asarray(images, dtype=np.float64)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4 or x.shape[1:] != (config.image_size, config.image_size, 3):
        raise ConfigError(
            f"expected images of {config.image_size}x{config.image_size}x3, got {x.shape[1:]}")
    win = sliding_window_view(x, (config.patch_height, config.patch_width), axis=(1, 2))
    win = win[:, ::config.stride_height, ::config.stride_width]
    # [B, rows, cols, 3, p1, p2] -> [B, rows, cols, p1, p2, 3]
    win = win.transpose(0, 1, 2, 4, 5, 3)
    out = win.reshape(x.shape[0], config.num_patches, config.patch_dim)
    return out[0] if single else out


def embed(patches: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    """Tokens [B, N+1, D]: CLS + W_pos[0] then w x_n + b + W_pos[n]."""
    w = params["patch_embed.weight"]
    if patches.ndim != 3 or patches.shape[-1] != w.shape[0]:
        raise ContractError(f"patch rows must have width {w.shape[0]}, got {patches.shape}")
    batch, n = patches.shape[0], patches.shape[1]
    pos = params["pos_embed"]
    if pos.shape[0] != n + 1:
        raise ContractError(f"positional table has {pos.shape[0]} rows for {n} patches")
    z = ad.matmul(patches, w) + params["patch_embed.bias"]
    cls = ad.add(np.zeros((batch, 1, w.shape[1])), params["cls_token"])
    return ad.concat([cls, z], axis=1) + pos


def attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(q k^T / sqrt(d_k)) v over the last two axes."""
    d_k = q.shape[-1]
    scores = ad.mul(ad.matmul(q, ad.transpose(k, _swap_last(k.ndim))), 1.0 / np.sqrt(d_k))
    return ad.matmul(ad.softmax(scores), v)


def _swap_last(ndim: int) -> tuple[int, ...]:
    axes = list(range(ndim))
    axes[-2], axes[-1] = axes[-1], axes[-2]
    return tuple(axes)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, t, d = x.shape
    return ad.transpose(ad.reshape(x, (b, t, heads, d // heads)), (0, 2, 1, 3))


def mhsa(tokens: Tensor, params: Mapping[str, Tensor], prefix: str, num_heads: int) -> Tensor:
    """Head j uses columns [j*d_k, (j+1)*d_k) of the fused projections;
    heads are concatenated in order and mixed by w_o."""
    b, t, d = tokens.shape
    q = _split_heads(ad.matmul(tokens, params[prefix + "w_q"]), num_heads)
    k = _split_heads(ad.matmul(tokens, params[prefix + "w_k"]), num_heads)
    v = _split_heads(ad.matmul(tokens, params[prefix + "w_v"]), num_heads)
    heads = attention(q, k, v)
    merged = ad.reshape(ad.transpose(heads, (0, 2, 1, 3)), (b, t, d))
    return ad.matmul(merged, params[prefix + "w_o"])


def encoder_block(c_prev: Tensor, params: Mapping[str, Tensor], index: int,
                  config: ViTConfig, rng: Rng | None = None, training: bool = False) -> Tensor:
    p = f"blocks.{index}."
    rate = config.dropout_block
    h = ad.layernorm(c_prev, params[p + "norm1.gain"], params[p + "norm1.bias"])
    h = ad.dropout(mhsa(h, params, p + "attn.", config.num_heads), rate, training, rng)
    c_hat = c_prev + h
    h = ad.layernorm(c_hat, params[p + "norm2.gain"], params[p + "norm2.bias"])
    h = ad.matmul(h, params[p + "mlp.fc1.weight"]) + params[p + "mlp.fc1.bias"]
    h = ad.dropout(ad.gelu(h), rate, training, rng)
    h = ad.matmul(h, params[p + "mlp.fc2.weight"]) + params[p + "mlp.fc2.bias"]
    h = ad.dropout(h, rate, training, rng)
    return c_hat + h


def forward_patches(patches, params: Mapping[str, Tensor], config: ViTConfig,
                    rng: Rng | None = None, training: bool = False) -> Tensor:
    """Class probabilities [B, k] from patch rows [B, N, P]."""
    x = embed(patches if isinstance(patches, Tensor) else Tensor(patches), params)
    for i in range(config.depth):
        x = encoder_block(x, params, i, config, rng, training)
    x = ad.layernorm(x, params["norm.gain"], params["norm.bias"])
    cls = ad.dropout(ad.getitem(x, (slice(None), 0)), config.dropout_head, training, rng)
    logits = ad.matmul(cls, params["head.weight"]) + params["head.bias"]
    return ad.softmax(logits)


def forward_batch(images: np.ndarray, params: Mapping[str, Tensor], config: ViTConfig,
                  rng: Rng | None = None, training: bool = False) -> Tensor:
    """Class probabilities [B, k] for float images [B, H, W, 3] in [0, 1]."""
    return forward_patches(patchify(images, config), params, config, rng, training)


def forward(image: Image, params: Mapping, config: ViTConfig,
            rng: Rng | None = None, training: bool = False) -> ClassDistribution:
    if image.height != config.image_size or image.width != config.image_size:
        raise ContractError(
            f"image is {image.height}x{image.width}, model expects {config.image_size}")
    tensors = {n: v if isinstance(v, Tensor) else Tensor(v) for n, v in params.items()}
    probs = forward_batch(image.to_float()[None], tensors, config, rng, training)
    return ClassDistribution(probs.data[0])


# -- gradient acceptance run --------------------------------------------------

GRADCHECK_CONFIG = ViTConfig(image_size=16, patch_height=4, patch_width=4, embed_dim=8,
                             num_heads=2, depth=1, num_classes=3)


def random_params(config: ViTConfig, seed: int, scale: float = 0.5) -> ModelParams:
    """Every tensor drawn away from its degenerate init, for gradient checks."""
    rng = Rng(seed)
    params = {}
    for name, shape in param_shapes(config).items():
        noise = rng.normal(shape, std=scale)
        if name.endswith(".gain"):
            params[name] = 1.0 + 0.2 * noise
        elif _is_weight(name):
            params[name] = noise / np.sqrt(shape[0]) * 2.0
        else:
            params[name] = 0.2 * noise
    return params


def gradient_check(seed: int = 0, tol: float = 1e-4, h: float = 1e-5,
                   config: ViTConfig = GRADCHECK_CONFIG, batch: int = 2) -> ad.GradCheckReport:
    """Finite-difference check of softmax cross-entropy over a full forward pass,
    one entry per parameter tensor, dropout disabled."""
    rng = Rng(seed)
    params = as_tensors(random_params(config, int(rng.next_u64(1)[0])), requires_grad=True)
    images = rng.random((batch, config.image_size, config.image_size, 3))
    labels = rng.integers(0, config.num_classes, (batch,))
    targets = np.eye(config.num_classes)[labels]

    def loss():
        return ad.cross_entropy(forward_batch(images, params, config, training=False), targets)

    return ad.finite_diff_check(loss, params, h=h, tol=tol)
