"""Hierarchical event adapter with a stand-in ViT-style image branch.

Dataflow for ``L`` fusion stages (``fusion_layers`` split the image blocks
into groups; the defaults 3, 6, 9, 12 give four groups of three)::

    F = P(image)                      shared patch embedding
    E = P(event_frame) @ down         image_dim -> event_dim
    for l in 1..L:
        F = image_group_l(F)          blocks fusion_layers[l-1]+1 .. fusion_layers[l]
        E = event_block_l(E)
        F = fuse(concat(F, E @ proj_l))   MLP: 2*image_dim -> fusion_hidden -> image_dim
    F = trailing image blocks(F)      blocks after the last fusion layer, if any

``fuse`` is one MLP shared by all stages by default (``shared_fusion``); set it
to False for an independent MLP per stage.  Everything here is plain numpy
with a hand-written backward pass so gradients can be checked against finite
differences.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, replace

import numpy as np

from evla.errors import IndivisibleResolution, InvalidConfig, InvalidRate, ShapeMismatch

LN_EPS = 1e-6
_GELU_C = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class AdapterConfig:
    patch_size: int = 16
    image_dim: int = 768
    event_dim: int = 384
    event_blocks: int = 4
    fusion_layers: tuple[int, ...] = (3, 6, 9, 12)
    fusion_hidden: int = 1536
    image_branch_blocks: int = 12
    image_heads: int = 12
    event_heads: int = 6
    mlp_ratio: float = 4.0
    in_channels: int = 3
    block_type: str = "transformer"
    fusion_activation: str = "gelu"
    shared_fusion: bool = True

    def __post_init__(self):
        object.__setattr__(self, "fusion_layers", tuple(int(v) for v in self.fusion_layers))
        self.validate()

    def validate(self) -> None:
        for name in ("patch_size", "image_dim", "event_dim", "fusion_hidden",
                     "image_branch_blocks", "image_heads", "event_heads", "in_channels"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be positive")
        if self.event_blocks < 0:
            raise InvalidConfig("event_blocks must be non-negative")
        if self.mlp_ratio <= 0:
            raise InvalidConfig("mlp_ratio must be positive")
        if len(self.fusion_layers) != self.event_blocks:
            raise InvalidConfig(
                f"need one fusion layer per event block: {len(self.fusion_layers)} "
                f"fusion layers for {self.event_blocks} event blocks"
            )
        if any(b <= a for a, b in zip(self.fusion_layers, self.fusion_layers[1:])):
            raise InvalidConfig(f"fusion_layers must be strictly increasing: {self.fusion_layers}")
        if self.fusion_layers and not (
            1 <= self.fusion_layers[0] and self.fusion_layers[-1] <= self.image_branch_blocks
        ):
            raise InvalidConfig("fusion_layers must index image blocks 1..image_branch_blocks")
        if self.event_blocks and self.image_branch_blocks % self.event_blocks:
            raise InvalidConfig("image_branch_blocks must be divisible by event_blocks")
        if self.block_type not in ("transformer", "linear"):
            raise InvalidConfig(f"unknown block_type {self.block_type!r}")
        if self.fusion_activation not in ("gelu", "identity"):
            raise InvalidConfig(f"unknown fusion_activation {self.fusion_activation!r}")
        if self.block_type == "transformer":
            if self.image_dim % self.image_heads or self.event_dim % self.event_heads:
                raise InvalidConfig("feature dims must be divisible by the head counts")

    @property
    def stages(self) -> int:
        return self.event_blocks

    def hidden(self, dim: int) -> int:
        return int(round(dim * self.mlp_ratio))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fusion_layers"] = list(self.fusion_layers)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "AdapterConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise InvalidConfig(f"unknown adapter config fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def paper_defaults(cls) -> "AdapterConfig":
        return cls()

    @classmethod
    def toy(cls, **overrides) -> "AdapterConfig":
        """A few thousand parameters; meant for 8x8 inputs."""
        base = cls(patch_size=4, image_dim=8, event_dim=4, event_blocks=2,
                   fusion_layers=(1, 2), fusion_hidden=16, image_branch_blocks=2,
                   image_heads=2, event_heads=1, mlp_ratio=2.0)
        return replace(base, **overrides)

    @classmethod
    def linear_toy(cls, **overrides) -> "AdapterConfig":
        return cls.toy(block_type="linear", fusion_activation="identity", **overrides)


# ---------------------------------------------------------------------------
# parameter layout

def _block_shapes(prefix: str, dim: int, config: AdapterConfig) -> list[tuple[str, tuple]]:
    if config.block_type == "linear":
        return [(prefix + "weight", (dim, dim)), (prefix + "bias", (dim,))]
    h = config.hidden(dim)
    return [
        (prefix + "ln1.gamma", (dim,)), (prefix + "ln1.beta", (dim,)),
        (prefix + "attn.qkv.weight", (dim, 3 * dim)), (prefix + "attn.qkv.bias", (3 * dim,)),
        (prefix + "attn.out.weight", (dim, dim)), (prefix + "attn.out.bias", (dim,)),
        (prefix + "ln2.gamma", (dim,)), (prefix + "ln2.beta", (dim,)),
        (prefix + "mlp.fc1.weight", (dim, h)), (prefix + "mlp.fc1.bias", (h,)),
        (prefix + "mlp.fc2.weight", (h, dim)), (prefix + "mlp.fc2.bias", (dim,)),
    ]


def _fusion_prefixes(config: AdapterConfig) -> list[str]:
    if not config.stages:
        return []
    if config.shared_fusion:
        return ["fusion."] * config.stages
    return [f"fusion.{l}." for l in range(config.stages)]


def param_shapes(config: AdapterConfig) -> "OrderedDict[str, tuple]":
    D, d, C, p = config.image_dim, config.event_dim, config.in_channels, config.patch_size
    shapes: list[tuple[str, tuple]] = [
        ("patch_embed.weight", (p * p * C, D)),
        ("patch_embed.bias", (D,)),
    ]
    for i in range(config.image_branch_blocks):
        shapes += _block_shapes(f"image.blocks.{i}.", D, config)
    if config.stages:
        shapes += [("event.down.weight", (D, d)), ("event.down.bias", (d,))]
        for l in range(config.stages):
            shapes += _block_shapes(f"event.blocks.{l}.", d, config)
        for l in range(config.stages):
            shapes += [(f"event.proj.{l}.weight", (d, D)), (f"event.proj.{l}.bias", (D,))]
        for prefix in OrderedDict.fromkeys(_fusion_prefixes(config)):
            shapes += [
                (prefix + "fc1.weight", (2 * D, config.fusion_hidden)),
                (prefix + "fc1.bias", (config.fusion_hidden,)),
                (prefix + "fc2.weight", (config.fusion_hidden, D)),
                (prefix + "fc2.bias", (D,)),
            ]
    return OrderedDict(shapes)


def is_additional(name: str) -> bool:
    """True for tensors the adapter adds on top of the image branch."""
    return name.startswith(("event.", "fusion."))


class AdapterParams:
    """Named tensors backed by one flat vector.

    ``params[name]`` returns a view into ``flat``, so perturbing ``flat``
    (as the gradient checker does) is seen by every tensor.
    """

    def __init__(self, flat: np.ndarray, layout: "OrderedDict[str, tuple]"):
        size = sum(int(np.prod(s)) for s in layout.values())
        if flat.ndim != 1 or flat.shape[0] != size:
            raise ShapeMismatch("flat", (size,), flat.shape)
        self.flat = flat
        self.layout = OrderedDict(layout)
        self._offsets = {}
        off = 0
        for name, shape in self.layout.items():
            n = int(np.prod(shape))
            self._offsets[name] = (off, off + n)
            off += n

    @classmethod
    def zeros(cls, layout, dtype=np.float64) -> "AdapterParams":
        size = sum(int(np.prod(s)) for s in layout.values())
        return cls(np.zeros(size, dtype=dtype), layout)

    @classmethod
    def from_tensors(cls, tensors: "OrderedDict[str, np.ndarray]", dtype=None) -> "AdapterParams":
        layout = OrderedDict((k, tuple(v.shape)) for k, v in tensors.items())
        arrays = [np.asarray(v).ravel() for v in tensors.values()]
        flat = np.concatenate(arrays) if arrays else np.zeros(0)
        return cls(flat.astype(dtype or flat.dtype), layout)

    def __getitem__(self, name: str) -> np.ndarray:
        a, b = self._offsets[name]
        return self.flat[a:b].reshape(self.layout[name])

    def __contains__(self, name: str) -> bool:
        return name in self.layout

    def __len__(self) -> int:
        return len(self.layout)

    def names(self) -> list[str]:
        return list(self.layout)

    def items(self):
        for name in self.layout:
            yield name, self[name]

    def slice_of(self, name: str) -> slice:
        a, b = self._offsets[name]
        return slice(a, b)

    @property
    def dtype(self):
        return self.flat.dtype

    @property
    def size(self) -> int:
        return self.flat.shape[0]

    def astype(self, dtype) -> "AdapterParams":
        return AdapterParams(self.flat.astype(dtype), self.layout)

    def copy(self) -> "AdapterParams":
        return AdapterParams(self.flat.copy(), self.layout)

    def zeros_like(self) -> "AdapterParams":
        return AdapterParams(np.zeros_like(self.flat), self.layout)

    def check(self, config: AdapterConfig) -> None:
        """Raise ShapeMismatch unless the layout is exactly what ``config`` needs."""
        expected = param_shapes(config)
        for name, shape in expected.items():
            got = self.layout.get(name)
            if got is None:
                raise ShapeMismatch(name, shape, ())
            if tuple(got) != tuple(shape):
                raise ShapeMismatch(name, shape, got)
        extra = [n for n in self.layout if n not in expected]
        if extra:
            raise ShapeMismatch(extra[0], (), self.layout[extra[0]])


def _truncated_normal(rng: np.random.Generator, n: int, std: float) -> np.ndarray:
    out = rng.standard_normal(n)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


def init_params(config: AdapterConfig, seed: int = 0, std: float = 0.02,
                dtype=np.float32) -> AdapterParams:
    """Truncated-normal weights (cut at 2 std), zero biases, unit LayerNorm gains."""
    rng = np.random.default_rng(seed)
    params = AdapterParams.zeros(param_shapes(config), dtype=np.float64)
    for name, shape in params.layout.items():
        view = params[name]
        if name.endswith("weight"):
            view[...] = _truncated_normal(rng, view.size, std).reshape(shape)
        elif name.endswith("gamma"):
            view[...] = 1.0
    return params.astype(dtype)


# ---------------------------------------------------------------------------
# layers: forward returns (out, cache); backward accumulates into grads

def _linear(x, w, b):
    return x @ w + b


def _linear_back(g, x, w, gw, gb):
    gw += x.T @ g
    gb += g.sum(axis=0)
    return g @ w.T


def _layernorm(x, gamma, beta):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * gamma + beta, (xhat, inv)


def _layernorm_back(g, cache, gamma, ggamma, gbeta):
    xhat, inv = cache
    ggamma += (g * xhat).sum(axis=0)
    gbeta += g.sum(axis=0)
    dxhat = g * gamma
    n = xhat.shape[-1]
    return inv / n * (n * dxhat - dxhat.sum(axis=-1, keepdims=True)
                      - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))


def _gelu(x):
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x ** 3)))


def _gelu_grad(x):
    th = np.tanh(_GELU_C * (x + 0.044715 * x ** 3))
    return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)


def _softmax(s):
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def _attention(x, P, pre, heads):
    n, d = x.shape
    dh = d // heads
    qkv = _linear(x, P[pre + "qkv.weight"], P[pre + "qkv.bias"])
    q, k, v = (qkv[:, i * d:(i + 1) * d].reshape(n, heads, dh).transpose(1, 0, 2)
               for i in range(3))
    scale = 1.0 / math.sqrt(dh)
    a = _softmax(q @ k.transpose(0, 2, 1) * scale)
    ctx = (a @ v).transpose(1, 0, 2).reshape(n, d)
    out = _linear(ctx, P[pre + "out.weight"], P[pre + "out.bias"])
    return out, (x, q, k, v, a, ctx, scale)


def _attention_back(g, cache, P, G, pre, heads):
    x, q, k, v, a, ctx, scale = cache
    n, d = x.shape
    gctx = _linear_back(g, ctx, P[pre + "out.weight"], G[pre + "out.weight"], G[pre + "out.bias"])
    gctx = gctx.reshape(n, heads, d // heads).transpose(1, 0, 2)
    ga = gctx @ v.transpose(0, 2, 1)
    gv = a.transpose(0, 2, 1) @ gctx
    gs = a * (ga - (ga * a).sum(axis=-1, keepdims=True)) * scale
    gq = gs @ k
    gk = gs.transpose(0, 2, 1) @ q
    gqkv = np.concatenate([t.transpose(1, 0, 2).reshape(n, d) for t in (gq, gk, gv)], axis=1)
    return _linear_back(gqkv, x, P[pre + "qkv.weight"], G[pre + "qkv.weight"], G[pre + "qkv.bias"])


def _block(x, P, pre, config, heads):
    if config.block_type == "linear":
        return _linear(x, P[pre + "weight"], P[pre + "bias"]), x
    h1, c_ln1 = _layernorm(x, P[pre + "ln1.gamma"], P[pre + "ln1.beta"])
    att, c_att = _attention(h1, P, pre + "attn.", heads)
    x1 = x + att
    h2, c_ln2 = _layernorm(x1, P[pre + "ln2.gamma"], P[pre + "ln2.beta"])
    z = _linear(h2, P[pre + "mlp.fc1.weight"], P[pre + "mlp.fc1.bias"])
    u = _gelu(z)
    y = x1 + _linear(u, P[pre + "mlp.fc2.weight"], P[pre + "mlp.fc2.bias"])
    return y, (c_ln1, c_att, c_ln2, h2, z, u)


def _block_back(g, cache, P, G, pre, config, heads):
    if config.block_type == "linear":
        return _linear_back(g, cache, P[pre + "weight"], G[pre + "weight"], G[pre + "bias"])
    c_ln1, c_att, c_ln2, h2, z, u = cache
    gu = _linear_back(g, u, P[pre + "mlp.fc2.weight"], G[pre + "mlp.fc2.weight"],
                      G[pre + "mlp.fc2.bias"])
    gz = gu * _gelu_grad(z)
    gh2 = _linear_back(gz, h2, P[pre + "mlp.fc1.weight"], G[pre + "mlp.fc1.weight"],
                       G[pre + "mlp.fc1.bias"])
    gx1 = g + _layernorm_back(gh2, c_ln2, P[pre + "ln2.gamma"], G[pre + "ln2.gamma"],
                              G[pre + "ln2.beta"])
    gh1 = _attention_back(gx1, c_att, P, G, pre + "attn.", heads)
    return gx1 + _layernorm_back(gh1, c_ln1, P[pre + "ln1.gamma"], G[pre + "ln1.gamma"],
                                 G[pre + "ln1.beta"])


def _fuse(f, e_proj, P, pre, config):
    cat = np.concatenate([f, e_proj], axis=1)
    z = _linear(cat, P[pre + "fc1.weight"], P[pre + "fc1.bias"])
    u = _gelu(z) if config.fusion_activation == "gelu" else z
    return _linear(u, P[pre + "fc2.weight"], P[pre + "fc2.bias"]), (cat, z, u)


def _fuse_back(g, cache, P, G, pre, config):
    cat, z, u = cache
    gu = _linear_back(g, u, P[pre + "fc2.weight"], G[pre + "fc2.weight"], G[pre + "fc2.bias"])
    gz = gu * _gelu_grad(z) if config.fusion_activation == "gelu" else gu
    gcat = _linear_back(gz, cat, P[pre + "fc1.weight"], G[pre + "fc1.weight"], G[pre + "fc1.bias"])
    D = config.image_dim
    return gcat[:, :D], gcat[:, D:]


# ---------------------------------------------------------------------------
# public API

def pad_to_patch(frame: np.ndarray, patch_size: int) -> np.ndarray:
    """Zero-pad right and bottom so both sides are multiples of ``patch_size``."""
    h, w = frame.shape[:2]
    ph, pw = -h % patch_size, -w % patch_size
    if not (ph or pw):
        return frame
    pad = [(0, ph), (0, pw)] + [(0, 0)] * (frame.ndim - 2)
    return np.pad(frame, pad)


def token_grid_shape(config: AdapterConfig, resolution: tuple[int, int]) -> tuple[int, int]:
    """Patch grid (rows, cols) after padding to a multiple of the patch size."""
    h, w = resolution
    p = config.patch_size
    return (-(-h // p), -(-w // p))


def patchify(frame: np.ndarray, patch_size: int) -> np.ndarray:
    h, w, c = frame.shape
    if h % patch_size or w % patch_size:
        raise IndivisibleResolution(
            f"{h}x{w} is not divisible by patch size {patch_size}"
        )
    gh, gw = h // patch_size, w // patch_size
    return (frame.reshape(gh, patch_size, gw, patch_size, c)
            .transpose(0, 2, 1, 3, 4)
            .reshape(gh * gw, patch_size * patch_size * c))


def patch_embed_shared(frame: np.ndarray, params: AdapterParams) -> np.ndarray:
    """Project non-overlapping patches with the embedding used by both branches."""
    w = params["patch_embed.weight"]
    c = np.asarray(frame).shape[-1]
    patch_size = int(round(math.sqrt(w.shape[0] // c)))
    return _embed(patchify(np.asarray(frame, dtype=params.dtype), patch_size), params)


def _prepare(image, event_frame, params, config):
    params.check(config)
    img = np.asarray(image)
    ev = np.asarray(event_frame)
    if img.ndim != 3 or img.shape[-1] != config.in_channels:
        raise ShapeMismatch("image", ("H", "W", config.in_channels), img.shape)
    if ev.shape != img.shape:
        raise ShapeMismatch("event_frame", img.shape, ev.shape)
    img = img.astype(params.dtype) / 255.0 if img.dtype == np.uint8 else img.astype(params.dtype)
    ev = ev.astype(params.dtype)
    p = config.patch_size
    return patchify(pad_to_patch(img, p), p), patchify(pad_to_patch(ev, p), p)


def _image_groups(config: AdapterConfig) -> list[range]:
    bounds = [0, *config.fusion_layers]
    groups = [range(a, b) for a, b in zip(bounds, bounds[1:])]
    groups.append(range(bounds[-1], config.image_branch_blocks))
    return groups


def shape_trace(config: AdapterConfig, resolution: tuple[int, int]) -> list[tuple[str, tuple]]:
    """The (stage, activation shape) sequence a forward pass at ``resolution`` produces."""
    gh, gw = token_grid_shape(config, resolution)
    n, D, d = gh * gw, config.image_dim, config.event_dim
    trace = [("image.patch_embed", (n, D))]
    if config.stages:
        trace += [("event.patch_embed", (n, D)), ("event.down", (n, d))]
    groups = _image_groups(config)
    for l, group in enumerate(groups):
        if len(group):
            trace.append((f"image.group.{l}", (n, D)))
        if l == len(groups) - 1:
            break
        trace += [(f"event.block.{l}", (n, d)), (f"event.proj.{l}", (n, D)),
                  (f"fusion.{l}", (n, D))]
    return trace


def _embed(patches, P):
    # the one patch embedding both branches go through
    return _linear(patches, P["patch_embed.weight"], P["patch_embed.bias"])


def branch_embeddings(image, event_frame, params: AdapterParams, config: AdapterConfig):
    """Token grids entering the image and event branches, before any block."""
    img, ev = _prepare(image, event_frame, params, config)
    return _embed(img, params), _embed(ev, params)


def _run(img_patches, ev_patches, params, config, trace=None):
    P = params
    caches = {}
    f = _embed(img_patches, P)
    if trace is not None:
        trace.append(("image.patch_embed", f.shape))
    groups = _image_groups(config)
    fusers = _fusion_prefixes(config)
    if config.stages:
        e0 = _embed(ev_patches, P)
        e = _linear(e0, P["event.down.weight"], P["event.down.bias"])
        caches["e0"] = e0
        if trace is not None:
            trace.append(("event.patch_embed", e0.shape))
            trace.append(("event.down", e.shape))
    for l, group in enumerate(groups):
        for i in group:
            f, caches[f"img{i}"] = _block(f, P, f"image.blocks.{i}.", config, config.image_heads)
        if trace is not None and len(group):
            trace.append((f"image.group.{l}", f.shape))
        if l == len(groups) - 1:
            break
        e, caches[f"ev{l}"] = _block(e, P, f"event.blocks.{l}.", config, config.event_heads)
        caches[f"ev{l}_out"] = e
        ep = _linear(e, P[f"event.proj.{l}.weight"], P[f"event.proj.{l}.bias"])
        caches[f"proj{l}_out"] = ep
        f, caches[f"fuse{l}"] = _fuse(f, ep, P, fusers[l], config)
        if trace is not None:
            trace.append((f"event.block.{l}", e.shape))
            trace.append((f"event.proj.{l}", ep.shape))
            trace.append((f"fusion.{l}", f.shape))
    return f, caches


def adapter_forward(image, event_frame, params: AdapterParams, config: AdapterConfig,
                    trace: list | None = None) -> np.ndarray:
    """Fused visual tokens, shape ``(n_tokens, image_dim)``.

    ``image`` is 8-bit RGB (scaled to [0, 1]) or already-real; ``event_frame``
    is real in [0, 1].  Both are zero-padded to a multiple of the patch size.
    """
    img, ev = _prepare(image, event_frame, params, config)
    out, _ = _run(img, ev, params, config, trace)
    return out


def image_only_forward(image, params: AdapterParams, config: AdapterConfig) -> np.ndarray:
    """The stand-in image branch on its own: patch embedding then every block."""
    img, _ = _prepare(image, np.zeros(np.shape(image)), params, config)
    f = _linear(img, params["patch_embed.weight"], params["patch_embed.bias"])
    for i in range(config.image_branch_blocks):
        f, _ = _block(f, params, f"image.blocks.{i}.", config, config.image_heads)
    return f


def adapter_value_and_grad(image, event_frame, params: AdapterParams, config: AdapterConfig,
                           upstream: np.ndarray | None = None):
    """Forward pass plus gradient of ``sum(upstream * output)`` w.r.t. every parameter.

    ``upstream`` defaults to ones, i.e. the loss is the sum of all output tokens.
    """
    img, ev = _prepare(image, event_frame, params, config)
    out, caches = _run(img, ev, params, config)
    P, G = params, params.zeros_like()
    g = np.ones_like(out) if upstream is None else np.asarray(upstream, dtype=out.dtype)
    groups = _image_groups(config)
    fusers = _fusion_prefixes(config)
    ge = None
    for l in range(len(groups) - 1, -1, -1):
        if l < len(groups) - 1:
            gf, gep = _fuse_back(g, caches[f"fuse{l}"], P, G, fusers[l], config)
            ge_l = _linear_back(gep, caches[f"ev{l}_out"], P[f"event.proj.{l}.weight"],
                                G[f"event.proj.{l}.weight"], G[f"event.proj.{l}.bias"])
            ge = ge_l if ge is None else ge + ge_l
            ge = _block_back(ge, caches[f"ev{l}"], P, G, f"event.blocks.{l}.", config,
                             config.event_heads)
            g = gf
        for i in reversed(groups[l]):
            g = _block_back(g, caches[f"img{i}"], P, G, f"image.blocks.{i}.", config,
                            config.image_heads)
    _linear_back(g, img, P["patch_embed.weight"], G["patch_embed.weight"], G["patch_embed.bias"])
    if config.stages:
        ge0 = _linear_back(ge, caches["e0"], P["event.down.weight"], G["event.down.weight"],
                           G["event.down.bias"])
        _linear_back(ge0, ev, P["patch_embed.weight"], G["patch_embed.weight"],
                     G["patch_embed.bias"])
    return out, G


def image_dropout(batch, rate: float, seed: int = 0):
    """Zero each sample's image with probability ``rate``; event frames are untouched.

    Returns the masked batch and the boolean drop mask.
    """
    if not (0.0 <= rate <= 1.0):
        raise InvalidRate(f"dropout rate must lie in [0, 1], got {rate}")
    rng = np.random.default_rng(seed)
    batch = list(batch)
    dropped = rng.random(len(batch)) < rate
    out = [(np.zeros_like(img) if d else img, ev) for (img, ev), d in zip(batch, dropped)]
    return out, dropped
