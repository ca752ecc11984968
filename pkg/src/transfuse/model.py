"""CNN + dual-transformer encoder, EnhanceBlock, and decoder.

Tensor layout is ``(B, C, H, W)`` throughout.  Token sequences are
``(B, N, D)``.
"""
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, NumericalError, ShapeError


@dataclass(frozen=True)
class PatchConfig:
    image_size: int = 256
    global_patch: int = 16
    local_patch: int = 4

    def __post_init__(self):
        if min(self.image_size, self.global_patch, self.local_patch) < 1:
            raise ConfigError("patch sizes must be positive")
        if self.image_size % self.global_patch:
            raise ConfigError(
                f"image size {self.image_size} is not divisible by global patch {self.global_patch}"
            )
        if self.global_patch % self.local_patch:
            raise ConfigError(
                f"global patch {self.global_patch} is not divisible by local patch {self.local_patch}"
            )

    @property
    def n_global(self):
        return (self.image_size // self.global_patch) ** 2

    @property
    def subpatches(self):
        return (self.global_patch // self.local_patch) ** 2

    @property
    def n_local(self):
        return self.n_global * self.subpatches


@dataclass(frozen=True)
class ModelConfig:
    cnn_channels: int = 16
    token_dim_global: int = 64
    token_dim_local: int = 16
    trans_channels: int = 8
    depth: int = 4
    heads: int = 4
    mlp_ratio: float = 4.0
    patch: PatchConfig = field(default_factory=PatchConfig)
    transformer: bool = True
    inject_every_layer: bool = True

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")
        if self.heads < 1:
            raise ConfigError("heads must be >= 1")
        for name in ("token_dim_global", "token_dim_local"):
            if getattr(self, name) % self.heads:
                raise ConfigError(f"{name}={getattr(self, name)} is not divisible by heads={self.heads}")
        if min(self.cnn_channels, self.trans_channels) < 1:
            raise ConfigError("channel counts must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["patch"] = PatchConfig(**d.get("patch", {}))
        return cls(**d)

    def with_image_size(self, size):
        return replace(self, patch=replace(self.patch, image_size=int(size)))


# ---------------------------------------------------------------------------
# patch bookkeeping
# ---------------------------------------------------------------------------


def _to_tensor(x):
    if isinstance(x, np.ndarray):
        return torch.from_numpy(x), True
    return x, False


def _back(x, was_numpy):
    return x.numpy() if was_numpy else x


def _check_divisible(h, w, p):
    if h % p or w % p:
        raise ConfigError(f"image {h}x{w} is not divisible by patch size {p}")


def patchify(img, p):
    """``(..., H, W)`` -> ``(..., N, p*p)``; patches and pixels row-major."""
    x, was_np = _to_tensor(img)
    *lead, h, w = x.shape
    _check_divisible(h, w, p)
    x = x.reshape(*lead, h // p, p, w // p, p)
    n = len(lead)
    x = x.permute(*range(n), n, n + 2, n + 1, n + 3)
    return _back(x.reshape(*lead, (h // p) * (w // p), p * p), was_np)


def unpatchify(tokens, p, h, w):
    x, was_np = _to_tensor(tokens)
    *lead, count, dim = x.shape
    if dim != p * p or count != (h // p) * (w // p):
        raise ShapeError(f"cannot fold {count} tokens of length {dim} into {h}x{w} with patch {p}")
    n = len(lead)
    x = x.reshape(*lead, h // p, w // p, p, p)
    x = x.permute(*range(n), n, n + 2, n + 1, n + 3)
    return _back(x.reshape(*lead, h, w), was_np)


def patchify_global(img, cfg):
    h, w = img.shape[-2:]
    if h != cfg.image_size or w != cfg.image_size:
        raise ConfigError(f"image {h}x{w} does not match configured size {cfg.image_size}")
    return patchify(img, cfg.global_patch)


def patchify_local(img, cfg):
    """Sub-patch tokens grouped by parent patch: ``(..., N_G * S, P_L^2)``."""
    g = patchify_global(img, cfg)
    x, was_np = _to_tensor(g)
    *lead, n_g, _ = x.shape
    pg, pl = cfg.global_patch, cfg.local_patch
    x = x.reshape(*lead, n_g, pg, pg)
    x = patchify(x, pl)
    return _back(x.reshape(*lead, n_g * cfg.subpatches, pl * pl), was_np)


def unpatchify_local(tokens, cfg):
    x, was_np = _to_tensor(tokens)
    *lead, _, _ = x.shape
    pg, pl = cfg.global_patch, cfg.local_patch
    x = x.reshape(*lead, cfg.n_global, cfg.subpatches, pl * pl)
    x = unpatchify(x, pl, pg, pg).reshape(*lead, cfg.n_global, pg * pg)
    return _back(unpatchify(x, pg, cfg.image_size, cfg.image_size), was_np)


def unpatchify_global(tokens, cfg):
    return unpatchify(tokens, cfg.global_patch, cfg.image_size, cfg.image_size)


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------


def _check_finite(x, where):
    if not torch.isfinite(x).all():
        raise NumericalError(f"non-finite activations in {where}")
    return x


class ConvBlock(nn.Module):
    """conv3x3 -> conv3x3 -> ReLU, size preserving."""

    def __init__(self, cin, cout):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)

    def forward(self, x):
        return F.relu(self.conv2(self.conv1(x)))


class TokenEmbedding(nn.Module):
    """Per-token affine projection plus a learned positional table."""

    def __init__(self, in_dim, dim, n_tokens):
        super().__init__()
        self.proj = nn.Linear(in_dim, dim)
        self.pos = nn.Parameter(torch.zeros(n_tokens, dim))

    def forward(self, x):
        return self.proj(x) + self.pos


class Attention(nn.Module):
    def __init__(self, dim, heads):
        super().__init__()
        if dim % heads:
            raise ConfigError(f"dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def attention_weights(self, x):
        b, n, d = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.heads, d // self.heads).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        return (q @ k.transpose(-2, -1) * self.scale).softmax(dim=-1), v

    def forward(self, x):
        b, n, d = x.shape
        attn, v = self.attention_weights(x)
        out = (attn @ v).transpose(1, 2).reshape(b, n, d)
        return self.proj(out)


class Mlp(nn.Module):
    def __init__(self, dim, hidden):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class TransformerBlock(nn.Module):
    """Pre-norm residual MSA followed by a pre-norm residual MLP."""

    def __init__(self, dim, heads, mlp_ratio=4.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, int(dim * mlp_ratio))

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        x = x + self.mlp(self.norm2(x))
        return _check_finite(x, "transformer block")


class LocalInjection(nn.Module):
    """Adds the flattened sub-patch tokens of each patch to that patch's token."""

    def __init__(self, subpatches, dim_local, dim_global):
        super().__init__()
        self.subpatches = subpatches
        self.dim_local = dim_local
        self.proj = nn.Linear(subpatches * dim_local, dim_global)

    def forward(self, global_seq, local_seq):
        b, n_g, _ = global_seq.shape
        if local_seq.numel() != b * n_g * self.subpatches * self.dim_local:
            raise ShapeError(
                f"local tokens {tuple(local_seq.shape)} do not group into {n_g} patches "
                f"of {self.subpatches} x {self.dim_local}"
            )
        flat = local_seq.reshape(b, n_g, self.subpatches * self.dim_local)
        return global_seq + self.proj(flat)


class TransformerModule(nn.Module):
    """Fine-grained (sub-patch) and Global (patch) transformers.

    The fine-grained blocks run on every patch's sub-patch sequence with
    shared weights; their output is injected into the global tokens before
    each global block.  With ``inject_every_layer=False`` all fine-grained
    blocks run first and a single injection precedes the global stack.
    """

    def __init__(self, cfg):
        super().__init__()
        pc = cfg.patch
        self.cfg = cfg
        dl, dg = cfg.token_dim_local, cfg.token_dim_global
        self.local_embed = TokenEmbedding(pc.local_patch**2, dl, pc.subpatches)
        self.global_embed = TokenEmbedding(pc.global_patch**2, dg, pc.n_global)
        self.local_blocks = nn.ModuleList(
            TransformerBlock(dl, cfg.heads, cfg.mlp_ratio) for _ in range(cfg.depth)
        )
        self.global_blocks = nn.ModuleList(
            TransformerBlock(dg, cfg.heads, cfg.mlp_ratio) for _ in range(cfg.depth)
        )
        n_inject = cfg.depth if cfg.inject_every_layer else 1
        self.inject = nn.ModuleList(
            LocalInjection(pc.subpatches, dl, dg) for _ in range(n_inject)
        )
        self.head_norm = nn.LayerNorm(dg)
        self.head = nn.Linear(dg, pc.global_patch**2 * cfg.trans_channels)

    def embed(self, img):
        pc = self.cfg.patch
        b = img.shape[0]
        local = patchify_local(img[:, 0], pc).reshape(b * pc.n_global, pc.subpatches, -1)
        glob = patchify_global(img[:, 0], pc)
        return self.global_embed(glob), self.local_embed(local)

    def local_forward(self, local):
        """Run every fine-grained block over a ``(patches, S, D_l)`` batch."""
        for blk in self.local_blocks:
            local = blk(local)
        return local

    def forward(self, img):
        pc = self.cfg.patch
        glob, local = self.embed(img)
        if self.cfg.inject_every_layer:
            for lblk, inj, gblk in zip(self.local_blocks, self.inject, self.global_blocks):
                local = lblk(local)
                glob = gblk(inj(glob, local))
        else:
            local = self.local_forward(local)
            glob = self.inject[0](glob, local)
            for gblk in self.global_blocks:
                glob = gblk(glob)
        out = self.head(self.head_norm(glob))  # (B, N_G, C_t * P_G^2)
        b = out.shape[0]
        ct = self.cfg.trans_channels
        out = out.reshape(b, pc.n_global, ct, pc.global_patch**2).permute(0, 2, 1, 3)
        return _check_finite(unpatchify_global(out, pc), "transformer module")


class TransFuseNet(nn.Module):
    """Encoder (CNN + transformer branches, EnhanceBlock) and decoder."""

    def __init__(self, cfg=None):
        super().__init__()
        cfg = cfg or ModelConfig()
        self.cfg = cfg
        c = cfg.cnn_channels
        self.cnn = nn.Sequential(ConvBlock(1, c), ConvBlock(c, c), ConvBlock(c, c))
        if cfg.transformer:
            self.transformer = TransformerModule(cfg)
            enhance_in = c + cfg.trans_channels
        else:
            self.transformer = None
            enhance_in = c
        self.enhance = nn.Sequential(ConvBlock(enhance_in, c), ConvBlock(c, c))
        self.decoder = nn.Sequential(ConvBlock(c, c), ConvBlock(c, c), nn.Conv2d(c, 1, 1))
        self.reset_parameters()

    def reset_parameters(self):
        # only the second conv of a ConvBlock feeds a ReLU
        after_relu = {id(m.conv2) for m in self.modules() if isinstance(m, ConvBlock)}
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                gain = "relu" if id(m) in after_relu else "linear"
                nn.init.kaiming_normal_(m.weight, nonlinearity=gain)
                nn.init.zeros_(m.bias)
            elif isinstance(m, nn.Linear):
                nn.init.trunc_normal_(m.weight, std=0.02)
                nn.init.zeros_(m.bias)
            elif isinstance(m, TokenEmbedding):
                nn.init.trunc_normal_(m.pos, std=0.02)
        for m in self.modules():
            # residual branches start as the identity
            if isinstance(m, TransformerBlock):
                nn.init.zeros_(m.attn.proj.weight)
                nn.init.zeros_(m.mlp.fc2.weight)

    def cnn_module(self, x):
        return self.cnn(x)

    def enhance_block(self, cnn_feat, trans_feat=None):
        if trans_feat is None:
            return self.enhance(cnn_feat)
        if cnn_feat.shape[-2:] != trans_feat.shape[-2:]:
            raise ShapeError(
                f"feature maps differ spatially: {tuple(cnn_feat.shape)} vs {tuple(trans_feat.shape)}"
            )
        return self.enhance(torch.cat([cnn_feat, trans_feat], dim=1))

    def encode(self, x):
        cnn_feat = self.cnn_module(x)
        trans_feat = self.transformer(x) if self.transformer is not None else None
        return self.enhance_block(cnn_feat, trans_feat)

    def decode(self, feat, clamp=False):
        out = self.decoder(feat)
        return out.clamp(0.0, 1.0) if clamp else out

    def forward(self, x):
        return self.decode(self.encode(x))

    def reconstruct(self, img):
        """Inference helper: numpy image in, clamped numpy image out."""
        with torch.no_grad():
            x = image_to_tensor(img, dtype=next(self.parameters()).dtype)
            return self.decode(self.encode(x), clamp=True)[0, 0].double().numpy()


def image_to_tensor(img, dtype=torch.float32):
    """``(H, W)`` or ``(B, H, W)`` numpy images -> ``(B, 1, H, W)`` tensor."""
    arr = np.asarray(img)
    if arr.ndim == 2:
        arr = arr[None]
    return torch.from_numpy(np.ascontiguousarray(arr)).to(dtype).unsqueeze(1)


def count_parameters(model):
    return sum(p.numel() for p in model.parameters())
