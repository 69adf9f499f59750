"""Attentional feature fusion and the baseline late-fusion operators.

The attentional block treats the stacked modality vectors as a
1-channel image [C=1, H=modalities, W=feature-dim]. A channel-attention
unit mixes a global (pooled) and a local (per-cell) excitation path,
squashes through a sigmoid, and the block blends a refined conv of the
input with the input itself twice over, each stage under its own
attention weights. Heads of the sub-attentional bank are fully
independent parameter sets, one per questionnaire item.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError
from .layers import BatchNorm, Conv2d, Module, ModuleList

BANK_HEADS = 8

BASELINE_METHODS = ("multiplication", "concatenation", "median", "max", "summation", "mean")
_METHOD_ALIASES = {
    "mult": "multiplication",
    "concat": "concatenation",
    "sum": "summation",
    "multiplication": "multiplication",
    "concatenation": "concatenation",
    "median": "median",
    "max": "max",
    "summation": "summation",
    "mean": "mean",
}


class ChannelAttention(Module):
    """Sigmoid attention from summed global and local excitation paths.

    Each path is pointwise-conv -> BN -> ReLU -> pointwise-conv -> BN;
    the global path first average-pools over the spatial grid and is
    broadcast back. Channel reduction divides the channel count (with a
    single channel the reduction is forced to 1).
    """

    def __init__(self, channels: int = 1, reduction: int = 1, rng=None, dtype=np.float32):
        super().__init__()
        if channels < 1 or reduction < 1 or channels % reduction != 0:
            raise ConfigError(f"reduction {reduction} must divide channels {channels}")
        inter = channels // reduction
        rng = rng or np.random.default_rng(0)
        self.local_pw1 = Conv2d(channels, inter, (1, 1), rng=rng, dtype=dtype)
        self.local_bn1 = BatchNorm(inter, dtype=dtype)
        self.local_pw2 = Conv2d(inter, channels, (1, 1), rng=rng, dtype=dtype)
        self.local_bn2 = BatchNorm(channels, dtype=dtype)
        self.global_pw1 = Conv2d(channels, inter, (1, 1), rng=rng, dtype=dtype)
        self.global_bn1 = BatchNorm(inter, dtype=dtype)
        self.global_pw2 = Conv2d(inter, channels, (1, 1), rng=rng, dtype=dtype)
        self.global_bn2 = BatchNorm(channels, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        if x.data.ndim != 4:
            raise ShapeError(f"channel attention expects [B,C,H,W], got {x.data.shape}")
        B, C, H, W = x.data.shape

        local = self.local_bn2(self.local_pw2(ad.relu(self.local_bn1(self.local_pw1(x)))))

        pooled = ad.reshape(ad.mean(x, axis=(2, 3)), (B, C, 1, 1))
        glob = self.global_bn2(self.global_pw2(ad.relu(self.global_bn1(self.global_pw1(pooled)))))
        glob_b = ad.mul(glob, ad.tensor(np.ones((1, 1, H, W), dtype=x.data.dtype)))

        return ad.sigmoid(ad.add(local, glob_b))

    __call__ = forward


class AttentionalFusion(Module):
    """Three-stage fusion: residual conv, then two attention-gated blends.

    Stage 1 forms X = conv_first(Y) + Y. Stage 2 computes weights w from
    X and blends X' = conv(Y)*w + Y*(1-w). Stage 3 recomputes weights w'
    from X' with a second attention unit and emits conv(Y)*w' + Y*(1-w').
    The refining conv is shared between stages 2 and 3; the stage-1 conv
    is separate. Output shape equals input shape.

    The last forward pass logs `last_w`, `last_wp`, and `last_conv_y`
    (plain arrays) so callers can audit the convex-combination identity.
    """

    def __init__(self, channels: int = 1, reduction: int = 1, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.conv_first = Conv2d(channels, channels, (3, 3), padding=(1, 1), rng=rng, dtype=dtype)
        self.conv_refine = Conv2d(channels, channels, (3, 3), padding=(1, 1), rng=rng, dtype=dtype)
        self.att_mid = ChannelAttention(channels, reduction, rng=rng, dtype=dtype)
        self.att_out = ChannelAttention(channels, reduction, rng=rng, dtype=dtype)
        self.last_w = None
        self.last_wp = None
        self.last_conv_y = None

    def forward(self, y: Tensor) -> Tensor:
        unbatched = y.data.ndim == 3
        if unbatched:
            y = ad.reshape(y, (1,) + y.data.shape)
        if y.data.ndim != 4:
            raise ShapeError(f"fusion expects [B,C,H,W] or [C,H,W], got {y.data.shape}")

        x = ad.add(self.conv_first(y), y)
        w = self.att_mid(x)
        conv_y = self.conv_refine(y)
        one = ad.tensor(np.ones((), dtype=y.data.dtype))
        x_ref = ad.add(ad.mul(conv_y, w), ad.mul(y, ad.sub(one, w)))
        wp = self.att_out(x_ref)
        out = ad.add(ad.mul(conv_y, wp), ad.mul(y, ad.sub(one, wp)))

        self.last_w = w.data.copy()
        self.last_wp = wp.data.copy()
        self.last_conv_y = conv_y.data.copy()
        return ad.reshape(out, out.data.shape[1:]) if unbatched else out

    __call__ = forward

    def force_saturation(self, high: bool, magnitude: float = 25.0) -> None:
        """Pin the output-stage weights at ~1 (high) or ~0 by biasing its BNs."""
        for bn in (self.att_out.local_bn2, self.att_out.global_bn2):
            bn.gamma.data[...] = 0.0
            bn.beta.data[...] = magnitude if high else -magnitude


class SubAttentionalBank(Module):
    """Eight independent fusion heads, one per questionnaire item."""

    def __init__(self, n_heads: int = BANK_HEADS, channels: int = 1, reduction: int = 1, rng=None, dtype=np.float32):
        super().__init__()
        if n_heads != BANK_HEADS:
            raise ConfigError(f"the bank is defined with exactly {BANK_HEADS} heads, got {n_heads}")
        rng = rng or np.random.default_rng(0)
        self.heads = ModuleList(
            [AttentionalFusion(channels, reduction, rng=rng, dtype=dtype) for _ in range(n_heads)]
        )

    def forward(self, y: Tensor) -> list:
        return [head(y) for head in self.heads]

    __call__ = forward


def baseline_fuse(method: str, vectors) -> Tensor:
    """Late-fuse per-modality feature vectors by a fixed rule.

    vectors: list of [d] (or [B,d]) tensors, or a stacked [n,d] /
    [B,n,d] tensor, n >= 2. multiplication/median/max/summation/mean
    reduce over the modality axis; concatenation joins along features.
    Median is the lower median, deterministic for even counts.
    """
    canon = _METHOD_ALIASES.get(method)
    if canon is None:
        raise ConfigError(f"unknown fusion method '{method}', expected one of {sorted(set(_METHOD_ALIASES))}")

    if isinstance(vectors, (list, tuple)):
        vectors = list(vectors)
        if len(vectors) < 2:
            raise ShapeError(f"need at least 2 modality vectors, got {len(vectors)}")
        dims = {tuple(v.data.shape) for v in vectors}
        if len(dims) != 1:
            raise ShapeError(f"ragged modality dimensions: {sorted(dims)}")
        axis = 0 if vectors[0].data.ndim == 1 else 1
        stacked = ad.stack(vectors, axis=axis)
    else:
        stacked = vectors
        axis = 0 if stacked.data.ndim == 2 else 1
        if stacked.data.ndim not in (2, 3):
            raise ShapeError(f"expected [n,d] or [B,n,d], got {stacked.data.shape}")
        if stacked.data.shape[axis] < 2:
            raise ShapeError(f"need at least 2 modalities, got {stacked.data.shape[axis]}")

    n = stacked.data.shape[axis]
    if canon == "multiplication":
        out = ad.slice_axis(stacked, axis, 0, 1)
        for i in range(1, n):
            out = ad.mul(out, ad.slice_axis(stacked, axis, i, i + 1))
        return _drop_axis(out, axis)
    if canon == "concatenation":
        shape = list(stacked.data.shape)
        flat = shape[:axis] + [shape[axis] * shape[axis + 1]]
        return ad.reshape(stacked, tuple(flat))
    if canon == "median":
        return ad.lower_median(stacked, axis=axis)
    if canon == "max":
        return ad.max_reduce(stacked, axis=axis)
    if canon == "summation":
        return ad.sum_(stacked, axis=axis)
    return ad.mean(stacked, axis=axis)


def _drop_axis(t: Tensor, axis: int) -> Tensor:
    shape = list(t.data.shape)
    shape.pop(axis)
    return ad.reshape(t, tuple(shape))
