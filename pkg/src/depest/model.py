"""End-to-end multi-modal classifier over questionnaire item scores.

Each modality runs through its own backbone (conv stages with BN/ReLU
and max-pooling, a BiLSTM over time, and a projection to a shared
feature width), the per-modality vectors stack into a 1-channel map of
shape [1, n_modalities, feature_dim], and either an 8-head attentional
fusion bank or one of the simple late-fusion rules feeds 8 independent
softmax classifiers, one per questionnaire item, over the expanded
32-point score grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DataError, ShapeError
from .features import ClipSample
from .fusion import _METHOD_ALIASES, AttentionalFusion, SubAttentionalBank, baseline_fuse
from .layers import BatchNorm, BiLSTM, Conv1d, Conv2d, Linear, Module, ModuleList, bilstm_summary, max_pool1d
from .musdl import MusdlConfig, decode_prediction
from .phq import PhqRecord, derive_phq

MODALITIES = ("a", "v", "t")
FUSION_MODES = ("mult", "concat", "median", "max", "sum", "mean", "atten", "subatten")


@dataclass(frozen=True)
class BranchConfig:
    """One modality backbone: conv stages then BiLSTM then projection."""

    in_channels: int
    conv_channels: tuple = (32, 64)
    kernel: int = 3
    pools: tuple = (2, 2)
    strides: tuple = (1, 1)
    lstm_hidden: int = 128
    out_dim: int = 256
    conv2d_height: int = 0  # >0: first stage is 2-D, kernel (height, kernel), collapsing the height axis

    def __post_init__(self):
        n = len(self.conv_channels)
        if n < 1:
            raise ConfigError("branch needs at least one conv stage")
        if len(self.pools) != n or len(self.strides) != n:
            raise ConfigError(f"pools/strides must match {n} conv stages")
        if min(self.conv_channels) < 1 or min(self.pools) < 1 or min(self.strides) < 1:
            raise ConfigError("conv sizes, pools and strides must be positive")
        if self.in_channels < 1 or self.kernel < 1 or self.lstm_hidden < 1 or self.out_dim < 1:
            raise ConfigError("branch dimensions must be positive")


def default_audio_branch(feature_dim: int = 256) -> BranchConfig:
    return BranchConfig(in_channels=80, out_dim=feature_dim)


def default_visual_branch(feature_dim: int = 256) -> BranchConfig:
    return BranchConfig(
        in_channels=3,
        conv_channels=(64,),
        pools=(2,),
        strides=(1,),
        conv2d_height=72,
        out_dim=feature_dim,
    )


def default_text_branch(feature_dim: int = 256) -> BranchConfig:
    return BranchConfig(in_channels=512, conv_channels=(64,), pools=(2,), strides=(1,), out_dim=feature_dim)


@dataclass(frozen=True)
class ModelConfig:
    modality: str = "avt"
    fusion: str = "subatten"
    feature_dim: int = 256
    audio: BranchConfig = None
    visual: BranchConfig = None
    text: BranchConfig = None
    n_heads: int = 8
    n_classes: int = 32

    def __post_init__(self):
        if self.modality not in ("a", "v", "t", "av", "avt"):
            raise ConfigError(f"modality must be one of a/v/t/av/avt, got '{self.modality}'")
        if self.fusion not in FUSION_MODES:
            raise ConfigError(f"fusion must be one of {FUSION_MODES}, got '{self.fusion}'")
        defaults = {
            "audio": default_audio_branch,
            "visual": default_visual_branch,
            "text": default_text_branch,
        }
        for name, make in defaults.items():
            if getattr(self, name) is None:
                object.__setattr__(self, name, make(self.feature_dim))
        for letter, name in (("a", "audio"), ("v", "visual"), ("t", "text")):
            branch = getattr(self, name)
            if letter in self.modality and branch.out_dim != self.feature_dim:
                raise ConfigError(
                    f"{name} branch ends in {branch.out_dim}, model expects {self.feature_dim}"
                )

    @property
    def active(self) -> tuple:
        return tuple(m for m in MODALITIES if m in self.modality)


@dataclass
class ModelOutput:
    distributions: np.ndarray  # [8, n_classes], rows sum to 1
    subscores: tuple
    record: PhqRecord


class ModalityBranch(Module):
    def __init__(self, cfg: BranchConfig, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.cfg = cfg
        convs, bns = [], []
        prev = cfg.in_channels
        for i, ch in enumerate(cfg.conv_channels):
            if i == 0 and cfg.conv2d_height > 0:
                convs.append(
                    Conv2d(prev, ch, (cfg.conv2d_height, cfg.kernel), stride=(1, cfg.strides[i]), rng=rng, dtype=dtype)
                )
            else:
                convs.append(Conv1d(prev, ch, cfg.kernel, stride=cfg.strides[i], rng=rng, dtype=dtype))
            bns.append(BatchNorm(ch, dtype=dtype))
            prev = ch
        self.convs = ModuleList(convs)
        self.bns = ModuleList(bns)
        self.lstm = BiLSTM(prev, cfg.lstm_hidden, rng=rng, dtype=dtype)
        self.fc = Linear(2 * cfg.lstm_hidden, cfg.out_dim, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        """[B, C, T] (or [B, C, H, T] for a 2-D first stage) -> [B, out_dim]."""
        for i in range(len(self.convs)):
            x = self.convs[i](x)
            if x.data.ndim == 4:
                if x.data.shape[2] != 1:
                    raise ShapeError(
                        f"2-D stage must consume the full height, got residual height {x.data.shape[2]}"
                    )
                b, c, _, t = x.data.shape
                x = ad.reshape(x, (b, c, t))
            x = ad.relu(self.bns[i](x))
            if self.cfg.pools[i] > 1:
                x = max_pool1d(x, self.cfg.pools[i])
        x = ad.transpose(x, (0, 2, 1))  # [B, T, C] for the recurrence
        summary = bilstm_summary(self.lstm(x))
        return self.fc(summary)

    __call__ = forward


class MultiModalClassifier(Module):
    """Backbones -> stacked feature map -> fusion -> 8 item classifiers."""

    def __init__(self, cfg: ModelConfig = ModelConfig(), rng=None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.cfg = cfg
        branch_cfgs = {"a": cfg.audio, "v": cfg.visual, "t": cfg.text}
        for letter in cfg.active:
            setattr(self, f"branch_{letter}", ModalityBranch(branch_cfgs[letter], rng=rng, dtype=dtype))

        n = len(cfg.active)
        d = cfg.feature_dim
        if n == 1:
            head_in = d
        elif cfg.fusion == "subatten":
            self.bank = SubAttentionalBank(n_heads=cfg.n_heads, rng=rng, dtype=dtype)
            head_in = n * d
        elif cfg.fusion == "atten":
            self.fuser = AttentionalFusion(rng=rng, dtype=dtype)
            head_in = n * d
        elif cfg.fusion == "concat":
            head_in = n * d
        else:
            head_in = d
        self.heads = ModuleList([Linear(head_in, cfg.n_classes, rng=rng, dtype=dtype) for _ in range(cfg.n_heads)])

    def forward(self, audio: Tensor = None, visual: Tensor = None, text: Tensor = None) -> Tensor:
        """Batched modality tensors -> [B, n_heads, n_classes] distributions."""
        given = {"a": audio, "v": visual, "t": text}
        feats = []
        for letter in self.cfg.active:
            if given[letter] is None:
                raise DataError(f"modality '{self.cfg.modality}' needs the '{letter}' input")
            feats.append(getattr(self, f"branch_{letter}")(given[letter]))

        B = feats[0].data.shape[0]
        n = len(feats)
        d = self.cfg.feature_dim
        if n == 1:
            head_inputs = feats * self.cfg.n_heads
        else:
            stacked = ad.stack(feats, axis=1)  # [B, n, d]
            if self.cfg.fusion == "subatten":
                ymap = ad.reshape(stacked, (B, 1, n, d))
                head_inputs = [ad.reshape(o, (B, n * d)) for o in self.bank(ymap)]
            elif self.cfg.fusion == "atten":
                fused = ad.reshape(self.fuser(ad.reshape(stacked, (B, 1, n, d))), (B, n * d))
                head_inputs = [fused] * self.cfg.n_heads
            else:
                fused = baseline_fuse(_METHOD_ALIASES[self.cfg.fusion], stacked)
                head_inputs = [fused] * self.cfg.n_heads

        probs = [ad.softmax(self.heads[k](head_inputs[k]), axis=1) for k in range(self.cfg.n_heads)]
        return ad.stack(probs, axis=1)  # [B, n_heads, n_classes]

    __call__ = forward

    def forward_clip(self, clip: ClipSample, musdl_cfg: MusdlConfig = MusdlConfig()) -> ModelOutput:
        inputs = clip_to_inputs(clip, self.cfg, dtype=np.float32)
        dist = self.forward(**inputs).data[0]
        subs = tuple(int(s) for s in decode_prediction(dist, musdl_cfg))
        return ModelOutput(distributions=dist, subscores=subs, record=derive_phq(subs))


def clip_to_inputs(clip: ClipSample, cfg: ModelConfig, dtype=np.float32) -> dict:
    """ClipSample arrays -> batch-1 graph tensors keyed by forward() arg."""
    out = {}
    if "a" in cfg.modality:
        out["audio"] = ad.tensor(clip.audio[None].astype(dtype))  # [1, n_mels, T]
    if "v" in cfg.modality:
        if clip.visual.shape[0] == 0:
            raise DataError(f"clip {clip.clip_index} of {clip.participant_id} has no visual frames")
        vis = np.transpose(clip.visual, (2, 1, 0))  # [T,72,3] -> [3,72,T]
        out["visual"] = ad.tensor(vis[None].astype(dtype))
    if "t" in cfg.modality:
        out["text"] = ad.tensor(clip.text.T[None].astype(dtype))  # [1, 512, S]
    return out


def batch_inputs(clips, cfg: ModelConfig, dtype=np.float32) -> dict:
    """Stack equal-shape clips into batched modality tensors."""
    if not clips:
        raise DataError("empty clip batch")
    singles = [clip_to_inputs(c, cfg, dtype) for c in clips]
    out = {}
    for key in singles[0]:
        arrs = [s[key].data[0] for s in singles]
        shapes = {a.shape for a in arrs}
        if len(shapes) != 1:
            raise ShapeError(f"ragged '{key}' shapes in batch: {sorted(shapes)}")
        out[key] = ad.tensor(np.stack(arrs))
    return out


def load_branch_state(model: MultiModalClassifier, state: dict, letters) -> int:
    """Transfer-learning load: copy only branch parameters by name prefix.

    Entries of `state` named branch_<letter>.* for the requested letters
    are copied into matching model parameters/buffers; everything else
    (fusion, classifier heads) is left untouched. Returns the number of
    arrays copied.
    """
    own_params = dict(model.named_parameters())
    own_bufs = dict(model.named_buffers())
    prefixes = tuple(f"branch_{letter}." for letter in letters)
    loaded = 0
    for name, arr in state.items():
        if not name.startswith(prefixes):
            continue
        if name in own_params:
            target = own_params[name]
            if target.data.shape != arr.shape:
                raise ShapeError(f"transfer shape mismatch for '{name}': {target.data.shape} vs {arr.shape}")
            target.data = arr.astype(target.data.dtype, copy=True)
            loaded += 1
        elif name in own_bufs:
            own_bufs[name][...] = arr
            loaded += 1
    if loaded == 0:
        raise DataError(f"no branch parameters for {letters} found in the checkpoint")
    return loaded
