"""Neural layers on top of the autodiff engine.

Convolutions, pooling, batch normalization and the bidirectional LSTM
carry hand-derived backward closures (their loops would be wasteful as
compositions of elementwise graph nodes). Everything is validated by
finite-difference checks in the test suite.

Modules own parameters (Tensors with ``requires_grad=True``) and
non-trainable buffers (plain arrays, e.g. batch-norm running stats), and
expose them by dotted name for checkpointing and optimizers.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, _accum, _node
from .errors import ConfigError, ShapeError

# -- functional ops ----------------------------------------------------


def _sigm(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation along the last axis.

    x: [B, C_in, T] or [C_in, T]; weight: [C_out, C_in, k].
    Output length: (T + 2*padding - k) // stride + 1.
    """
    unbatched = x.data.ndim == 2
    if unbatched:
        x = ad.reshape(x, (1,) + x.data.shape)
    if x.data.ndim != 3 or weight.data.ndim != 3:
        raise ShapeError(f"conv1d expects [B,C,T] input and [O,I,k] weight, got {x.data.shape}, {weight.data.shape}")
    B, ci, T = x.data.shape
    co, ci_w, k = weight.data.shape
    if ci != ci_w:
        raise ShapeError(f"conv1d channel mismatch: input {ci}, weight {ci_w}")
    if T + 2 * padding < k:
        raise ShapeError(f"conv1d input length {T} (+2*{padding} pad) shorter than kernel {k}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    t_out = (T + 2 * padding - k) // stride + 1
    out_data = np.zeros((B, co, t_out), dtype=x.data.dtype)
    for q in range(k):
        seg = xp[:, :, q : q + stride * (t_out - 1) + 1 : stride]
        out_data += np.einsum("bit,oi->bot", seg, weight.data[:, :, q], optimize=True)
    if bias is not None:
        out_data += bias.data[None, :, None]

    def bwd(g):
        dxp = np.zeros_like(xp)
        dw = np.zeros_like(weight.data)
        for q in range(k):
            seg = xp[:, :, q : q + stride * (t_out - 1) + 1 : stride]
            dw[:, :, q] = np.einsum("bot,bit->oi", g, seg, optimize=True)
            dxp[:, :, q : q + stride * (t_out - 1) + 1 : stride] += np.einsum(
                "bot,oi->bit", g, weight.data[:, :, q], optimize=True
            )
        _accum(weight, dw)
        _accum(x, dxp[:, :, padding : padding + T] if padding else dxp)
        if bias is not None:
            _accum(bias, g.sum(axis=(0, 2)))

    parents = (x, weight) if bias is None else (x, weight, bias)
    out = _node(out_data, parents, bwd, "conv1d")
    return ad.reshape(out, out.data.shape[1:]) if unbatched else out


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: tuple[int, int] = (1, 1),
    padding: tuple[int, int] = (0, 0),
) -> Tensor:
    """2-D cross-correlation. x: [B, C_in, H, W] or [C_in, H, W]; weight: [C_out, C_in, kh, kw]."""
    unbatched = x.data.ndim == 3
    if unbatched:
        x = ad.reshape(x, (1,) + x.data.shape)
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError(f"conv2d expects [B,C,H,W] input and [O,I,kh,kw] weight, got {x.data.shape}, {weight.data.shape}")
    B, ci, H, W = x.data.shape
    co, ci_w, kh, kw = weight.data.shape
    sh, sw = stride
    ph, pw = padding
    if ci != ci_w:
        raise ShapeError(f"conv2d channel mismatch: input {ci}, weight {ci_w}")
    if H + 2 * ph < kh or W + 2 * pw < kw:
        raise ShapeError(f"conv2d kernel ({kh},{kw}) larger than padded input ({H + 2 * ph},{W + 2 * pw})")

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    h_out = (H + 2 * ph - kh) // sh + 1
    w_out = (W + 2 * pw - kw) // sw + 1
    out_data = np.zeros((B, co, h_out, w_out), dtype=x.data.dtype)
    for qh in range(kh):
        for qw in range(kw):
            seg = xp[:, :, qh : qh + sh * (h_out - 1) + 1 : sh, qw : qw + sw * (w_out - 1) + 1 : sw]
            out_data += np.einsum("bihw,oi->bohw", seg, weight.data[:, :, qh, qw], optimize=True)
    if bias is not None:
        out_data += bias.data[None, :, None, None]

    def bwd(g):
        dxp = np.zeros_like(xp)
        dw = np.zeros_like(weight.data)
        for qh in range(kh):
            for qw in range(kw):
                seg = xp[:, :, qh : qh + sh * (h_out - 1) + 1 : sh, qw : qw + sw * (w_out - 1) + 1 : sw]
                dw[:, :, qh, qw] = np.einsum("bohw,bihw->oi", g, seg, optimize=True)
                dxp[:, :, qh : qh + sh * (h_out - 1) + 1 : sh, qw : qw + sw * (w_out - 1) + 1 : sw] += np.einsum(
                    "bohw,oi->bihw", g, weight.data[:, :, qh, qw], optimize=True
                )
        _accum(weight, dw)
        if ph or pw:
            _accum(x, dxp[:, :, ph : ph + H, pw : pw + W])
        else:
            _accum(x, dxp)
        if bias is not None:
            _accum(bias, g.sum(axis=(0, 2, 3)))

    parents = (x, weight) if bias is None else (x, weight, bias)
    out = _node(out_data, parents, bwd, "conv2d")
    return ad.reshape(out, out.data.shape[1:]) if unbatched else out


def max_pool1d(x: Tensor, pool: int) -> Tensor:
    """Non-overlapping window maxima along the last axis (stride = pool)."""
    if pool < 1:
        raise ConfigError(f"pool size must be >= 1, got {pool}")
    unbatched = x.data.ndim == 2
    if unbatched:
        x = ad.reshape(x, (1,) + x.data.shape)
    B, C, T = x.data.shape
    if T < pool:
        raise ShapeError(f"max_pool1d input length {T} shorter than pool {pool}")
    t_out = T // pool
    xr = x.data[:, :, : t_out * pool].reshape(B, C, t_out, pool)
    idx = xr.argmax(axis=-1)
    out_data = np.take_along_axis(xr, idx[..., None], axis=-1).squeeze(-1)

    def bwd(g):
        dxr = np.zeros_like(xr)
        np.put_along_axis(dxr, idx[..., None], g[..., None], axis=-1)
        dx = np.zeros_like(x.data)
        dx[:, :, : t_out * pool] = dxr.reshape(B, C, t_out * pool)
        _accum(x, dx)

    out = _node(out_data, (x,), bwd, "max_pool1d")
    return ad.reshape(out, out.data.shape[1:]) if unbatched else out


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the spatial grid: [B,C,H,W] -> [B,C] (or [C,H,W] -> [C])."""
    if x.data.ndim == 3:
        return ad.mean(x, axis=(1, 2))
    if x.data.ndim == 4:
        return ad.mean(x, axis=(2, 3))
    raise ShapeError(f"global_avg_pool expects [B,C,H,W] or [C,H,W], got {x.data.shape}")


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization; channel axis is 1.

    Training mode normalizes by batch statistics over all non-channel axes
    and updates the running stats in place; eval mode uses the stored
    stats. Variance is the biased (population) estimator throughout.
    """
    if x.data.ndim < 2:
        raise ShapeError(f"batch_norm expects a batch dimension, got shape {x.data.shape}")
    C = x.data.shape[1]
    if gamma.data.shape != (C,) or beta.data.shape != (C,):
        raise ShapeError(f"batch_norm parameter shape mismatch for {C} channels")
    reduce_axes = (0,) + tuple(range(2, x.data.ndim))
    bshape = (1, C) + (1,) * (x.data.ndim - 2)

    if training:
        mu = x.data.mean(axis=reduce_axes)
        var = x.data.var(axis=reduce_axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mu = running_mean.astype(x.data.dtype)
        var = running_var.astype(x.data.dtype)

    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(bshape)) * inv.reshape(bshape)
    out_data = gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)

    n = x.data.size // C

    def bwd(g):
        _accum(gamma, (g * xhat).sum(axis=reduce_axes))
        _accum(beta, g.sum(axis=reduce_axes))
        dxhat = g * gamma.data.reshape(bshape)
        if training:
            s1 = dxhat.sum(axis=reduce_axes, keepdims=True)
            s2 = (dxhat * xhat).sum(axis=reduce_axes, keepdims=True)
            _accum(x, (inv.reshape(bshape) / n) * (n * dxhat - s1 - xhat * s2))
        else:
            _accum(x, dxhat * inv.reshape(bshape))

    return _node(out_data, (x, gamma, beta), bwd, "batch_norm")


def bilstm(
    x: Tensor,
    w_f: Tensor,
    u_f: Tensor,
    b_f: Tensor,
    w_b: Tensor,
    u_b: Tensor,
    b_b: Tensor,
) -> Tensor:
    """Bidirectional LSTM over the time axis.

    x: [B, T, D] or [T, D]; w: [D, 4H]; u: [H, 4H]; b: [4H]. Gate slab
    order is input, forget, candidate, output. Per-step outputs of the
    forward and backward passes are concatenated to [.., T, 2H].
    """
    unbatched = x.data.ndim == 2
    if unbatched:
        x = ad.reshape(x, (1,) + x.data.shape)
    if x.data.ndim != 3:
        raise ShapeError(f"bilstm expects [B,T,D] input, got {x.data.shape}")
    B, T, D = x.data.shape
    if T < 1:
        raise ShapeError("bilstm needs at least one time step")
    H = u_f.data.shape[0]
    for name, p, shape in (
        ("w_f", w_f, (D, 4 * H)),
        ("u_f", u_f, (H, 4 * H)),
        ("b_f", b_f, (4 * H,)),
        ("w_b", w_b, (D, 4 * H)),
        ("u_b", u_b, (H, 4 * H)),
        ("b_b", b_b, (4 * H,)),
    ):
        if p.data.shape != shape:
            raise ShapeError(f"bilstm parameter {name} expected shape {shape}, got {p.data.shape}")

    def run_dir(w, u, b, reverse):
        hs = np.zeros((B, T, H), dtype=x.data.dtype)
        cache = []
        h = np.zeros((B, H), dtype=x.data.dtype)
        c = np.zeros((B, H), dtype=x.data.dtype)
        times = range(T - 1, -1, -1) if reverse else range(T)
        for t in times:
            z = x.data[:, t] @ w.data + h @ u.data + b.data
            zi, zf, zg, zo = np.split(z, 4, axis=1)
            i_g = _sigm(zi)
            f_g = _sigm(zf)
            g_g = np.tanh(zg)
            o_g = _sigm(zo)
            c_prev = c
            h_prev = h
            c = f_g * c_prev + i_g * g_g
            hc = np.tanh(c)
            h = o_g * hc
            hs[:, t] = h
            cache.append((t, i_g, f_g, g_g, o_g, c_prev, hc, h_prev))
        return hs, cache

    hs_f, cache_f = run_dir(w_f, u_f, b_f, reverse=False)
    hs_b, cache_b = run_dir(w_b, u_b, b_b, reverse=True)
    out_data = np.concatenate([hs_f, hs_b], axis=2)

    def run_dir_bwd(w, u, b, cache, gh):
        dw = np.zeros_like(w.data)
        du = np.zeros_like(u.data)
        db = np.zeros_like(b.data)
        dx = np.zeros_like(x.data)
        dh = np.zeros((B, H), dtype=x.data.dtype)
        dc = np.zeros((B, H), dtype=x.data.dtype)
        for t, i_g, f_g, g_g, o_g, c_prev, hc, h_prev in reversed(cache):
            dh = dh + gh[:, t]
            do = dh * hc
            dc = dc + dh * o_g * (1.0 - hc * hc)
            dz = np.concatenate(
                [
                    dc * g_g * i_g * (1.0 - i_g),
                    dc * c_prev * f_g * (1.0 - f_g),
                    dc * i_g * (1.0 - g_g * g_g),
                    do * o_g * (1.0 - o_g),
                ],
                axis=1,
            )
            dw += x.data[:, t].T @ dz
            du += h_prev.T @ dz
            db += dz.sum(axis=0)
            dx[:, t] += dz @ w.data.T
            dh = dz @ u.data.T
            dc = dc * f_g
        _accum(w, dw)
        _accum(u, du)
        _accum(b, db)
        return dx

    def bwd(g):
        dx = run_dir_bwd(w_f, u_f, b_f, cache_f, g[:, :, :H])
        dx = dx + run_dir_bwd(w_b, u_b, b_b, cache_b, g[:, :, H:])
        _accum(x, dx)

    out = _node(out_data, (x, w_f, u_f, b_f, w_b, u_b, b_b), bwd, "bilstm")
    return ad.reshape(out, out.data.shape[1:]) if unbatched else out


def bilstm_summary(y: Tensor) -> Tensor:
    """Final forward state concatenated with final backward state.

    y: [B, T, 2H] from :func:`bilstm`. The forward half ends at the last
    step, the backward half at step 0 (the last step that direction saw).
    """
    if y.data.ndim != 3:
        raise ShapeError(f"bilstm_summary expects [B,T,2H], got {y.data.shape}")
    T = y.data.shape[1]
    H2 = y.data.shape[2]
    H = H2 // 2
    last_f = ad.reshape(ad.slice_axis(ad.slice_axis(y, 1, T - 1, T), 2, 0, H), (y.data.shape[0], H))
    last_b = ad.reshape(ad.slice_axis(ad.slice_axis(y, 1, 0, 1), 2, H, H2), (y.data.shape[0], H))
    return ad.concat([last_f, last_b], axis=1)


# -- parameter-owning modules ------------------------------------------


class Module:
    """Tiny parameter container with dotted-name introspection."""

    def __init__(self):
        self.training = True
        self._buffer_names: set[str] = set()

    def register_buffer(self, name: str, arr: np.ndarray) -> None:
        setattr(self, name, arr)
        self._buffer_names.add(name)

    def _children(self):
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            yield name, value

    def named_parameters(self, prefix: str = ""):
        for name, value in self._children():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{full}.")

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def named_buffers(self, prefix: str = ""):
        for name, value in self._children():
            full = f"{prefix}{name}"
            if name in self._buffer_names:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_buffers(f"{full}.")

    def train(self, mode: bool = True):
        self.training = mode
        for _, value in self._children():
            if isinstance(value, Module):
                value.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def state(self) -> dict[str, np.ndarray]:
        """Flat name -> array snapshot of parameters and buffers."""
        out = {name: p.data for name, p in self.named_parameters()}
        out.update({name: b for name, b in self.named_buffers()})
        return out

    def load_state(self, state: dict[str, np.ndarray], strict: bool = True) -> list[str]:
        """Copy arrays into matching parameters/buffers; returns missing names."""
        own_params = dict(self.named_parameters())
        own_bufs = dict(self.named_buffers())
        missing = []
        for name in list(own_params) + list(own_bufs):
            if name not in state:
                missing.append(name)
        if strict and missing:
            raise ShapeError(f"checkpoint missing entries: {missing[:5]}{'...' if len(missing) > 5 else ''}")
        for name, arr in state.items():
            target = own_params.get(name)
            if target is not None:
                if target.data.shape != arr.shape:
                    raise ShapeError(f"shape mismatch for '{name}': model {target.data.shape}, state {arr.shape}")
                target.data = arr.astype(target.data.dtype, copy=True)
                continue
            if name in own_bufs:
                buf = own_bufs[name]
                if buf.shape != arr.shape:
                    raise ShapeError(f"shape mismatch for buffer '{name}': model {buf.shape}, state {arr.shape}")
                buf[...] = arr
            elif strict:
                raise ShapeError(f"unexpected checkpoint entry '{name}'")
        return missing


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._mods = list(modules)

    def append(self, m: Module) -> None:
        self._mods.append(m)

    def __iter__(self):
        return iter(self._mods)

    def __getitem__(self, i):
        return self._mods[i]

    def __len__(self):
        return len(self._mods)

    def named_parameters(self, prefix: str = ""):
        for i, m in enumerate(self._mods):
            yield from m.named_parameters(f"{prefix}{i}.")

    def named_buffers(self, prefix: str = ""):
        for i, m in enumerate(self._mods):
            yield from m.named_buffers(f"{prefix}{i}.")

    def train(self, mode: bool = True):
        self.training = mode
        for m in self._mods:
            m.train(mode)
        return self


def _uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


class Conv1d(Module):
    def __init__(self, in_channels, out_channels, kernel_size=3, stride=1, padding=0, rng=None, dtype=np.float32):
        super().__init__()
        if min(in_channels, out_channels, kernel_size) < 1:
            raise ConfigError("conv1d sizes must be positive")
        rng = rng or np.random.default_rng(0)
        self.stride = stride
        self.padding = padding
        fan_in = in_channels * kernel_size
        self.weight = _uniform_init(rng, (out_channels, in_channels, kernel_size), fan_in, dtype)
        self.bias = _uniform_init(rng, (out_channels,), fan_in, dtype)

    def forward(self, x: Tensor) -> Tensor:
        return conv1d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)

    __call__ = forward


class Conv2d(Module):
    def __init__(self, in_channels, out_channels, kernel_size, stride=(1, 1), padding=(0, 0), rng=None, dtype=np.float32):
        super().__init__()
        kh, kw = kernel_size
        if min(in_channels, out_channels, kh, kw) < 1:
            raise ConfigError("conv2d sizes must be positive")
        rng = rng or np.random.default_rng(0)
        self.stride = tuple(stride)
        self.padding = tuple(padding)
        fan_in = in_channels * kh * kw
        self.weight = _uniform_init(rng, (out_channels, in_channels, kh, kw), fan_in, dtype)
        self.bias = _uniform_init(rng, (out_channels,), fan_in, dtype)

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)

    __call__ = forward


class BatchNorm(Module):
    def __init__(self, num_features, momentum=0.1, eps=1e-5, dtype=np.float32):
        super().__init__()
        if num_features < 1:
            raise ConfigError("batch norm needs at least one feature")
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(num_features, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(num_features, dtype=dtype), requires_grad=True)
        self.register_buffer("running_mean", np.zeros(num_features, dtype=np.float64))
        self.register_buffer("running_var", np.ones(num_features, dtype=np.float64))

    def forward(self, x: Tensor) -> Tensor:
        return batch_norm(
            x,
            self.gamma,
            self.beta,
            self.running_mean,
            self.running_var,
            training=self.training,
            momentum=self.momentum,
            eps=self.eps,
        )

    __call__ = forward


class Linear(Module):
    def __init__(self, in_features, out_features, rng=None, dtype=np.float32):
        super().__init__()
        if min(in_features, out_features) < 1:
            raise ConfigError("linear sizes must be positive")
        rng = rng or np.random.default_rng(0)
        self.weight = _uniform_init(rng, (out_features, in_features), in_features, dtype)
        self.bias = _uniform_init(rng, (out_features,), in_features, dtype)

    def forward(self, x: Tensor) -> Tensor:
        if x.data.ndim == 1:
            return ad.reshape(ad.affine(ad.reshape(x, (1, -1)), self.weight, self.bias), (-1,))
        return ad.affine(x, self.weight, self.bias)

    __call__ = forward


class BiLSTM(Module):
    def __init__(self, input_size, hidden_size, rng=None, dtype=np.float32):
        super().__init__()
        if min(input_size, hidden_size) < 1:
            raise ConfigError("bilstm sizes must be positive")
        rng = rng or np.random.default_rng(0)
        self.hidden_size = hidden_size
        H = hidden_size
        self.w_f = _uniform_init(rng, (input_size, 4 * H), input_size, dtype)
        self.u_f = _uniform_init(rng, (H, 4 * H), H, dtype)
        self.b_f = _uniform_init(rng, (4 * H,), H, dtype)
        self.w_b = _uniform_init(rng, (input_size, 4 * H), input_size, dtype)
        self.u_b = _uniform_init(rng, (H, 4 * H), H, dtype)
        self.b_b = _uniform_init(rng, (4 * H,), H, dtype)
        # forget-gate bias at 1 keeps early memory open
        self.b_f.data[H : 2 * H] = 1.0
        self.b_b.data[H : 2 * H] = 1.0

    def forward(self, x: Tensor) -> Tensor:
        return bilstm(x, self.w_f, self.u_f, self.b_f, self.w_b, self.u_b, self.b_b)

    __call__ = forward
