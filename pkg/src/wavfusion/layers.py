"""Neural building blocks: linear, 1-D convolution, GRU, multi-head
attention, layer normalization, and the learnable-center gating block used
on the visual stream.

Layers own their parameters as ``Tensor``s with ``requires_grad=True`` and
are callable on activation tensors. Parameters are immutable during a
forward/backward pass; updates happen between steps.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .rng import Prng
from .tensor import Tensor


def xavier_uniform(rng: Prng, fan_in: int, fan_out: int, shape, dtype) -> np.ndarray:
    """Symmetric uniform init with bound sqrt(6 / (fan_in + fan_out))."""
    a = math.sqrt(6.0 / (fan_in + fan_out))
    n = int(np.prod(shape, dtype=np.int64))
    return ((rng.uniform(n) * 2.0 - 1.0) * a).astype(dtype).reshape(shape)


def _param(arr: np.ndarray) -> Tensor:
    return Tensor(arr, requires_grad=True)


class Linear:
    """Affine map along the last dimension: y = x W + b."""

    def __init__(self, d_in: int, d_out: int, rng: Prng, dtype=np.float64):
        self.d_in = d_in
        self.d_out = d_out
        self.weight = _param(xavier_uniform(rng, d_in, d_out, (d_in, d_out), dtype))
        self.bias = _param(np.zeros(d_out, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.d_in:
            raise ShapeError(f"linear: input {list(x.shape)} does not end in d_in={self.d_in}")
        return (x @ self.weight).add_row(self.bias)

    def named_parameters(self, prefix: str):
        return [(f"{prefix}.weight", self.weight), (f"{prefix}.bias", self.bias)]


class Conv1d:
    """Same-length 1-D convolution over time (cross-correlation, zero pad).

    The kernel is held as k tap matrices of shape [d_in x d_out]; tap o acts
    on input rows shifted by o - (k-1)/2.
    """

    def __init__(self, d_in: int, d_out: int, k: int, rng: Prng, dtype=np.float64):
        if k < 1 or k % 2 == 0:
            raise ConfigError(f"conv1d kernel width must be odd and positive; got {k}")
        self.d_in = d_in
        self.d_out = d_out
        self.k = k
        fan_in = k * d_in
        self.taps = [_param(xavier_uniform(rng.child(o), fan_in, d_out, (d_in, d_out), dtype))
                     for o in range(k)]
        self.bias = _param(np.zeros(d_out, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.d_in:
            raise ShapeError(f"conv1d: input {list(x.shape)} does not match d_in={self.d_in}")
        t_len = x.shape[0]
        pad = (self.k - 1) // 2
        xp = x.pad_rows(pad, pad)
        terms = [xp.slice_rows(o, o + t_len) @ tap for o, tap in enumerate(self.taps)]
        return T.add_n(terms).add_row(self.bias)

    def named_parameters(self, prefix: str):
        out = [(f"{prefix}.tap{o}", tap) for o, tap in enumerate(self.taps)]
        out.append((f"{prefix}.bias", self.bias))
        return out


class Gru:
    """Unidirectional single-layer GRU, h_0 = 0, returning every hidden state.

    z_t = sigmoid(x_t W_z + h_{t-1} U_z + b_z)
    r_t = sigmoid(x_t W_r + h_{t-1} U_r + b_r)
    c_t = tanh(x_t W_h + (r_t * h_{t-1}) U_h + b_h)
    h_t = (1 - z_t) * h_{t-1} + z_t * c_t
    """

    def __init__(self, d_in: int, d_h: int, rng: Prng, dtype=np.float64):
        self.d_in = d_in
        self.d_h = d_h
        self.dtype = dtype
        gates = ("z", "r", "h")
        self.w = {g: _param(xavier_uniform(rng.child(i), d_in, d_h, (d_in, d_h), dtype))
                  for i, g in enumerate(gates)}
        self.u = {g: _param(xavier_uniform(rng.child(3 + i), d_h, d_h, (d_h, d_h), dtype))
                  for i, g in enumerate(gates)}
        self.b = {g: _param(np.zeros(d_h, dtype=dtype)) for g in gates}

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.d_in:
            raise ShapeError(f"gru: input {list(x.shape)} does not match d_in={self.d_in}")
        t_len = x.shape[0]
        pre = {g: (x @ self.w[g]).add_row(self.b[g]) for g in ("z", "r", "h")}
        h = Tensor(np.zeros((1, self.d_h), dtype=self.dtype))
        steps = []
        for t in range(t_len):
            z = (pre["z"].slice_rows(t, t + 1) + h @ self.u["z"]).sigmoid()
            r = (pre["r"].slice_rows(t, t + 1) + h @ self.u["r"]).sigmoid()
            cand = (pre["h"].slice_rows(t, t + 1) + (r * h) @ self.u["h"]).tanh()
            h = (z.scale(-1.0) + 1.0) * h + z * cand
            steps.append(h)
        return T.concat_rows(steps)

    def named_parameters(self, prefix: str):
        out = []
        for g in ("z", "r", "h"):
            out += [(f"{prefix}.w_{g}", self.w[g]), (f"{prefix}.u_{g}", self.u[g]),
                    (f"{prefix}.b_{g}", self.b[g])]
        return out


class Attention:
    """Scaled dot-product multi-head attention with separate query and
    context inputs; self-attention is the ``ctx is x`` case. No mask."""

    def __init__(self, d: int, heads: int, rng: Prng, dtype=np.float64):
        if d % heads != 0:
            raise ConfigError(f"model width {d} not divisible by {heads} heads")
        self.d = d
        self.heads = heads
        self.d_head = d // heads
        self.wq = [_param(xavier_uniform(rng.child(3 * i), d, self.d_head, (d, self.d_head), dtype))
                   for i in range(heads)]
        self.wk = [_param(xavier_uniform(rng.child(3 * i + 1), d, self.d_head, (d, self.d_head), dtype))
                   for i in range(heads)]
        self.wv = [_param(xavier_uniform(rng.child(3 * i + 2), d, self.d_head, (d, self.d_head), dtype))
                   for i in range(heads)]
        self.wo = _param(xavier_uniform(rng.child(3 * heads), d, d, (d, d), dtype))

    def __call__(self, x: Tensor, ctx: Tensor | None = None) -> Tensor:
        ctx = x if ctx is None else ctx
        if x.ndim != 2 or x.shape[1] != self.d or ctx.ndim != 2 or ctx.shape[1] != self.d:
            raise ShapeError(f"attention: inputs {list(x.shape)}, {list(ctx.shape)} need width {self.d}")
        inv = 1.0 / math.sqrt(self.d_head)
        outs = []
        for i in range(self.heads):
            q = x @ self.wq[i]
            k = ctx @ self.wk[i]
            v = ctx @ self.wv[i]
            weights = (q @ k.transpose()).scale(inv).softmax(axis=-1)
            outs.append(weights @ v)
        return T.concat(outs, axis=-1) @ self.wo

    def attention_weights(self, x: Tensor, ctx: Tensor | None = None) -> list[np.ndarray]:
        """Per-head weight matrices of a forward pass (values only)."""
        ctx = x if ctx is None else ctx
        inv = 1.0 / math.sqrt(self.d_head)
        with T.no_grad():
            return [((x @ self.wq[i]) @ (ctx @ self.wk[i]).transpose()).scale(inv)
                    .softmax(axis=-1).data for i in range(self.heads)]

    def named_parameters(self, prefix: str):
        out = []
        for i in range(self.heads):
            out += [(f"{prefix}.q{i}", self.wq[i]), (f"{prefix}.k{i}", self.wk[i]),
                    (f"{prefix}.v{i}", self.wv[i])]
        out.append((f"{prefix}.out", self.wo))
        return out


class LayerNorm:
    """Per-row normalization over the last dimension with learnable gain/bias."""

    EPS = 1e-5

    def __init__(self, d: int, dtype=np.float64):
        self.d = d
        self.gain = _param(np.ones(d, dtype=dtype))
        self.bias = _param(np.zeros(d, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.d:
            raise ShapeError(f"layer_norm: input {list(x.shape)} needs width {self.d}")
        n = x.shape[1]
        mean = x.sum_last_keep().scale(1.0 / n)
        centered = x.sub_col(mean)
        var = (centered * centered).sum_last_keep().scale(1.0 / n)
        std = (var + self.EPS).sqrt()
        return centered.div_col(std).mul_row(self.gain).add_row(self.bias)

    def named_parameters(self, prefix: str):
        return [(f"{prefix}.gain", self.gain), (f"{prefix}.bias", self.bias)]


class LvcBlock:
    """Local feature gate built on a learnable codebook.

    A conv1d stem maps the input to [T x d]. Each position is softly assigned
    to K learnable centers with weights softmax_k(-s_k * ||x_i - b_k||^2); the
    weighted residuals are averaged over time into one descriptor, projected,
    and squashed into a per-channel gate in (0, 1) that scales the stem output
    at every time step.
    """

    def __init__(self, d_in: int, d: int, k_conv: int, n_centers: int, rng: Prng, dtype=np.float64):
        if n_centers < 1:
            raise ConfigError(f"codebook needs at least one center; got {n_centers}")
        self.d = d
        self.n_centers = n_centers
        self.stem = Conv1d(d_in, d, k_conv, rng.child(0), dtype)
        self.centers = _param((rng.child(1).normal(n_centers * d) * 0.1).astype(dtype).reshape(n_centers, d))
        self.scales = _param(np.ones(n_centers, dtype=dtype))
        self.proj = Linear(d, d, rng.child(2), dtype)

    def __call__(self, x: Tensor, return_parts: bool = False):
        stem_out = self.stem(x)
        t_len = stem_out.shape[0]
        x_sq = (stem_out * stem_out).sum_last_keep()                    # [T x 1]
        c_sq = (self.centers * self.centers).sum_last_keep().reshape((self.n_centers,))
        cross = stem_out @ self.centers.transpose()                     # [T x K]
        dist_sq = cross.scale(-2.0).add_col(x_sq).add_row(c_sq)
        assign = dist_sq.mul_row(self.scales).scale(-1.0).softmax(axis=-1)

        ones = Tensor(np.ones((1, t_len), dtype=stem_out.data.dtype))
        weight_per_pos = assign.sum_last_keep()                         # [T x 1], ~1
        pooled = ones @ stem_out.mul_col(weight_per_pos)                # sum_i sum_k w_ik x_i
        center_mass = (ones @ assign) @ self.centers                    # sum_i sum_k w_ik b_k
        descriptor = (pooled - center_mass).scale(1.0 / t_len)          # [1 x d]

        gate = self.proj(descriptor).sigmoid().reshape((self.d,))
        out = stem_out.mul_row(gate)
        if return_parts:
            return out, assign, gate
        return out

    def named_parameters(self, prefix: str):
        out = self.stem.named_parameters(f"{prefix}.stem")
        out += [(f"{prefix}.centers", self.centers), (f"{prefix}.scales", self.scales)]
        out += self.proj.named_parameters(f"{prefix}.proj")
        return out
