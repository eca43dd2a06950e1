"""Differentiable layers: strided 1-D (transposed) convolution, GLU, LSTM, attention.

Convolutions are "valid" (no implicit padding). Length bookkeeping is the
caller's job, which keeps conv1d and conv_transpose1d exact adjoints of
each other when they share a weight array.

LSTM gate order is (input, forget, cell, output) with one bias vector per
layer; the whole recurrence is a single graph node with a hand-written
backpropagation-through-time pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import tensor as T
from .tensor import Tensor, _check_finite, _sigmoid, make_node, parameter


@dataclass
class Conv1dParams:
    """Weight is (out × in × kernel) for conv1d and (in × out × kernel) for conv_transpose1d."""

    weight: Tensor
    bias: Tensor
    stride: int = 4

    def __post_init__(self):
        if self.weight.data.ndim != 3 or self.weight.shape[2] < 1:
            raise ValueError(f"conv weight must be 3-D with kernel >= 1, got {self.weight.shape}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")

    @property
    def kernel(self) -> int:
        return self.weight.shape[2]

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]


@dataclass
class LinearParams:
    weight: Tensor  # (out × in)
    bias: Tensor  # (out,)

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]


@dataclass
class LstmParams:
    w_ih: list[Tensor]  # per layer (4H × I)
    w_hh: list[Tensor]  # per layer (4H × H)
    bias: list[Tensor]  # per layer (4H,)

    def __post_init__(self):
        h = self.hidden
        for i, (wi, wh, b) in enumerate(zip(self.w_ih, self.w_hh, self.bias)):
            expect_in = wi.shape[1] if i == 0 else h
            if wi.shape != (4 * h, expect_in) or wh.shape != (4 * h, h) or b.shape != (4 * h,):
                raise ValueError(
                    f"LSTM layer {i}: inconsistent shapes {wi.shape}, {wh.shape}, {b.shape} "
                    f"for hidden size {h}"
                )

    @property
    def hidden(self) -> int:
        return self.w_hh[0].shape[1]

    @property
    def num_layers(self) -> int:
        return len(self.w_hh)

    def parameters(self) -> list[Tensor]:
        out = []
        for wi, wh, b in zip(self.w_ih, self.w_hh, self.bias):
            out += [wi, wh, b]
        return out


@dataclass
class AttentionParams:
    w_q: Tensor  # (d × d), applied as seq @ w
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    heads: int = 4
    positional: bool = True

    def __post_init__(self):
        d = self.w_q.shape[0]
        if d % self.heads:
            raise ValueError(f"model width {d} is not divisible by {self.heads} heads")

    @property
    def width(self) -> int:
        return self.w_q.shape[0]

    def parameters(self) -> list[Tensor]:
        return [self.w_q, self.w_k, self.w_v, self.w_o]


# ---------------------------------------------------------------------------
# initialisation
# ---------------------------------------------------------------------------

def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    """Weights ~ U(-b, b) with b = 1/sqrt(fan_in)."""
    bound = 1.0 / np.sqrt(fan_in)
    return parameter(rng.uniform(-bound, bound, size=shape))


def init_conv1d(rng, c_in: int, c_out: int, kernel: int = 8, stride: int = 4) -> Conv1dParams:
    return Conv1dParams(
        uniform_init(rng, (c_out, c_in, kernel), c_in * kernel), parameter(np.zeros(c_out)), stride
    )


def init_conv_transpose1d(rng, c_in: int, c_out: int, kernel: int = 8, stride: int = 4) -> Conv1dParams:
    # fan_in of the transposed map seen from one output sample
    return Conv1dParams(
        uniform_init(rng, (c_in, c_out, kernel), c_in * kernel), parameter(np.zeros(c_out)), stride
    )


def init_linear(rng, n_in: int, n_out: int) -> LinearParams:
    return LinearParams(uniform_init(rng, (n_out, n_in), n_in), parameter(np.zeros(n_out)))


def init_lstm(rng, n_in: int, hidden: int, layers: int = 2) -> LstmParams:
    w_ih, w_hh, bias = [], [], []
    for i in range(layers):
        w_ih.append(uniform_init(rng, (4 * hidden, n_in if i == 0 else hidden), hidden))
        w_hh.append(uniform_init(rng, (4 * hidden, hidden), hidden))
        bias.append(parameter(np.zeros(4 * hidden)))
    return LstmParams(w_ih, w_hh, bias)


def init_attention(rng, width: int, heads: int = 4, positional: bool = True) -> AttentionParams:
    w = [uniform_init(rng, (width, width), width) for _ in range(4)]
    return AttentionParams(*w, heads=heads, positional=positional)


def init_params(spec: dict, seed: int):
    """Build the parameters of one layer from a small dict spec, deterministically in ``seed``.

    ``spec["kind"]`` is one of conv1d, conv_transpose1d, linear, lstm, attention;
    the remaining keys are forwarded to the matching ``init_*`` function.
    """
    kinds = {
        "conv1d": init_conv1d,
        "conv_transpose1d": init_conv_transpose1d,
        "linear": init_linear,
        "lstm": init_lstm,
        "attention": init_attention,
    }
    spec = dict(spec)
    kind = spec.pop("kind")
    if kind not in kinds:
        raise ValueError(f"unknown layer kind {kind!r}; expected one of {sorted(kinds)}")
    return kinds[kind](np.random.default_rng(seed), **spec)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def conv_output_length(length: int, kernel: int, stride: int) -> int:
    return (length - kernel) // stride + 1


def conv1d(x: Tensor, p: Conv1dParams) -> Tensor:
    """Valid strided cross-correlation: (C_in × T) -> (C_out × T_out)."""
    w, b, s = p.weight, p.bias, p.stride
    c_out, c_in, k = w.shape
    if x.data.ndim != 2 or x.shape[0] != c_in:
        raise ValueError(f"conv1d: input shape {x.shape} does not match weight {w.shape}")
    length = x.shape[1]
    if length < k:
        raise ValueError(f"conv1d: input length {length} shorter than kernel; need at least {k}")
    _check_finite("conv1d", x, w, b)
    t_out = conv_output_length(length, k, s)
    # (C_in, T_out, K) -> (C_in*K, T_out)
    win = sliding_window_view(x.data, k, axis=1)[:, : (t_out - 1) * s + 1 : s, :]
    cols = np.ascontiguousarray(win.transpose(0, 2, 1)).reshape(c_in * k, t_out)
    w2 = w.data.reshape(c_out, c_in * k)
    out = w2 @ cols + b.data[:, None]

    def bw(g):
        if w.requires_grad:
            w._accumulate((g @ cols.T).reshape(w.shape))
        if b.requires_grad:
            b._accumulate(g.sum(axis=1))
        if x.requires_grad:
            dcols = (w2.T @ g).reshape(c_in, k, t_out)
            dx = np.zeros_like(x.data)
            for j in range(k):
                dx[:, j : j + (t_out - 1) * s + 1 : s] += dcols[:, j, :]
            x._accumulate(dx)

    return make_node("conv1d", out, (x, w, b), bw)


def conv_transpose1d(x: Tensor, p: Conv1dParams) -> Tensor:
    """Strided transposed convolution: (C_in × T) -> (C_out × (T-1)·stride + kernel)."""
    w, b, s = p.weight, p.bias, p.stride
    c_in, c_out, k = w.shape
    if x.data.ndim != 2 or x.shape[0] != c_in:
        raise ValueError(f"conv_transpose1d: input shape {x.shape} does not match weight {w.shape}")
    _check_finite("conv_transpose1d", x, w, b)
    length = x.shape[1]
    t_out = (length - 1) * s + k
    w2 = w.data.reshape(c_in, c_out * k)
    cols = (w2.T @ x.data).reshape(c_out, k, length)
    out = np.zeros((c_out, t_out))
    for j in range(k):
        out[:, j : j + (length - 1) * s + 1 : s] += cols[:, j, :]
    out += b.data[:, None]

    def bw(g):
        if b.requires_grad:
            b._accumulate(g.sum(axis=1))
        win = sliding_window_view(g, k, axis=1)[:, : (length - 1) * s + 1 : s, :]
        dcols = np.ascontiguousarray(win.transpose(0, 2, 1)).reshape(c_out * k, length)
        if w.requires_grad:
            w._accumulate((x.data @ dcols.T).reshape(w.shape))
        if x.requires_grad:
            x._accumulate(w2 @ dcols)

    return make_node("conv_transpose1d", out, (x, w, b), bw)


def glu(x: Tensor) -> Tensor:
    """Gated linear unit over channels: [a; b] -> a * sigmoid(b)."""
    if x.data.ndim != 2 or x.shape[0] % 2:
        raise ValueError(f"glu: channel count must be even, got shape {x.shape}")
    _check_finite("glu", x)
    c = x.shape[0] // 2
    a, gate = x.data[:c], _sigmoid(x.data[c:])

    def bw(g):
        dx = np.empty_like(x.data)
        dx[:c] = g * gate
        dx[c:] = g * a * gate * (1.0 - gate)
        x._accumulate(dx)

    return make_node("glu", a * gate, (x,), bw)


def linear(x: Tensor, p: LinearParams) -> Tensor:
    """Row-wise affine map: (N × in) -> (N × out)."""
    w, b = p.weight, p.bias
    if x.data.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ValueError(f"linear: input shape {x.shape} does not match weight {w.shape}")
    _check_finite("linear", x, w, b)

    def bw(g):
        if w.requires_grad:
            w._accumulate(g.T @ x.data)
        if b.requires_grad:
            b._accumulate(g.sum(axis=0))
        if x.requires_grad:
            x._accumulate(g @ w.data)

    return make_node("linear", x.data @ w.data.T + b.data, (x, w, b), bw)


def upsample_linear(x: Tensor) -> Tensor:
    """Double the time resolution by linear interpolation: (C × L) -> (C × 2L).

    Even outputs copy the input; odd outputs average neighbours, the last
    one repeating the final sample.
    """
    _check_finite("upsample_linear", x)
    nxt = np.concatenate([x.data[:, 1:], x.data[:, -1:]], axis=1)
    out = np.empty((x.shape[0], 2 * x.shape[1]))
    out[:, 0::2] = x.data
    out[:, 1::2] = 0.5 * (x.data + nxt)

    def bw(g):
        odd = 0.5 * g[:, 1::2]
        dx = g[:, 0::2] + odd
        dx[:, 1:] += odd[:, :-1]
        dx[:, -1] += odd[:, -1]
        x._accumulate(dx)

    return make_node("upsample_linear", out, (x,), bw)


# ---------------------------------------------------------------------------
# recurrent
# ---------------------------------------------------------------------------

def lstm_layer(seq: Tensor, w_ih: Tensor, w_hh: Tensor, bias: Tensor) -> Tensor:
    """One unidirectional LSTM layer from a zero state: (T × I) -> (T × H)."""
    if seq.data.ndim != 2 or seq.shape[1] != w_ih.shape[1]:
        raise ValueError(f"lstm: sequence shape {seq.shape} does not match w_ih {w_ih.shape}")
    _check_finite("lstm", seq, w_ih, w_hh, bias)
    steps = seq.shape[0]
    h_size = w_hh.shape[1]
    wh = w_hh.data
    pre = seq.data @ w_ih.data.T + bias.data
    acts = np.empty((steps, 4 * h_size))  # i, f, g, o after nonlinearity
    cells = np.empty((steps + 1, h_size))
    hs = np.empty((steps + 1, h_size))
    cells[0] = 0.0
    hs[0] = 0.0
    for t in range(steps):
        z = pre[t] + wh @ hs[t]
        a = acts[t]
        a[:] = 0.5 + 0.5 * np.tanh(0.5 * z)
        a[2 * h_size : 3 * h_size] = np.tanh(z[2 * h_size : 3 * h_size])
        i, f, gg, o = a[:h_size], a[h_size : 2 * h_size], a[2 * h_size : 3 * h_size], a[3 * h_size :]
        cells[t + 1] = f * cells[t] + i * gg
        hs[t + 1] = o * np.tanh(cells[t + 1])
    out = hs[1:].copy()
    tanh_c = np.tanh(cells[1:])

    def bw(g):
        # local derivatives of the gate nonlinearities
        deriv = acts * (1.0 - acts)
        deriv[:, 2 * h_size : 3 * h_size] = 1.0 - acts[:, 2 * h_size : 3 * h_size] ** 2
        dz = np.empty_like(acts)
        dh_next = np.zeros(h_size)
        dc_next = np.zeros(h_size)
        whT = wh.T
        for t in range(steps - 1, -1, -1):
            a = acts[t]
            i, f, gg, o = a[:h_size], a[h_size : 2 * h_size], a[2 * h_size : 3 * h_size], a[3 * h_size :]
            dh = g[t] + dh_next
            tc = tanh_c[t]
            dc = dc_next + dh * o * (1.0 - tc * tc)
            d = dz[t]
            d[:h_size] = dc * gg
            d[h_size : 2 * h_size] = dc * cells[t]
            d[2 * h_size : 3 * h_size] = dc * i
            d[3 * h_size :] = dh * tc
            d *= deriv[t]
            dh_next = whT @ d
            dc_next = dc * f
        if w_hh.requires_grad:
            w_hh._accumulate(dz.T @ hs[:-1])
        if w_ih.requires_grad:
            w_ih._accumulate(dz.T @ seq.data)
        if bias.requires_grad:
            bias._accumulate(dz.sum(axis=0))
        if seq.requires_grad:
            seq._accumulate(dz @ w_ih.data)

    return make_node("lstm", out, (seq, w_ih, w_hh, bias), bw)


def lstm_forward(seq: Tensor, p: LstmParams) -> Tensor:
    """Stacked LSTM with zero initial state: (T × I) -> (T × H)."""
    out = seq
    for wi, wh, b in zip(p.w_ih, p.w_hh, p.bias):
        out = lstm_layer(out, wi, wh, b)
    return out


# ---------------------------------------------------------------------------
# attention
# ---------------------------------------------------------------------------

def sinusoidal_encoding(steps: int, width: int) -> np.ndarray:
    pos = np.arange(steps)[:, None]
    div = np.exp(-np.log(10000.0) * (np.arange(0, width, 2) / width))
    enc = np.zeros((steps, width))
    enc[:, 0::2] = np.sin(pos * div)
    enc[:, 1::2] = np.cos(pos * div[: width // 2])
    return enc


def self_attention(seq: Tensor, p: AttentionParams) -> Tensor:
    """Multi-head scaled dot-product self-attention block with a residual path.

    seq is (T × d). With ``p.positional`` a fixed sinusoidal encoding is
    added to the input before the projections (and so also to the residual).
    """
    if seq.data.ndim != 2 or seq.shape[1] != p.width:
        raise ValueError(f"self_attention: sequence shape {seq.shape} does not match width {p.width}")
    steps, d = seq.shape
    x = seq
    if p.positional:
        x = T.add(x, Tensor(sinusoidal_encoding(steps, d)))
    q, k, v = T.matmul(x, p.w_q), T.matmul(x, p.w_k), T.matmul(x, p.w_v)
    dh = d // p.heads
    heads = []
    for h in range(p.heads):
        lo, hi = h * dh, (h + 1) * dh
        qh = T.slice_axis(q, 1, lo, hi)
        kh = T.slice_axis(k, 1, lo, hi)
        vh = T.slice_axis(v, 1, lo, hi)
        scores = T.scale(T.matmul(qh, T.transpose(kh)), 1.0 / np.sqrt(dh))
        heads.append(T.matmul(T.softmax_lastdim(scores), vh))
    mixed = T.concat(heads, axis=1)
    return T.add(x, T.matmul(mixed, p.w_o))
