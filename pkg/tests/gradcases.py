"""Small randomized graphs for central finite-difference checks.

Each builder takes a seed and returns ``(build_graph, params)``. Losses are
random linear projections of the layer output so they stay smooth; the L1
cases keep every residual at least 0.1 away from the kink at zero.
"""

import numpy as np

from waveprior import tensor as T
from waveprior.architectures import build_network, get_preset
from waveprior.layers import (
    AttentionParams,
    Conv1dParams,
    LstmParams,
    conv1d,
    conv_transpose1d,
    glu,
    lstm_forward,
    self_attention,
)


def _projection(out: T.Tensor, rng) -> T.Tensor:
    w = T.Tensor(rng.standard_normal(out.shape))
    return T.sum(T.mul(out, w))


def conv1d_case(seed):
    rng = np.random.default_rng(seed)
    c_in, c_out, k = rng.integers(1, 4), rng.integers(1, 4), rng.integers(1, 6)
    stride = int(rng.integers(1, 4))
    length = int(k + stride * rng.integers(1, 5) + rng.integers(0, stride))
    x = T.parameter(rng.standard_normal((c_in, length)))
    p = Conv1dParams(T.parameter(rng.standard_normal((c_out, c_in, k))), T.parameter(rng.standard_normal(c_out)), stride)
    w_rng = np.random.default_rng(seed + 1000)
    proj = T.Tensor(w_rng.standard_normal((c_out, (length - k) // stride + 1)))
    return (lambda: T.sum(T.mul(conv1d(x, p), proj))), [x, p.weight, p.bias]


def conv_transpose1d_case(seed):
    rng = np.random.default_rng(seed)
    c_in, c_out, k = rng.integers(1, 4), rng.integers(1, 4), rng.integers(1, 6)
    stride = int(rng.integers(1, 4))
    length = int(rng.integers(1, 6))
    x = T.parameter(rng.standard_normal((c_in, length)))
    p = Conv1dParams(T.parameter(rng.standard_normal((c_in, c_out, k))), T.parameter(rng.standard_normal(c_out)), stride)
    proj = T.Tensor(rng.standard_normal((c_out, (length - 1) * stride + k)))
    return (lambda: T.sum(T.mul(conv_transpose1d(x, p), proj))), [x, p.weight, p.bias]


def glu_case(seed):
    rng = np.random.default_rng(seed)
    c, n = int(rng.integers(1, 4)), int(rng.integers(1, 8))
    x = T.parameter(rng.standard_normal((2 * c, n)) * 2)
    proj = T.Tensor(rng.standard_normal((c, n)))
    return (lambda: T.sum(T.mul(glu(x), proj))), [x]


def lstm_case(seed):
    rng = np.random.default_rng(seed)
    steps, n_in, hidden, layers = int(rng.integers(3, 6)), int(rng.integers(1, 4)), int(rng.integers(1, 4)), 2
    seq = T.parameter(rng.standard_normal((steps, n_in)))
    w_ih = [T.parameter(rng.standard_normal((4 * hidden, n_in if i == 0 else hidden)) * 0.7) for i in range(layers)]
    w_hh = [T.parameter(rng.standard_normal((4 * hidden, hidden)) * 0.7) for _ in range(layers)]
    bias = [T.parameter(rng.standard_normal(4 * hidden) * 0.5) for _ in range(layers)]
    p = LstmParams(w_ih, w_hh, bias)
    proj = T.Tensor(rng.standard_normal((steps, hidden)))
    return (lambda: T.sum(T.mul(lstm_forward(seq, p), proj))), [seq, *p.parameters()]


def attention_case(seed):
    rng = np.random.default_rng(seed)
    heads = int(rng.choice([1, 2, 4]))
    d, steps = heads * int(rng.integers(1, 3)), int(rng.integers(1, 6))
    seq = T.parameter(rng.standard_normal((steps, d)))
    w = [T.parameter(rng.standard_normal((d, d)) / np.sqrt(d)) for _ in range(4)]
    p = AttentionParams(*w, heads=heads, positional=bool(seed % 2))
    proj = T.Tensor(rng.standard_normal((steps, d)))
    return (lambda: T.sum(T.mul(self_attention(seq, p), proj))), [seq, *p.parameters()]


def masked_l1_case(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 20))
    pred = T.parameter(rng.standard_normal((1, n)))
    target = pred.data + rng.choice([-1.0, 1.0], (1, n)) * rng.uniform(0.1, 1.0, (1, n))
    mask = rng.random(n) < 0.3
    mask[rng.integers(n)] = False
    return (lambda: T.l1_loss(pred, target, mask)), [pred]


def network_case(seed, preset="conv-lstm", length=64):
    """Whole generator (2-channel base width) under L1 loss to a nearby target.

    Biases are randomized: at their zero initialization, zero-padded regions
    put ReLU inputs exactly on the kink, where one-sided analytic and central
    finite-difference derivatives legitimately disagree. The loss is kept
    small so its rounding noise stays below the 1e-8 denominator floor.
    """
    rng = np.random.default_rng(seed)
    net = build_network(get_preset(preset, base_channels=2), seed)
    for p in net.parameters():
        if p.data.ndim == 1:
            p.data[:] = rng.uniform(-0.5, 0.5, p.shape)
    x = T.Tensor(rng.standard_normal((1, length)))
    start = net(x).data
    target = start + rng.choice([-1.0, 1.0], start.shape) * rng.uniform(0.01, 0.03, start.shape)
    return (lambda: T.l1_loss(net(x), target)), net.parameters()


CASES = {
    "conv1d": conv1d_case,
    "conv_transpose1d": conv_transpose1d_case,
    "glu": glu_case,
    "lstm": lstm_case,
    "attention": attention_case,
    "masked_l1": masked_l1_case,
    "network": network_case,
}
