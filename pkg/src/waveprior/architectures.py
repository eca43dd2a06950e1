"""Generator networks: the reduced Demucs-style prior family and a small Wave-U-Net.

Every network maps a (1 × T) noise waveform to a (1 × T) output. Inputs are
zero-padded at the end to a length the strided encoder/decoder can
reconstruct exactly, and the output is trimmed back to T.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import tensor as T
from .layers import (
    Conv1dParams,
    conv1d,
    conv_transpose1d,
    glu,
    init_attention,
    init_conv1d,
    init_conv_transpose1d,
    init_linear,
    init_lstm,
    linear,
    lstm_forward,
    self_attention,
    upsample_linear,
)
from .tensor import Tensor


@dataclass(frozen=True)
class NetworkVariant:
    family: str = "demucs_prior"
    conv_layers: int = 2
    use_skip: bool = False
    activation: str = "relu"
    bottleneck: str = "none"
    base_channels: int = 32
    lstm_layers: int = 1
    hidden: Optional[int] = None  # None -> encoder output width
    kernel: int = 8
    stride: int = 4
    heads: int = 4

    def __post_init__(self):
        if self.family not in ("demucs_prior", "waveunet"):
            raise ValueError(f"unknown family {self.family!r}")
        if self.family == "demucs_prior":
            if self.conv_layers not in (2, 4, 6):
                raise ValueError(f"conv_layers must be 2, 4 or 6, got {self.conv_layers}")
            if self.activation not in ("relu", "glu"):
                raise ValueError(f"activation must be 'relu' or 'glu', got {self.activation!r}")
            if self.bottleneck not in ("none", "lstm", "attention"):
                raise ValueError(
                    f"bottleneck must be 'none', 'lstm' or 'attention', got {self.bottleneck!r}"
                )

    @property
    def encoder_width(self) -> int:
        return self.base_channels * 2 ** (self.conv_layers - 1)


PRESETS: dict[str, NetworkVariant] = {
    "conv2": NetworkVariant(conv_layers=2),
    "conv4": NetworkVariant(conv_layers=4),
    "conv6": NetworkVariant(conv_layers=6),
    "conv-skip": NetworkVariant(conv_layers=2, use_skip=True),
    "conv-glu": NetworkVariant(activation="glu"),
    "conv-lstm": NetworkVariant(bottleneck="lstm"),
    "conv-attn": NetworkVariant(bottleneck="attention"),
    "conv-glu-lstm": NetworkVariant(activation="glu", bottleneck="lstm"),
    "conv-glu-attn": NetworkVariant(activation="glu", bottleneck="attention"),
    "waveunet": NetworkVariant(family="waveunet"),
}


def get_preset(name: str, **overrides) -> NetworkVariant:
    try:
        variant = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; available presets: {', '.join(PRESETS)}") from None
    return replace(variant, **overrides) if overrides else variant


# ---------------------------------------------------------------------------
# length bookkeeping
# ---------------------------------------------------------------------------

def min_length(depth: int, kernel: int = 8, stride: int = 4) -> int:
    """Shortest input whose deepest encoded sequence has a single step."""
    length = 1
    for _ in range(depth):
        length = (length - 1) * stride + kernel
    return length


def valid_length(length: int, depth: int, kernel: int = 8, stride: int = 4) -> int:
    """Smallest L >= length that the strided encoder divides evenly at every layer.

    Inputs shorter than the receptive field of the full stack are padded up
    to :func:`min_length`; only inputs shorter than one kernel are rejected.
    """
    if length < kernel:
        raise ValueError(
            f"input of {length} samples is too short for {depth} layers "
            f"(kernel {kernel}, stride {stride}); minimum length is {kernel}"
        )
    n = length
    for _ in range(depth):
        n = max(int(np.ceil((n - kernel) / stride)) + 1, 1)
    for _ in range(depth):
        n = (n - 1) * stride + kernel
    return n


# ---------------------------------------------------------------------------
# networks
# ---------------------------------------------------------------------------

class Network:
    """Common surface for the generator families."""

    variant: NetworkVariant

    def parameters(self) -> list[Tensor]:
        raise NotImplementedError

    def padded_length(self, length: int) -> int:
        raise NotImplementedError

    def _forward_padded(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    @property
    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    @property
    def min_length(self) -> int:
        raise NotImplementedError

    def forward(self, x: Tensor) -> Tensor:
        if x.data.ndim != 2 or x.shape[0] != 1:
            raise ValueError(f"network input must be (1 × T), got {x.shape}")
        n = x.shape[1]
        padded = self.padded_length(n)
        out = self._forward_padded(T.pad_time(x, padded - n))
        return T.slice_time(out, 0, n) if padded != n else out

    __call__ = forward


class DemucsPrior(Network):
    """Strided conv encoder, optional LSTM/attention bottleneck, mirrored transposed-conv decoder."""

    def __init__(self, variant: NetworkVariant, seed: int = 0):
        self.variant = variant
        rng = np.random.default_rng(seed)
        v = variant
        widths = [v.base_channels * 2**i for i in range(v.conv_layers)]
        gate = 2 if v.activation == "glu" else 1
        self.encoder: list[Conv1dParams] = []
        c_in = 1
        for w in widths:
            self.encoder.append(init_conv1d(rng, c_in, gate * w, v.kernel, v.stride))
            c_in = w
        self.lstm = self.proj = self.attention = None
        if v.bottleneck == "lstm":
            hidden = v.hidden or widths[-1]
            self.lstm = init_lstm(rng, widths[-1], hidden, v.lstm_layers)
            self.proj = init_linear(rng, hidden, widths[-1])
        elif v.bottleneck == "attention":
            self.attention = init_attention(rng, widths[-1], v.heads)
        self.decoder: list[Conv1dParams] = []
        for i in reversed(range(v.conv_layers)):
            last = i == 0
            c_out = 1 if last else widths[i - 1]
            self.decoder.append(
                init_conv_transpose1d(rng, widths[i], c_out if last else gate * c_out, v.kernel, v.stride)
            )

    def parameters(self) -> list[Tensor]:
        params = []
        for c in self.encoder:
            params += c.parameters()
        for block in (self.lstm, self.proj, self.attention):
            if block is not None:
                params += block.parameters()
        for c in self.decoder:
            params += c.parameters()
        return params

    @property
    def min_length(self) -> int:
        return self.variant.kernel

    def padded_length(self, length: int) -> int:
        return valid_length(length, self.variant.conv_layers, self.variant.kernel, self.variant.stride)

    def _act(self, x: Tensor) -> Tensor:
        return glu(x) if self.variant.activation == "glu" else T.relu(x)

    def _forward_padded(self, x: Tensor) -> Tensor:
        skips = []
        for conv in self.encoder:
            x = self._act(conv1d(x, conv))
            skips.append(x)
        if self.lstm is not None:
            seq = lstm_forward(T.transpose(x), self.lstm)
            x = T.transpose(linear(seq, self.proj))
        elif self.attention is not None:
            x = T.transpose(self_attention(T.transpose(x), self.attention))
        for i, deconv in enumerate(self.decoder):
            if self.variant.use_skip:
                x = T.add(x, skips.pop())
            x = conv_transpose1d(x, deconv)
            if i < len(self.decoder) - 1:
                x = self._act(x)
        return x


class WaveUNet(Network):
    """Four down blocks (k=15, decimate by 2), four up blocks (linear upsampling, k=5),
    concatenative skips and 16 + 16·i filters per level."""

    levels = 4
    down_kernel = 15
    up_kernel = 5

    def __init__(self, variant: NetworkVariant, seed: int = 0):
        self.variant = variant
        rng = np.random.default_rng(seed)
        filters = [16 + 16 * i for i in range(self.levels + 1)]
        self.down: list[Conv1dParams] = []
        c_in = 1
        for f in filters[:-1]:
            self.down.append(init_conv1d(rng, c_in, f, self.down_kernel, 1))
            c_in = f
        self.bottom = init_conv1d(rng, c_in, filters[-1], self.down_kernel, 1)
        self.up: list[Conv1dParams] = []
        c_in = filters[-1]
        for f in reversed(filters[:-1]):
            self.up.append(init_conv1d(rng, c_in + f, f, self.up_kernel, 1))
            c_in = f
        self.out = init_conv1d(rng, c_in + 1, 1, 1, 1)

    def parameters(self) -> list[Tensor]:
        params = []
        for c in [*self.down, self.bottom, *self.up, self.out]:
            params += c.parameters()
        return params

    @property
    def min_length(self) -> int:
        return 2**self.levels

    def padded_length(self, length: int) -> int:
        step = 2**self.levels
        if length < step:
            raise ValueError(f"input of {length} samples is too short; minimum length is {step}")
        return -(-length // step) * step

    @staticmethod
    def _same_conv(x: Tensor, p: Conv1dParams) -> Tensor:
        half = p.kernel // 2
        return conv1d(T.pad_time(x, half, half), p)

    def _forward_padded(self, x: Tensor) -> Tensor:
        source = x
        skips = []
        for p in self.down:
            x = T.relu(self._same_conv(x, p))
            skips.append(x)
            x = T.slice_time(x, 0, x.shape[1], 2)
        x = T.relu(self._same_conv(x, self.bottom))
        for p in self.up:
            x = upsample_linear(x)
            x = T.relu(self._same_conv(T.concat_channels([x, skips.pop()]), p))
        return conv1d(T.concat_channels([x, source]), self.out)


def build_network(variant: NetworkVariant | str, seed: int = 0) -> Network:
    if isinstance(variant, str):
        variant = get_preset(variant)
    if variant.family == "waveunet":
        return WaveUNet(variant, seed)
    return DemucsPrior(variant, seed)


def network_forward(net: Network, x: Tensor) -> Tensor:
    return net.forward(x)
