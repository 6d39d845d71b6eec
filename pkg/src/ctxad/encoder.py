"""Temporal convolutional encoder mapping a window to a unit-norm embedding.

Residual blocks of two dilated causal convolutions (leaky ReLU after each),
with a 1x1 convolution on the skip path when the channel count changes. Block
``l`` uses dilation ``2**l``. Features are max-pooled over time, projected
linearly and L2-normalized.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .nn import tensor as T
from .nn.params import ParameterSet, uniform_fan_in
from .nn.tensor import Tensor

__all__ = ["EncoderConfig", "TCNEncoder", "receptive_field", "blocks_for_length", "init_parameters", "encode"]

CONVS_PER_BLOCK = 2


def receptive_field(config: "EncoderConfig | None" = None, *, num_blocks: int | None = None, kernel_size: int | None = None) -> int:
    if config is not None:
        num_blocks, kernel_size = config.num_blocks, config.kernel_size
    assert num_blocks is not None and kernel_size is not None
    return 1 + CONVS_PER_BLOCK * (kernel_size - 1) * (2**num_blocks - 1)


def blocks_for_length(length: int, kernel_size: int = 3) -> int:
    """Smallest block count whose receptive field covers ``length`` steps."""
    if kernel_size < 2:
        raise ValueError("kernel_size must be >= 2 for the receptive field to grow")
    n = 1
    while receptive_field(num_blocks=n, kernel_size=kernel_size) < length:
        n += 1
    return n


@dataclass(frozen=True)
class EncoderConfig:
    input_channels: int = 1
    num_blocks: int = 4
    kernel_size: int = 3
    hidden_channels: int = 32
    embedding_dim: int = 64
    leaky_slope: float = 0.01

    def __post_init__(self):
        for name in ("input_channels", "num_blocks", "kernel_size", "hidden_channels", "embedding_dim"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ValueError(f"encoder {name} must be a positive integer, got {value!r}")

    def check_window(self, window_length: int) -> None:
        rf = receptive_field(self)
        if rf < window_length:
            warnings.warn(
                f"receptive field {rf} is smaller than window length {window_length}", RuntimeWarning, stacklevel=2
            )

    def to_dict(self) -> dict:
        return asdict(self)


def init_parameters(config: EncoderConfig, rng: np.random.Generator, dtype=np.float64) -> ParameterSet:
    """Fan-in scaled uniform weights, zero biases."""
    params: ParameterSet = {}
    k, h = config.kernel_size, config.hidden_channels

    def add(name, arr):
        params[name] = Tensor(arr.astype(dtype), requires_grad=True)

    c_in = config.input_channels
    for b in range(config.num_blocks):
        add(f"block{b}.conv1.weight", uniform_fan_in(rng, (k, c_in, h), k * c_in))
        add(f"block{b}.conv1.bias", np.zeros(h))
        add(f"block{b}.conv2.weight", uniform_fan_in(rng, (k, h, h), k * h))
        add(f"block{b}.conv2.bias", np.zeros(h))
        if c_in != h:
            add(f"block{b}.skip.weight", uniform_fan_in(rng, (1, c_in, h), c_in))
            add(f"block{b}.skip.bias", np.zeros(h))
        c_in = h
    add("head.weight", uniform_fan_in(rng, (h, config.embedding_dim), h))
    add("head.bias", np.zeros(config.embedding_dim))
    return params


class TCNEncoder:
    """Stateless forward pass over a parameter map."""

    def __init__(self, config: EncoderConfig, params: ParameterSet):
        self.config = config
        self.params = params

    def features(self, x: Tensor) -> Tensor:
        """Causal feature map ``(B, T, hidden)`` before pooling."""
        if x.shape[2] != self.config.input_channels:
            raise ValueError(f"encoder expects {self.config.input_channels} channels, got {x.shape[2]}")
        p, slope = self.params, self.config.leaky_slope
        h = x
        for b in range(self.config.num_blocks):
            dilation = 2**b
            out = T.leaky_relu(T.conv1d_causal(h, p[f"block{b}.conv1.weight"], p[f"block{b}.conv1.bias"], dilation), slope)
            out = T.leaky_relu(T.conv1d_causal(out, p[f"block{b}.conv2.weight"], p[f"block{b}.conv2.bias"], dilation), slope)
            skip_w = p.get(f"block{b}.skip.weight")
            residual = h if skip_w is None else T.conv1d_causal(h, skip_w, p[f"block{b}.skip.bias"])
            h = out + residual
        return h

    def head(self, pooled: Tensor) -> Tensor:
        return T.l2_normalize(T.linear(pooled, self.params["head.weight"], self.params["head.bias"]))

    def __call__(self, x: Tensor) -> Tensor:
        """Embed a batch ``(B, T, D) -> (B, E)``."""
        return self.head(T.max_pool_time(self.features(x)))

    def embed_pair(self, x: Tensor, context_length: int) -> tuple[Tensor, Tensor]:
        """Embeddings of full windows and of their first ``context_length`` steps.

        The feature map is causal, so the context's features are exactly the
        prefix of the full window's; one convolution pass serves both.
        """
        feats = self.features(x)
        z = self.head(T.max_pool_time(feats))
        zc = self.head(T.max_pool_time(feats, context_length))
        return z, zc


def encode(values: np.ndarray, params: ParameterSet, config: EncoderConfig) -> np.ndarray:
    """Embed a single ``T' x D`` array; returns a unit-norm vector of length E."""
    arr = np.asarray(values)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.shape[0] < 1:
        raise ValueError("cannot encode an empty sequence")
    dtype = next(iter(params.values())).dtype
    out = TCNEncoder(config, params)(Tensor(arr[None].astype(dtype)))
    return out.data[0]
