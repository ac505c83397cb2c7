"""Naive float32 reference kernels and a seeded executor for branchy model chains.

The kernels stand in for a real DL framework: they are deterministic for a given
input, so a chain split across two processes produces the same bits as running it
in one place.
"""

import math
import zlib
from typing import Dict, Iterable, Optional, Tuple

import numpy as np

from .BranchyModel import BranchyModel, LayerKind, LayerSpec
from .exceptions import KernelShapeException

FLOAT_BYTES = 4

LRN_K = np.float32(2.0)
LRN_ALPHA = np.float32(1e-4)
LRN_BETA = np.float32(0.75)
LRN_SIZE = 5

DROPOUT_RATE = 0.5


def _as_float32(x) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(x, dtype=np.float32))


def relu(x) -> np.ndarray:
    """Elementwise max(0, x)."""
    return _as_float32(np.maximum(_as_float32(x), np.float32(0.0)))


def conv2d(x, weights, bias, stride: int = 1, padding: int = 0) -> np.ndarray:
    """
    Direct convolution of a (C, H, W) input with (F, C, k, k) filters.

    The loops run over filter taps; each tap contributes one channel contraction
    over every output position.

    Raises:
        KernelShapeException: If channel counts disagree or the output would be empty
    """
    x = _as_float32(x)
    weights = _as_float32(weights)
    bias = _as_float32(bias)
    if x.ndim != 3 or weights.ndim != 4:
        raise KernelShapeException("conv2d", f"expected (C,H,W) input and (F,C,k,k) filters, got {x.shape} and {weights.shape}")
    channels, height, width = x.shape
    filters, filter_channels, k_h, k_w = weights.shape
    if filter_channels != channels:
        raise KernelShapeException("conv2d", f"input has {channels} channel(s), filters expect {filter_channels}")
    if bias.shape != (filters,):
        raise KernelShapeException("conv2d", f"bias shape {bias.shape} does not match {filters} filter(s)")

    out_h = (height + 2 * padding - k_h) // stride + 1
    out_w = (width + 2 * padding - k_w) // stride + 1
    if out_h < 1 or out_w < 1:
        raise KernelShapeException("conv2d", f"filter {k_h}x{k_w} does not fit input {height}x{width}")

    padded = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    out = np.zeros((filters, out_h, out_w), dtype=np.float32)
    for kh in range(k_h):
        for kw in range(k_w):
            window = padded[:, kh:kh + stride * (out_h - 1) + 1:stride, kw:kw + stride * (out_w - 1) + 1:stride]
            out += np.einsum("fc,chw->fhw", weights[:, :, kh, kw], window)
    out += bias[:, None, None]
    return _as_float32(out)


def max_pool(x, window: int, stride: Optional[int] = None) -> np.ndarray:
    """
    Window-max pooling over the last two axes of a (C, H, W) or (H, W) input.

    Raises:
        KernelShapeException: If the window does not fit
    """
    x = _as_float32(x)
    stride = stride or window
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None, :, :]
    if x.ndim != 3:
        raise KernelShapeException("max_pool", f"expected 2-D or 3-D input, got shape {x.shape}")
    _, height, width = x.shape
    out_h = (height - window) // stride + 1
    out_w = (width - window) // stride + 1
    if out_h < 1 or out_w < 1:
        raise KernelShapeException("max_pool", f"window {window} does not fit input {height}x{width}")

    out = None
    for dh in range(window):
        for dw in range(window):
            tap = x[:, dh:dh + stride * (out_h - 1) + 1:stride, dw:dw + stride * (out_w - 1) + 1:stride]
            out = tap.copy() if out is None else np.maximum(out, tap)
    return _as_float32(out[0] if squeeze else out)


def local_response_norm(x) -> np.ndarray:
    """
    Cross-channel LRN: b_c = a_c / (k + alpha * sum of a^2 over the 5 nearest channels)^beta.

    Channels are axis 0; a 1-D input is treated as channels of 1x1 maps.
    """
    x = _as_float32(x)
    shape = x.shape
    maps = x.reshape(shape[0], -1)
    squares = maps * maps
    channels = maps.shape[0]
    half = LRN_SIZE // 2
    acc = np.zeros_like(maps)
    for offset in range(-half, half + 1):
        low, high = max(0, -offset), min(channels, channels - offset)
        if low < high:
            acc[low:high] += squares[low + offset:high + offset]
    out = maps / np.power(LRN_K + LRN_ALPHA * acc, LRN_BETA)
    return _as_float32(out.reshape(shape))


def dropout(x, mask) -> np.ndarray:
    """Inference-time dropout as an elementwise multiply with a fixed mask."""
    x = _as_float32(x)
    mask = _as_float32(mask)
    if mask.shape != x.shape:
        raise KernelShapeException("dropout", f"mask shape {mask.shape} does not match input {x.shape}")
    return _as_float32(x * mask)


def dense(x, weights, bias) -> np.ndarray:
    """Fully-connected layer: weights @ flatten(x) + bias."""
    vector = _as_float32(x).reshape(-1)
    weights = _as_float32(weights)
    bias = _as_float32(bias)
    if weights.ndim != 2 or weights.shape[1] != vector.shape[0]:
        raise KernelShapeException("dense", f"weights {weights.shape} cannot multiply a vector of {vector.shape[0]}")
    if bias.shape != (weights.shape[0],):
        raise KernelShapeException("dense", f"bias shape {bias.shape} does not match {weights.shape[0]} output(s)")
    return _as_float32(np.einsum("oi,i->o", weights, vector) + bias)


def dropout_mask(rng: np.random.Generator, size: int, rate: float = DROPOUT_RATE) -> np.ndarray:
    """Inverted-dropout mask: kept units scaled by 1/(1-rate)."""
    keep = rng.random(size) >= rate
    return (keep.astype(np.float32) / np.float32(1.0 - rate)).astype(np.float32)


def layer_rng(seed: int, name: str) -> np.random.Generator:
    """Per-layer generator so independent processes derive identical parameters."""
    return np.random.default_rng([seed, zlib.crc32(name.encode("utf-8"))])


def _square_side(elements: int, channels: int, layer: LayerSpec) -> int:
    if channels <= 0 or elements % channels:
        raise KernelShapeException(layer.name, f"{elements} elements do not split into {channels} channel(s)")
    side = math.isqrt(elements // channels)
    if side * side * channels != elements:
        raise KernelShapeException(layer.name, f"{elements // channels} elements per map are not a square")
    return side


class LayerExecutor:
    """Runs layer chains of a BranchyModel with the reference kernels.

    Parameters are drawn once per layer from (seed, layer name), so every executor
    built from the same model and seed is bitwise interchangeable.
    """

    def __init__(self, model: BranchyModel, seed: int = 0) -> None:
        self.model = model
        self.seed = seed
        self._params: Dict[str, Tuple[np.ndarray, ...]] = {}
        for layer in model.layers.values():
            self._params[layer.name] = self._build_params(layer)

    def _build_params(self, layer: LayerSpec) -> Tuple[np.ndarray, ...]:
        rng = layer_rng(self.seed, layer.name)
        if layer.kind == LayerKind.CONVOLUTION:
            conv = layer.conv_params
            fan_in = conv.input_feature_maps * conv.filter_size ** 2
            weights = rng.standard_normal(
                (conv.num_filters, conv.input_feature_maps, conv.filter_size, conv.filter_size)
            ) * math.sqrt(2.0 / fan_in)
            bias = rng.standard_normal(conv.num_filters) * 0.01
            return (weights.astype(np.float32), bias.astype(np.float32))
        if layer.kind == LayerKind.FULLY_CONNECTED:
            inputs = layer.input_bytes // FLOAT_BYTES
            outputs = layer.output_bytes // FLOAT_BYTES
            weights = rng.standard_normal((outputs, inputs)) * math.sqrt(2.0 / max(inputs, 1))
            bias = rng.standard_normal(outputs) * 0.01
            return (weights.astype(np.float32), bias.astype(np.float32))
        if layer.kind == LayerKind.DROPOUT:
            return (dropout_mask(rng, layer.input_bytes // FLOAT_BYTES),)
        return ()

    def input_shape(self) -> Tuple[int, ...]:
        """Tensor shape of the model input: (C, H, W) when the first layer is a conv."""
        elements = self.model.input_bytes // FLOAT_BYTES
        first = self.model.chain(1)[0]
        if first.kind == LayerKind.CONVOLUTION:
            channels = first.conv_params.input_feature_maps
            side = _square_side(elements, channels, first)
            return (channels, side, side)
        return (elements,)

    def make_input(self, seed: Optional[int] = None) -> np.ndarray:
        """Synthetic model input in [0, 1)."""
        rng = np.random.default_rng(self.seed if seed is None else seed)
        return rng.random(self.input_shape()).astype(np.float32)

    def run_layer(self, layer: LayerSpec, x: np.ndarray) -> np.ndarray:
        """
        Execute one layer.

        Raises:
            KernelShapeException: If the tensor does not match the layer's declared sizes
        """
        if x.size * FLOAT_BYTES != layer.input_bytes:
            raise KernelShapeException(
                layer.name, f"received {x.size * FLOAT_BYTES} bytes, layer expects {layer.input_bytes}"
            )
        params = self._params[layer.name]

        if layer.kind == LayerKind.CONVOLUTION:
            conv = layer.conv_params
            if x.ndim != 3:
                raise KernelShapeException(layer.name, f"conv needs a (C,H,W) tensor, got shape {x.shape}")
            out_side = _square_side(layer.output_bytes // FLOAT_BYTES, conv.num_filters, layer)
            # Smallest symmetric padding reaching the declared output size
            total = (out_side - 1) * conv.stride + conv.filter_size - x.shape[1]
            padding = max(0, (total + 1) // 2)
            out = conv2d(x, params[0], params[1], stride=conv.stride, padding=padding)
            return _as_float32(out[:, :out_side, :out_side])

        if layer.kind == LayerKind.POOLING:
            if x.ndim != 3:
                raise KernelShapeException(layer.name, f"pooling needs a (C,H,W) tensor, got shape {x.shape}")
            out_side = _square_side(layer.output_bytes // FLOAT_BYTES, x.shape[0], layer)
            if out_side == 0 or x.shape[1] % out_side:
                raise KernelShapeException(layer.name, f"cannot pool {x.shape[1]}x{x.shape[2]} down to {out_side}x{out_side}")
            return max_pool(x, x.shape[1] // out_side)

        if layer.kind == LayerKind.RELU:
            return relu(x)
        if layer.kind == LayerKind.LOCAL_RESPONSE_NORMALIZATION:
            return local_response_norm(x)
        if layer.kind == LayerKind.DROPOUT:
            return dropout(x, params[0].reshape(x.shape))
        return dense(x, params[0], params[1])

    def run_segment(self, layers: Iterable[LayerSpec], x: np.ndarray) -> np.ndarray:
        """Execute layers in order, feeding each output to the next."""
        for layer in layers:
            x = self.run_layer(layer, x)
        return x

    @staticmethod
    def classify(output: np.ndarray) -> Tuple[int, float]:
        """Class index and softmax confidence of a final-layer output."""
        logits = np.asarray(output, dtype=np.float64).reshape(-1)
        shifted = np.exp(logits - logits.max())
        probabilities = shifted / shifted.sum()
        index = int(np.argmax(probabilities))
        return index, float(probabilities[index])
