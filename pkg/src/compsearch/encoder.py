"""Spatial encoder: three 3x3 conv layers mapping the grid tensor to the
flattened, L2-normalized search embedding.

Layer stack (inference only, no training):

    conv 3x3 -> batchnorm -> relu -> maxpool 2/2
    conv 3x3 -> batchnorm -> relu -> maxpool 2/2
    conv 3x3 -> batchnorm -> relu

Spatial sizes run 31 -> 31 -> 15 -> 15 -> 7 via floor-division pooling, and
the default channel widths 384/512/832 make the output 832 x 7 x 7 = 40768
after flattening, matching the index-branch embedding width.

A "bypass" mode pools the input tensor straight to 7x7 and flattens it,
giving retrieval semantics that do not depend on any particular weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blobio import BlobFormatError, read_blob_file, require_shapes, write_blob_file
from .linalg import l2_norm
from .tensor import maxpool_to_grid

WEIGHTS_MAGIC = "CSETW001"
DEFAULT_CHANNELS = (384, 512, 832)
BN_EPSILON = 1e-5
BYPASS_GRID = 7


class EncoderError(ValueError):
    pass


@dataclass
class ConvLayer:
    kernels: np.ndarray  # (out_ch, in_ch, 3, 3) float32
    bias: np.ndarray  # (out_ch,) float32


@dataclass
class BatchNorm:
    scale: np.ndarray
    shift: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray


@dataclass
class EncoderWeights:
    in_channels: int
    layers: list[tuple[ConvLayer, BatchNorm]]

    def __post_init__(self):
        prev = self.in_channels
        for idx, (conv, bn) in enumerate(self.layers):
            out_ch, in_ch, kh, kw = conv.kernels.shape
            if (in_ch, kh, kw) != (prev, 3, 3):
                raise EncoderError(
                    f"layer {idx}: kernels {conv.kernels.shape} inconsistent with "
                    f"{prev} input channels and 3x3 kernel"
                )
            for name, arr in (
                ("bias", conv.bias),
                ("scale", bn.scale),
                ("shift", bn.shift),
                ("running_mean", bn.running_mean),
                ("running_var", bn.running_var),
            ):
                if arr.shape != (out_ch,):
                    raise EncoderError(f"layer {idx}: {name} shape {arr.shape} != ({out_ch},)")
            prev = out_ch

    @property
    def channel_widths(self) -> tuple[int, ...]:
        return tuple(conv.kernels.shape[0] for conv, _ in self.layers)

    @property
    def out_channels(self) -> int:
        return self.layers[-1][0].kernels.shape[0]


def conv2d(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Cross-correlation with 3x3 kernels, zero padding 1, stride 1.

    (in_ch, S, S) -> (out_ch, S, S). Accumulation happens in float32 GEMM
    with a fixed order per output element, so repeated runs agree bitwise.
    """
    if x.ndim != 3:
        raise EncoderError(f"expected (C, H, W) input, got shape {x.shape}")
    out_ch, in_ch, kh, kw = kernels.shape
    if (kh, kw) != (3, 3) or in_ch != x.shape[0]:
        raise EncoderError(
            f"kernel shape {kernels.shape} incompatible with input shape {x.shape}"
        )
    if bias.shape != (out_ch,):
        raise EncoderError(f"bias shape {bias.shape} != ({out_ch},)")
    _, h, w = x.shape
    padded = np.zeros((in_ch, h + 2, w + 2), dtype=np.float32)
    padded[:, 1:-1, 1:-1] = x
    windows = np.lib.stride_tricks.sliding_window_view(padded, (3, 3), axis=(1, 2))
    cols = windows.transpose(1, 2, 0, 3, 4).reshape(h * w, in_ch * 9)
    flat = kernels.reshape(out_ch, in_ch * 9).astype(np.float32)
    out = cols @ flat.T + bias.astype(np.float32)
    return out.T.reshape(out_ch, h, w)


def maxpool2(x: np.ndarray) -> np.ndarray:
    """2x2 max-pool with stride 2; odd trailing rows/columns are dropped."""
    c, h, w = x.shape
    hh, ww = h // 2, w // 2
    return x[:, : hh * 2, : ww * 2].reshape(c, hh, 2, ww, 2).max(axis=(2, 4))


def batchnorm(x: np.ndarray, bn: BatchNorm, eps: float = BN_EPSILON) -> np.ndarray:
    inv = (bn.scale / np.sqrt(bn.running_var + eps)).astype(np.float32)
    return x * inv[:, None, None] + (bn.shift - bn.running_mean * inv)[:, None, None]


def _normalize_flat(flat: np.ndarray) -> np.ndarray:
    if not np.isfinite(flat).all():
        raise EncoderError("non-finite values in encoder output")
    norm = l2_norm(flat)
    if norm < 1e-12:
        raise EncoderError("zero embedding: input tensor has no support")
    return (flat.astype(np.float64) / norm).astype(np.float32)


def encoder_forward(tensor: np.ndarray, weights: EncoderWeights) -> np.ndarray:
    """Full stack forward pass; returns the flat unit-norm embedding.

    Flattening is channel-major: element (c, i, j) lands at c*49 + i*7 + j.
    """
    if tensor.ndim != 3 or tensor.shape[0] != weights.in_channels:
        raise EncoderError(
            f"tensor shape {tensor.shape} incompatible with {weights.in_channels} input channels"
        )
    if not np.isfinite(tensor).all():
        raise EncoderError("non-finite values in input tensor")
    x = tensor.astype(np.float32, copy=False)
    for idx, (conv, bn) in enumerate(weights.layers):
        x = conv2d(x, conv.kernels, conv.bias)
        x = batchnorm(x, bn)
        np.maximum(x, 0.0, out=x)
        if idx < len(weights.layers) - 1:
            x = maxpool2(x)
    return _normalize_flat(x.ravel(order="C"))


def bypass_forward(tensor: np.ndarray, grid: int = BYPASS_GRID) -> np.ndarray:
    """Skip the conv stack: pool the tensor to grid x grid, flatten, normalize."""
    pooled = maxpool_to_grid(tensor.astype(np.float32, copy=False), grid)
    return _normalize_flat(pooled.ravel(order="C"))


def init_weights(
    seed: int,
    in_channels: int = 256,
    channels: tuple[int, ...] = DEFAULT_CHANNELS,
) -> EncoderWeights:
    """Seeded fan-in-scaled uniform kernels; identity batch-norm statistics."""
    if not channels or any(c < 1 for c in channels):
        raise EncoderError(f"invalid channel widths {channels}")
    rng = np.random.default_rng(seed)
    layers = []
    prev = in_channels
    for out_ch in channels:
        bound = float(np.sqrt(6.0 / (prev * 9)))
        kernels = rng.uniform(-bound, bound, size=(out_ch, prev, 3, 3)).astype(np.float32)
        conv = ConvLayer(kernels, np.zeros(out_ch, dtype=np.float32))
        bn = BatchNorm(
            scale=np.ones(out_ch, dtype=np.float32),
            shift=np.zeros(out_ch, dtype=np.float32),
            running_mean=np.zeros(out_ch, dtype=np.float32),
            running_var=np.ones(out_ch, dtype=np.float32),
        )
        layers.append((conv, bn))
        prev = out_ch
    return EncoderWeights(in_channels, layers)


_PARTS = ("kernels", "bias", "scale", "shift", "running_mean", "running_var")


def save_weights(weights: EncoderWeights, path) -> None:
    arrays = {}
    for idx, (conv, bn) in enumerate(weights.layers):
        arrays[f"layer{idx}.kernels"] = conv.kernels
        arrays[f"layer{idx}.bias"] = conv.bias
        arrays[f"layer{idx}.scale"] = bn.scale
        arrays[f"layer{idx}.shift"] = bn.shift
        arrays[f"layer{idx}.running_mean"] = bn.running_mean
        arrays[f"layer{idx}.running_var"] = bn.running_var
    header = {
        "kind": "encoder-weights",
        "in_channels": weights.in_channels,
        "channels": list(weights.channel_widths),
        "dtype": "f32le",
    }
    write_blob_file(path, WEIGHTS_MAGIC, header, arrays)


def load_weights(path) -> EncoderWeights:
    header, arrays = read_blob_file(path, WEIGHTS_MAGIC)
    if header.get("kind") != "encoder-weights":
        raise BlobFormatError(f"not an encoder weights file: kind={header.get('kind')!r}")
    in_channels = int(header["in_channels"])
    channels = [int(c) for c in header["channels"]]
    expected = []
    prev = in_channels
    for idx, out_ch in enumerate(channels):
        expected.append((f"layer{idx}.kernels", (out_ch, prev, 3, 3)))
        for part in _PARTS[1:]:
            expected.append((f"layer{idx}.{part}", (out_ch,)))
        prev = out_ch
    require_shapes(arrays, expected)
    layers = []
    for idx, out_ch in enumerate(channels):
        conv = ConvLayer(arrays[f"layer{idx}.kernels"], arrays[f"layer{idx}.bias"])
        bn = BatchNorm(
            arrays[f"layer{idx}.scale"],
            arrays[f"layer{idx}.shift"],
            arrays[f"layer{idx}.running_mean"],
            arrays[f"layer{idx}.running_var"],
        )
        layers.append((conv, bn))
    return EncoderWeights(in_channels, layers)
