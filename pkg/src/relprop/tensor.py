"""Dense numeric kernels for small feed-forward CNNs.

All kernels take and return float64 numpy arrays in row-major layout:
images are [H, W, C], convolution weights [C_out, C_in, kh, kw], dense
weights [out, in]. Every kernel is pure and allocates its result.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


def _check_finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise ShapeError(f"{what}: non-finite values present")
    return arr


def conv2d_forward(
    x: np.ndarray,
    weights: np.ndarray,
    bias: np.ndarray,
    stride: int = 1,
    pad: int = 0,
) -> np.ndarray:
    """Cross-correlate x [H,W,C] with weights [C_out,C,kh,kw], zero padding only.

    Output extent is floor((H + 2*pad - kh) / stride) + 1 per spatial axis.
    """
    if x.ndim != 3:
        raise ShapeError(f"conv2d: input must be [H,W,C], got shape {x.shape}")
    if weights.ndim != 4:
        raise ShapeError(f"conv2d: weights must be [out,in,kh,kw], got shape {weights.shape}")
    h, w, c = x.shape
    c_out, c_in, kh, kw = weights.shape
    if c_in != c:
        raise ShapeError(f"conv2d: input has {c} channels, weights expect {c_in}")
    if bias.shape != (c_out,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({c_out},)")
    if stride < 1 or pad < 0:
        raise ShapeError(f"conv2d: invalid stride={stride} pad={pad}")
    h_out = (h + 2 * pad - kh) // stride + 1
    w_out = (w + 2 * pad - kw) // stride + 1
    if h + 2 * pad < kh or w + 2 * pad < kw:
        raise ShapeError(
            f"conv2d: kernel {kh}x{kw} larger than padded input {h + 2 * pad}x{w + 2 * pad}"
        )
    padded = np.pad(x, ((pad, pad), (pad, pad), (0, 0))) if pad else x
    windows = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(0, 1))
    windows = windows[::stride, ::stride]
    out = np.einsum("xyckl,ockl->xyo", windows, weights, optimize=True) + bias
    assert out.shape == (h_out, w_out, c_out)
    return _check_finite(np.ascontiguousarray(out), "conv2d output")


def conv2d_transpose(
    grad: np.ndarray,
    weights: np.ndarray,
    input_shape: tuple[int, int, int],
    stride: int = 1,
    pad: int = 0,
) -> np.ndarray:
    """Adjoint of conv2d_forward with respect to its input (bias ignored).

    Maps a tensor shaped like the conv output back onto the input grid:
    result[n] = sum over output positions m of weights[n, m] * grad[m].
    """
    h, w, c = input_shape
    c_out, c_in, kh, kw = weights.shape
    if c_in != c:
        raise ShapeError(f"conv2d_transpose: input has {c} channels, weights expect {c_in}")
    h_out, w_out = grad.shape[0], grad.shape[1]
    if grad.shape != (h_out, w_out, c_out):
        raise ShapeError(f"conv2d_transpose: grad shape {grad.shape} != [H',W',{c_out}]")
    acc = np.zeros((h + 2 * pad, w + 2 * pad, c))
    for i in range(kh):
        for j in range(kw):
            contrib = np.einsum("xyo,oc->xyc", grad, weights[:, :, i, j])
            acc[i : i + stride * h_out : stride, j : j + stride * w_out : stride] += contrib
    return np.ascontiguousarray(acc[pad : pad + h, pad : pad + w])


@dataclass(frozen=True)
class PoolArgmax:
    """Winner positions of one max-pooling application.

    indices holds, for each output element, the flat row-major index of the
    winning element in the pool's input tensor.
    """

    input_shape: tuple[int, int, int]
    output_shape: tuple[int, int, int]
    indices: np.ndarray


def maxpool_forward(
    x: np.ndarray, kh: int, kw: int, stride: int
) -> tuple[np.ndarray, PoolArgmax]:
    """Max-pool x [H,W,C] with a kh x kw window. No padding; windows must tile exactly.

    Ties inside a window resolve to the lowest row-major input index.
    """
    if x.ndim != 3:
        raise ShapeError(f"maxpool: input must be [H,W,C], got shape {x.shape}")
    h, w, c = x.shape
    if kh < 1 or kw < 1 or stride < 1:
        raise ShapeError(f"maxpool: invalid window {kh}x{kw} stride={stride}")
    if h < kh or w < kw or (h - kh) % stride or (w - kw) % stride:
        raise ShapeError(
            f"maxpool: window {kh}x{kw} stride {stride} does not tile input {h}x{w}"
        )
    h_out = (h - kh) // stride + 1
    w_out = (w - kw) // stride + 1
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(0, 1))
    windows = windows[::stride, ::stride]  # [h_out, w_out, c, kh, kw]
    flat = windows.reshape(h_out, w_out, c, kh * kw)
    local = np.argmax(flat, axis=3)  # first max = lowest (row, col) in window
    out = np.take_along_axis(flat, local[..., None], axis=3)[..., 0]
    oy, ox = np.meshgrid(np.arange(h_out), np.arange(w_out), indexing="ij")
    rows = oy[..., None] * stride + local // kw
    cols = ox[..., None] * stride + local % kw
    chan = np.broadcast_to(np.arange(c), local.shape)
    indices = (rows * w + cols) * c + chan
    arg = PoolArgmax(
        input_shape=(h, w, c),
        output_shape=(h_out, w_out, c),
        indices=np.ascontiguousarray(indices),
    )
    return np.ascontiguousarray(out), arg


def dense_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Affine map weights [M,N] @ x [N] + bias [M]."""
    if x.ndim != 1:
        raise ShapeError(f"dense: input must be 1-D, got shape {x.shape}")
    if weights.ndim != 2 or weights.shape[1] != x.shape[0]:
        raise ShapeError(f"dense: weights {weights.shape} incompatible with input {x.shape}")
    if bias.shape != (weights.shape[0],):
        raise ShapeError(f"dense: bias shape {bias.shape} != ({weights.shape[0]},)")
    return _check_finite(weights @ x + bias, "dense output")


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def flatten(x: np.ndarray) -> np.ndarray:
    """Row-major flatten to 1-D."""
    return x.reshape(-1).copy()


def softmax(z: np.ndarray) -> np.ndarray:
    """Stable softmax of a 1-D logit vector (max subtracted before exponentiation)."""
    if z.ndim != 1:
        raise ShapeError(f"softmax: input must be 1-D, got shape {z.shape}")
    if z.size == 0:
        raise ShapeError("softmax: empty input")
    shifted = z - np.max(z)
    e = np.exp(shifted)
    return _check_finite(e / np.sum(e), "softmax output")
