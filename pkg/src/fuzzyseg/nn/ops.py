"""Differentiable array operations.

Forward passes are plain numpy; each op wires a backward closure that routes
the output gradient to whichever inputs are tracked.  Convolutions go through
an im2col/matmul path so the inner loops run in BLAS.  Spatial ops assume the
even power-of-two geometry the data generator guarantees.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .. import losses
from ..errors import InvalidInputError, ShapeError
from .tensor import Tensor, grad_enabled


def _tracked(t: Tensor) -> bool:
    """True when gradients must flow into this tensor."""
    return t.requires_grad or bool(t._parents)


def _recording(*tensors: Tensor) -> bool:
    return grad_enabled() and any(_tracked(t) for t in tensors)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add shapes differ: {a.shape} vs {b.shape}")
    out_data = a.data + b.data
    if not _recording(a, b):
        return Tensor(out_data)

    def backward(gy):
        if _tracked(a):
            a.accumulate_grad(gy)
        if _tracked(b):
            b.accumulate_grad(gy)

    return Tensor(out_data, parents=(a, b), backward_fn=backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul shapes differ: {a.shape} vs {b.shape}")
    out_data = a.data * b.data
    if not _recording(a, b):
        return Tensor(out_data)

    def backward(gy):
        if _tracked(a):
            a.accumulate_grad(gy * b.data)
        if _tracked(b):
            b.accumulate_grad(gy * a.data)

    return Tensor(out_data, parents=(a, b), backward_fn=backward)


def scale(x: Tensor, factor: float) -> Tensor:
    out_data = x.data * factor
    if not _recording(x):
        return Tensor(out_data)

    def backward(gy):
        x.accumulate_grad(gy * factor)

    return Tensor(out_data, parents=(x,), backward_fn=backward)


def sum_all(x: Tensor) -> Tensor:
    out_data = x.data.sum()
    if not _recording(x):
        return Tensor(out_data)

    def backward(gy):
        x.accumulate_grad(np.broadcast_to(gy, x.shape).astype(x.dtype, copy=False))

    return Tensor(np.asarray(out_data), parents=(x,), backward_fn=backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out_data = np.where(mask, x.data, x.data.dtype.type(0))
    if not _recording(x):
        return Tensor(out_data)

    def backward(gy):
        x.accumulate_grad(gy * mask)

    return Tensor(out_data, parents=(x,), backward_fn=backward)


def _pad_amount(kernel: int, padding: str) -> int:
    if padding == "same":
        if kernel % 2 == 0:
            raise InvalidInputError("same-padding needs an odd kernel size")
        return (kernel - 1) // 2
    if padding == "valid":
        return 0
    raise InvalidInputError(f"padding must be 'same' or 'valid', got {padding!r}")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, padding: str = "same") -> Tensor:
    """Cross-correlation of NCHW input with an (out, in, kh, kw) kernel."""
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError("conv2d expects a 4-D input and 4-D weight")
    batch, in_ch, height, width = x.shape
    out_ch, w_in, kh, kw = weight.shape
    if w_in != in_ch:
        raise ShapeError(f"conv2d channel mismatch: input has {in_ch}, weight expects {w_in}")
    pad = _pad_amount(kh, padding)
    if height + 2 * pad < kh or width + 2 * pad < kw:
        raise ShapeError(f"spatial dims {height}x{width} too small for {kh}x{kw} kernel")

    if pad:
        xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    else:
        xp = x.data
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # (B, C, Ho, Wo, kh, kw)
    out_h, out_w = windows.shape[2], windows.shape[3]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(batch * out_h * out_w, in_ch * kh * kw)
    w_mat = weight.data.reshape(out_ch, in_ch * kh * kw)
    out = (cols @ w_mat.T).reshape(batch, out_h, out_w, out_ch).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    if not _recording(*inputs):
        return Tensor(out)

    def backward(gy):
        gy_mat = gy.transpose(0, 2, 3, 1).reshape(batch * out_h * out_w, out_ch)
        if _tracked(weight):
            weight.accumulate_grad((gy_mat.T @ cols).reshape(weight.shape))
        if bias is not None and _tracked(bias):
            bias.accumulate_grad(gy.sum(axis=(0, 2, 3)))
        if _tracked(x):
            dcols = (gy_mat @ w_mat).reshape(batch, out_h, out_w, in_ch, kh, kw)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + out_h, j:j + out_w] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            if pad:
                x.accumulate_grad(dxp[:, :, pad:-pad, pad:-pad])
            else:
                x.accumulate_grad(dxp)

    return Tensor(out, parents=inputs, backward_fn=backward)


def conv_transpose2x2(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Stride-2 transposed convolution with a 2x2 kernel; doubles H and W.

    ``weight`` has shape (in_ch, out_ch, 2, 2).
    """
    if x.data.ndim != 4 or weight.data.ndim != 4 or weight.shape[2:] != (2, 2):
        raise ShapeError("conv_transpose2x2 expects 4-D input and an (in, out, 2, 2) weight")
    batch, in_ch, height, width = x.shape
    if weight.shape[0] != in_ch:
        raise ShapeError(
            f"conv_transpose2x2 channel mismatch: input has {in_ch}, weight expects {weight.shape[0]}"
        )
    out_ch = weight.shape[1]
    spread = np.einsum("bchw,coij->bohwij", x.data, weight.data, optimize=True)
    out = spread.transpose(0, 1, 2, 4, 3, 5).reshape(batch, out_ch, 2 * height, 2 * width)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    if not _recording(*inputs):
        return Tensor(out)

    def backward(gy):
        gy6 = gy.reshape(batch, out_ch, height, 2, width, 2).transpose(0, 1, 2, 4, 3, 5)
        if _tracked(weight):
            weight.accumulate_grad(np.einsum("bchw,bohwij->coij", x.data, gy6, optimize=True))
        if bias is not None and _tracked(bias):
            bias.accumulate_grad(gy.sum(axis=(0, 2, 3)))
        if _tracked(x):
            x.accumulate_grad(np.einsum("bohwij,coij->bchw", gy6, weight.data, optimize=True))

    return Tensor(out, parents=inputs, backward_fn=backward)


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; first occurrence wins ties."""
    batch, channels, height, width = x.shape
    if height % 2 or width % 2:
        raise ShapeError(f"maxpool2 needs even spatial dims, got {height}x{width}")
    h2, w2 = height // 2, width // 2
    windows = x.data.reshape(batch, channels, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5)
    windows = windows.reshape(batch, channels, h2, w2, 4)
    idx = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
    out = np.ascontiguousarray(out)
    if not _recording(x):
        return Tensor(out)

    def backward(gy):
        spread = np.zeros((batch, channels, h2, w2, 4), dtype=gy.dtype)
        np.put_along_axis(spread, idx[..., None], gy[..., None], axis=-1)
        dx = spread.reshape(batch, channels, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        x.accumulate_grad(dx.reshape(batch, channels, height, width))

    return Tensor(out, parents=(x,), backward_fn=backward)


def concat_channels(*tensors: Tensor) -> Tensor:
    """Concatenate NCHW tensors along the channel axis."""
    if len(tensors) < 2:
        raise InvalidInputError("concat_channels needs at least two tensors")
    first = tensors[0].shape
    for t in tensors[1:]:
        if t.data.ndim != 4 or t.shape[0] != first[0] or t.shape[2:] != first[2:]:
            raise ShapeError(f"concat_channels spatial/batch mismatch: {first} vs {t.shape}")
    out = np.concatenate([t.data for t in tensors], axis=1)
    if not _recording(*tensors):
        return Tensor(out)

    offsets = np.cumsum([0] + [t.shape[1] for t in tensors])

    def backward(gy):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if _tracked(t):
                t.accumulate_grad(gy[:, lo:hi])

    return Tensor(out, parents=tuple(tensors), backward_fn=backward)


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.9,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization of an NCHW tensor.

    Training uses batch statistics and folds them into the running buffers in
    place; eval normalizes with the running buffers only.
    """
    if x.data.ndim != 4:
        raise ShapeError("batchnorm expects a 4-D NCHW input")
    axes = (0, 2, 3)
    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mean
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    else:
        mean = running_mean.astype(x.dtype, copy=False)
        var = running_var.astype(x.dtype, copy=False)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma.data[None, :, None, None] * x_hat + beta.data[None, :, None, None]
    out = out.astype(x.dtype, copy=False)

    if not _recording(x, gamma, beta):
        return Tensor(out)

    def backward(gy):
        if _tracked(gamma):
            gamma.accumulate_grad((gy * x_hat).sum(axis=axes))
        if _tracked(beta):
            beta.accumulate_grad(gy.sum(axis=axes))
        if _tracked(x):
            g_hat = gy * gamma.data[None, :, None, None]
            if training:
                count = x.shape[0] * x.shape[2] * x.shape[3]
                term = (
                    g_hat
                    - g_hat.mean(axis=axes)[None, :, None, None]
                    - x_hat * (g_hat * x_hat).sum(axis=axes)[None, :, None, None] / count
                )
                x.accumulate_grad(term * inv_std[None, :, None, None])
            else:
                x.accumulate_grad(g_hat * inv_std[None, :, None, None])

    return Tensor(out, parents=(x, gamma, beta), backward_fn=backward)


def dropout(x: Tensor, rate: float, training: bool, rng) -> Tensor:
    """Zero a seeded random fraction of entries, scaling survivors by 1/(1-rate).

    Identity (and no RNG consumption) when not training or when rate is 0;
    ``rng`` may be an integer seed or a numpy Generator.
    """
    if not 0.0 <= rate < 1.0:
        raise InvalidInputError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        if not _recording(x):
            return Tensor(x.data)

        def backward_id(gy):
            x.accumulate_grad(gy)

        return Tensor(x.data, parents=(x,), backward_fn=backward_id)

    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    keep = rng.random(x.shape) >= rate
    factor = x.data.dtype.type(1.0 / (1.0 - rate))
    mask = keep.astype(x.dtype) * factor
    out = x.data * mask
    if not _recording(x):
        return Tensor(out)

    def backward(gy):
        x.accumulate_grad(gy * mask)

    return Tensor(out, parents=(x,), backward_fn=backward)


def softmax_channels(x: np.ndarray) -> np.ndarray:
    """Softmax over the channel axis of an NCHW array (inference helper)."""
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _flatten_fields(a: np.ndarray) -> np.ndarray:
    """NCHW -> (classes, batch*H*W) with columns in (batch, row, col) order."""
    return a.transpose(1, 0, 2, 3).reshape(a.shape[1], -1)


def segmentation_loss(
    logits: Tensor,
    onehot: np.ndarray,
    cfg: losses.LossConfig,
    fcm_memberships: np.ndarray | None = None,
) -> Tensor:
    """Scalar training loss over an NCHW logits tensor.

    Fuses softmax with the configured objective; the backward closure applies
    the matching analytic logit gradient.  ``fcm_memberships`` may be an NCHW
    map matching the logits or an already flattened (classes, batch*H*W)
    matrix.
    """
    if logits.data.ndim != 4 or onehot.shape != logits.shape:
        raise ShapeError(
            f"logits {logits.shape} and one-hot labels {onehot.shape} must share an NCHW shape"
        )
    z2 = _flatten_fields(logits.data)
    y2 = _flatten_fields(onehot)
    if fcm_memberships is not None:
        fcm_memberships = np.asarray(fcm_memberships)
        if fcm_memberships.ndim == 4:
            if fcm_memberships.shape != logits.shape:
                raise ShapeError(
                    f"membership map {fcm_memberships.shape} does not match "
                    f"logits {logits.shape}"
                )
            fcm_memberships = _flatten_fields(fcm_memberships)
    p2 = losses.softmax(z2)
    if cfg.kind == losses.CCE:
        value = losses.cce(y2, p2, cfg.epsilon)
    elif cfg.kind == losses.FCCE:
        value = losses.fcce(y2, p2, fcm_memberships, cfg)
    else:
        value = losses.deep_supervision_loss(y2, p2, cfg.epsilon)
    out = Tensor(np.asarray(value))
    if not _recording(logits):
        return out

    def backward(gy):
        if cfg.kind == losses.CCE:
            g2 = losses.cce_grad_logits(y2, p2)
        elif cfg.kind == losses.FCCE:
            g2 = losses.fcce_grad_logits(y2, p2, fcm_memberships, cfg)
        else:
            g2 = losses.deep_supervision_grad_logits(y2, p2, cfg.epsilon)
        batch, classes = logits.shape[0], logits.shape[1]
        g4 = g2.reshape(classes, batch, logits.shape[2], logits.shape[3]).transpose(1, 0, 2, 3)
        logits.accumulate_grad((g4 * gy).astype(logits.dtype, copy=False))

    out._parents = (logits,)
    out._backward = backward
    return out
