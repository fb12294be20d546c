"""Network building blocks: BN -> ReLU -> conv composite layers, pooling,
transposed-convolution up-sampling.

Feature maps are 4-d tensors shaped (batch, channels, frames, bins).
Convolutions are stride-1 "same" with zero padding; even kernel dims pad
one extra zero at the trailing (high) side.  All ops here run through
`tensor.apply_op`, so they are differentiable when handed graph nodes.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DensesepError, ShapeMismatchError
from .tensor import apply_op, array_of, relu

__all__ = [
    "Conv2dParams",
    "BnState",
    "BatchNormParams",
    "CompositeLayerParams",
    "conv2d",
    "batch_norm",
    "composite_layer",
    "down_sample",
    "up_sample",
]


class Conv2dParams:
    """Kernel (out_ch, in_ch, kt, kf) + per-output-channel bias."""

    __slots__ = ("kernel", "bias")

    def __init__(self, kernel, bias):
        kshape = array_of(kernel).shape
        bshape = array_of(bias).shape
        if len(kshape) != 4 or min(kshape) < 1:
            raise ShapeMismatchError(f"conv kernel must be 4-d positive, got {kshape}")
        if bshape != (kshape[0],):
            raise ShapeMismatchError(f"conv bias {bshape} != (out_ch,)={kshape[0]}")
        self.kernel = kernel
        self.bias = bias

    @property
    def out_ch(self):
        return array_of(self.kernel).shape[0]

    @property
    def in_ch(self):
        return array_of(self.kernel).shape[1]

    @property
    def kt(self):
        return array_of(self.kernel).shape[2]

    @property
    def kf(self):
        return array_of(self.kernel).shape[3]


class BnState:
    """Mutable running statistics shared by all bindings of one BN layer."""

    __slots__ = ("mean", "var")

    def __init__(self, mean=None, var=None):
        if (mean is None) != (var is None):
            raise ValueError("running mean and var must be set together")
        if var is not None and np.any(np.asarray(var) < 0):
            raise ValueError("running variance must be non-negative")
        self.mean = None if mean is None else np.asarray(mean, dtype=np.float64)
        self.var = None if var is None else np.asarray(var, dtype=np.float64)

    @property
    def initialized(self) -> bool:
        return self.mean is not None

    def update(self, batch_mean, batch_var, momentum):
        if not self.initialized:
            self.mean = np.asarray(batch_mean, dtype=np.float64).copy()
            self.var = np.asarray(batch_var, dtype=np.float64).copy()
        else:
            self.mean = momentum * self.mean + (1.0 - momentum) * batch_mean
            self.var = momentum * self.var + (1.0 - momentum) * batch_var


class BatchNormParams:
    """Per-channel affine BN parameters plus shared running statistics.

    Variance is biased (divide by N) both for normalization and for the
    running update; `state` may start uninitialized, in which case eval
    mode is rejected until a train-mode pass or an explicit init.
    """

    __slots__ = ("gamma", "beta", "state", "momentum", "epsilon")

    def __init__(self, gamma, beta, state=None, momentum=0.9, epsilon=1e-5):
        gshape = array_of(gamma).shape
        bshape = array_of(beta).shape
        if len(gshape) != 1 or bshape != gshape:
            raise ShapeMismatchError(f"BN gamma {gshape} / beta {bshape} must match 1-d")
        if not 0.0 < momentum < 1.0:
            raise ValueError(f"BN momentum must lie in (0, 1), got {momentum}")
        if epsilon <= 0.0:
            raise ValueError(f"BN epsilon must be positive, got {epsilon}")
        self.gamma = gamma
        self.beta = beta
        self.state = state if state is not None else BnState()
        self.momentum = momentum
        self.epsilon = epsilon

    @property
    def channels(self):
        return array_of(self.gamma).shape[0]

    @property
    def running_mean(self):
        return self.state.mean

    @property
    def running_var(self):
        return self.state.var


class CompositeLayerParams:
    """BN over in_ch followed by a conv producing the growth-rate maps."""

    __slots__ = ("bn", "conv")

    def __init__(self, bn: BatchNormParams, conv: Conv2dParams):
        if bn.channels != conv.in_ch:
            raise ShapeMismatchError(
                f"BN channels {bn.channels} != conv in_ch {conv.in_ch}"
            )
        self.bn = bn
        self.conv = conv


def _check_feature_map(op, x):
    if x.ndim != 4:
        raise ShapeMismatchError(f"{op}: expected 4-d feature map, got shape {x.shape}")


def _same_pads(k):
    lo = (k - 1) // 2
    return lo, (k - 1) - lo  # extra zero at the trailing side for even k


def _im2col(xpad, kt, kf, frames, bins):
    win = sliding_window_view(xpad, (kt, kf), axis=(2, 3))  # (B,C,T,F,kt,kf)
    b, c = xpad.shape[:2]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b * frames * bins, c * kt * kf)


def conv2d(x, p: Conv2dParams):
    """Stride-1 "same" 2-d convolution with bias.

    Output spatial size equals input size for every kernel; channel
    count becomes p.out_ch.
    """
    xa = array_of(x)
    _check_feature_map("conv2d", xa)
    ka, ba = array_of(p.kernel), array_of(p.bias)
    batch, in_ch, frames, bins = xa.shape
    out_ch, k_in, kt, kf = ka.shape
    if in_ch != k_in:
        raise ShapeMismatchError(
            f"conv2d: input has {in_ch} channels but kernel expects {k_in}"
        )
    (tlo, thi), (flo, fhi) = _same_pads(kt), _same_pads(kf)
    xpad = np.pad(xa, ((0, 0), (0, 0), (tlo, thi), (flo, fhi)))
    cols = _im2col(xpad, kt, kf, frames, bins)
    out2 = cols @ ka.reshape(out_ch, -1).T
    out2 += ba
    out = np.ascontiguousarray(
        out2.reshape(batch, frames, bins, out_ch).transpose(0, 3, 1, 2)
    )

    ctx = (xpad, ka, (batch, in_ch, frames, bins, kt, kf, tlo, flo))

    def bwd(ctx, grad):
        xpad_, ka_, (b, c, t, f, kt_, kf_, tlo_, flo_) = ctx
        o = ka_.shape[0]
        g2 = grad.transpose(0, 2, 3, 1).reshape(b * t * f, o)
        dbias = grad.sum(axis=(0, 2, 3))
        cols_ = _im2col(xpad_, kt_, kf_, t, f)
        dkernel = (g2.T @ cols_).reshape(ka_.shape)
        dcols = (g2 @ ka_.reshape(o, -1)).reshape(b, t, f, c, kt_, kf_)
        dcols = dcols.transpose(0, 3, 1, 2, 4, 5)  # (B,C,T,F,kt,kf) view
        dxpad = np.zeros_like(xpad_)
        for u in range(kt_):
            for v in range(kf_):
                dxpad[:, :, u : u + t, v : v + f] += dcols[..., u, v]
        dx = np.ascontiguousarray(dxpad[:, :, tlo_ : tlo_ + t, flo_ : flo_ + f])
        return dx, dkernel, dbias

    return apply_op("conv2d", [x, p.kernel, p.bias], out, ctx, bwd)


def batch_norm(x, p: BatchNormParams, mode: str = "train"):
    """Per-channel batch normalization over (batch, frames, bins).

    Train mode normalizes by batch statistics and folds them into the
    running stats with p.momentum; eval mode uses the running stats.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"batch_norm mode must be 'train' or 'eval', got {mode!r}")
    xa = array_of(x)
    _check_feature_map("batch_norm", xa)
    ga, ba = array_of(p.gamma), array_of(p.beta)
    ch = xa.shape[1]
    if ch != ga.shape[0]:
        raise ShapeMismatchError(
            f"batch_norm: input has {ch} channels but params have {ga.shape[0]}"
        )
    if mode == "eval":
        if not p.state.initialized:
            raise DensesepError("batch_norm eval mode with uninitialized running stats")
        mean = p.state.mean.astype(xa.dtype)
        var = p.state.var.astype(xa.dtype)
    else:
        mean = xa.mean(axis=(0, 2, 3))
        var = xa.var(axis=(0, 2, 3))
        p.state.update(mean, var, p.momentum)
    inv_std = 1.0 / np.sqrt(var + xa.dtype.type(p.epsilon))
    xhat = (xa - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = ga[None, :, None, None] * xhat + ba[None, :, None, None]

    n = xa.shape[0] * xa.shape[2] * xa.shape[3]
    ctx = (xhat, inv_std, ga, mode, n)

    def bwd(ctx, grad):
        xhat_, inv_std_, ga_, mode_, n_ = ctx
        dgamma = (grad * xhat_).sum(axis=(0, 2, 3))
        dbeta = grad.sum(axis=(0, 2, 3))
        dxhat = grad * ga_[None, :, None, None]
        if mode_ == "eval":
            dx = dxhat * inv_std_[None, :, None, None]
        else:
            s1 = dxhat.sum(axis=(0, 2, 3), keepdims=True)
            s2 = (dxhat * xhat_).sum(axis=(0, 2, 3), keepdims=True)
            dx = (dxhat - s1 / n_ - xhat_ * (s2 / n_)) * inv_std_[None, :, None, None]
        return dx, dgamma, dbeta

    return apply_op("batch_norm", [x, p.gamma, p.beta], out, ctx, bwd)


def composite_layer(x, p: CompositeLayerParams, mode: str = "train"):
    """BN -> ReLU -> conv, emitting p.conv.out_ch maps at unchanged size."""
    return conv2d(relu(batch_norm(x, p.bn, mode)), p.conv)


def down_sample(x):
    """2x2 average pooling, stride 2; frames and bins must be even."""
    xa = array_of(x)
    _check_feature_map("down_sample", xa)
    b, c, t, f = xa.shape
    if t % 2 or f % 2:
        raise ShapeMismatchError(f"down_sample needs even frames/bins, got {t}x{f}")
    out = xa.reshape(b, c, t // 2, 2, f // 2, 2).mean(axis=(3, 5))

    def bwd(ctx, grad):
        b_, c_, t_, f_ = ctx
        g = np.broadcast_to(
            (grad * 0.25)[:, :, :, None, :, None], (b_, c_, t_ // 2, 2, f_ // 2, 2)
        )
        return (g.reshape(b_, c_, t_, f_).copy(),)

    return apply_op("avg_pool2", [x], out, (b, c, t, f), bwd)


def up_sample(x, p: Conv2dParams):
    """Transposed 2x2 convolution, stride 2: spatial dims exactly double."""
    xa = array_of(x)
    _check_feature_map("up_sample", xa)
    ka, ba = array_of(p.kernel), array_of(p.bias)
    out_ch, in_ch, kt, kf = ka.shape
    if (kt, kf) != (2, 2):
        raise ShapeMismatchError(f"up_sample kernel must be 2x2, got {kt}x{kf}")
    if xa.shape[1] != in_ch:
        raise ShapeMismatchError(
            f"up_sample: input has {xa.shape[1]} channels but kernel expects {in_ch}"
        )
    b, _, t, f = xa.shape
    tmp = np.tensordot(xa, ka, axes=([1], [1]))  # (B,T,F,O,2,2)
    out = np.ascontiguousarray(tmp.transpose(0, 3, 1, 4, 2, 5)).reshape(
        b, out_ch, 2 * t, 2 * f
    )
    out += ba[None, :, None, None]

    def bwd(ctx, grad):
        xa_, ka_ = ctx
        b_, _, t_, f_ = xa_.shape
        o = ka_.shape[0]
        gview = grad.reshape(b_, o, t_, 2, f_, 2)
        dx = np.tensordot(gview, ka_, axes=([1, 3, 5], [0, 2, 3]))  # (B,T,F,I)
        dx = np.ascontiguousarray(dx.transpose(0, 3, 1, 2))
        dk = np.tensordot(gview, xa_, axes=([0, 2, 4], [0, 2, 3]))  # (O,2,2,I)
        dk = np.ascontiguousarray(dk.transpose(0, 3, 1, 2))
        dbias = grad.sum(axis=(0, 2, 3))
        return dx, dk, dbias

    return apply_op("up_sample", [x, p.kernel, p.bias], out, (xa, ka), bwd)
