"""Differentiable operations: convolutions, normalization, activations,
spectrogram analysis/synthesis and 2x resampling.

Convolutions are cross-correlations (the deep-learning convention). 2D
kernels run as a kn2row GEMM over (channels x kernel-height) on
full-width row gathers followed by a kernel-width shift-add, chunked
over output rows to bound buffer sizes; 1D kernels use classic im2col.
Input gradients decompose into per-phase stride-1 correlations with
kernel-tap subsets (no dilated zero-stuffing); weight gradients redo the
gather in backward, so nothing is cached across the graph.
"""
from __future__ import annotations

import numpy as np

from ..dsp import _HALFBAND_DELAY, _HB_TAPS, StftConfig, make_window
from .tensor import Tensor, make_op

_COLS_BUDGET = 1 << 24  # floats per im2col chunk (64 MiB at float32)


def _pair(v):
    return (v, v) if isinstance(v, int) else tuple(v)


def half_padding(kernel, stride):
    """floor((k - s)/2) per axis: output dims = ceil(in/stride)."""
    return tuple((k - s) // 2 for k, s in zip(_pair(kernel), _pair(stride)))


# ---------------------------------------------------------------------------
# Correlation core (arrays, not tensors)
# ---------------------------------------------------------------------------

def _pad_hw(x, ph, pw):
    """Zero-pad the two trailing axes (slice assignment beats np.pad here)."""
    if not (ph or pw):
        return x
    N, C, H, W = x.shape
    xp = np.zeros((N, C, H + 2 * ph, W + 2 * pw), dtype=x.dtype)
    xp[:, :, ph : ph + H, pw : pw + W] = x
    return xp


def _cols_block(xp_n, C, KH, KW, oh0, oh1, OW, sh, sw):
    """Channels-major im2col: [C*KH*KW, rows*OW] with long contiguous runs."""
    sC, sH, sW = xp_n.strides
    block = np.lib.stride_tricks.as_strided(
        xp_n[:, oh0 * sh :],
        shape=(C, KH, KW, oh1 - oh0, OW),
        strides=(sC, sH, sW, sh * sH, sw * sW),
    )
    return block.reshape(C * KH * KW, (oh1 - oh0) * OW)


def _rows_block(xp_n, C, KH, oh0, oh1, Wp, sh):
    """kn2row gather: [C*KH, rows*Wp] of full padded-width rows (the copy
    runs are whole rows, close to memcpy speed)."""
    sC, sH, sW = xp_n.strides
    block = np.lib.stride_tricks.as_strided(
        xp_n[:, oh0 * sh :],
        shape=(C, KH, oh1 - oh0, Wp),
        strides=(sC, sH, sh * sH, sW),
    )
    return block.reshape(C * KH, (oh1 - oh0) * Wp)


def _corr_fwd(x, w, stride, pad, groups):
    """x [N,C,H,W] (+) w [OC,Cg,KH,KW] -> [N,OC,OH,OW], zero padding.

    2D kernels run as one GEMM over (C*KH) on full-width row gathers
    followed by a KW-tap shifted accumulation; 1D kernels (KH == 1) use
    classic im2col, whose gather runs are already along the only axis.
    """
    N, C, H, W = x.shape
    OC, Cg, KH, KW = w.shape
    sh, sw = stride
    xp = _pad_hw(x, pad[0], pad[1])
    Hp, Wp = xp.shape[2], xp.shape[3]
    OH = (Hp - KH) // sh + 1
    OW = (Wp - KW) // sw + 1
    OCg = OC // groups
    out = np.empty((N, OC, OH, OW), dtype=x.dtype)

    if KH == 1 and KW > 1:
        ckk = Cg * KH * KW
        wm = w.reshape(groups, OCg, ckk)
        rows = max(1, _COLS_BUDGET // max(1, OW * C * KH * KW))
        for n in range(N):
            for oh0 in range(0, OH, rows):
                oh1 = min(OH, oh0 + rows)
                cols = _cols_block(xp[n], C, KH, KW, oh0, oh1, OW, sh, sw)
                cols = cols.reshape(groups, ckk, -1)
                for g in range(groups):
                    out[n, g * OCg : (g + 1) * OCg, oh0:oh1, :] = (
                        wm[g] @ cols[g]
                    ).reshape(OCg, oh1 - oh0, OW)
        return out

    # w2[(ocg, kw), (cg, kh)] per group
    w2 = np.ascontiguousarray(w.transpose(0, 3, 1, 2)).reshape(
        groups, OCg * KW, Cg * KH
    )
    rows = max(1, _COLS_BUDGET // max(1, Wp * C * KH))
    for n in range(N):
        for oh0 in range(0, OH, rows):
            oh1 = min(OH, oh0 + rows)
            nr = oh1 - oh0
            gathered = _rows_block(xp[n], C, KH, oh0, oh1, Wp, sh)
            gathered = gathered.reshape(groups, Cg * KH, nr * Wp)
            for g in range(groups):
                mid = (w2[g] @ gathered[g]).reshape(OCg, KW, nr, Wp)
                tgt = out[n, g * OCg : (g + 1) * OCg, oh0:oh1, :]
                np.copyto(tgt, mid[:, 0, :, 0 : sw * OW : sw])
                for kw in range(1, KW):
                    tgt += mid[:, kw, :, kw : kw + sw * OW : sw]
    return out


def _corr_grad_w(x, gout, stride, pad, groups, w_shape):
    """Weight gradient of _corr_fwd: gather x rows against gout."""
    N, C, H, W = x.shape
    OC, Cg, KH, KW = w_shape
    sh, sw = stride
    xp = _pad_hw(x, pad[0], pad[1])
    Hp, Wp = xp.shape[2], xp.shape[3]
    OH, OW = gout.shape[2], gout.shape[3]
    OCg = OC // groups

    if KH == 1 and KW > 1:
        ckk = Cg * KH * KW
        gw = np.zeros((groups, OCg, ckk), dtype=x.dtype)
        rows = max(1, _COLS_BUDGET // max(1, OW * C * KH * KW))
        for n in range(N):
            for oh0 in range(0, OH, rows):
                oh1 = min(OH, oh0 + rows)
                cols = _cols_block(xp[n], C, KH, KW, oh0, oh1, OW, sh, sw)
                cols = cols.reshape(groups, ckk, -1)
                gblock = gout[n, :, oh0:oh1, :].reshape(OC, -1)
                for g in range(groups):
                    gw[g] += gblock[g * OCg : (g + 1) * OCg] @ cols[g].T
        return gw.reshape(OC, Cg, KH, KW)

    gw2 = np.zeros((groups, OCg * KW, Cg * KH), dtype=x.dtype)
    rows = max(1, _COLS_BUDGET // max(1, Wp * C * KH))
    for n in range(N):
        for oh0 in range(0, OH, rows):
            oh1 = min(OH, oh0 + rows)
            nr = oh1 - oh0
            gathered = _rows_block(xp[n], C, KH, oh0, oh1, Wp, sh)
            gathered = gathered.reshape(groups, Cg * KH, nr * Wp)
            gmid = np.zeros((OC, KW, nr, Wp), dtype=x.dtype)
            for kw in range(KW):
                gmid[:, kw, :, kw : kw + sw * OW : sw] = gout[n, :, oh0:oh1, :]
            gmid = gmid.reshape(groups, OCg * KW, nr * Wp)
            for g in range(groups):
                gw2[g] += gmid[g] @ gathered[g].T
    # undo the [(ocg, kw), (cg, kh)] layout
    gw = gw2.reshape(groups, OCg, KW, Cg, KH).transpose(0, 1, 3, 4, 2)
    return np.ascontiguousarray(gw).reshape(OC, Cg, KH, KW)


def _flip_swap(w, groups):
    """[OC,Cg,KH,KW] -> [C, OCg, KH, KW]: transpose-correlation weights."""
    OC, Cg, KH, KW = w.shape
    OCg = OC // groups
    blocks = w.reshape(groups, OCg, Cg, KH, KW).transpose(0, 2, 1, 3, 4)
    return np.ascontiguousarray(blocks.reshape(groups * Cg, OCg, KH, KW)[..., ::-1, ::-1])


def _dilate(g, stride):
    sh, sw = stride
    if sh == 1 and sw == 1:
        return g
    N, C, OH, OW = g.shape
    out = np.zeros((N, C, (OH - 1) * sh + 1, (OW - 1) * sw + 1), dtype=g.dtype)
    out[:, :, ::sh, ::sw] = g
    return out


def _pad_slice(x, lo_h, hi_h, lo_w, hi_w):
    """x[:, :, lo_h:hi_h, lo_w:hi_w] with zero extension beyond the bounds."""
    N, C, H, W = x.shape
    out = np.zeros((N, C, hi_h - lo_h, hi_w - lo_w), dtype=x.dtype)
    ch0, ch1 = max(0, lo_h), min(H, hi_h)
    cw0, cw1 = max(0, lo_w), min(W, hi_w)
    if ch0 < ch1 and cw0 < cw1:
        out[:, :, ch0 - lo_h : ch1 - lo_h, cw0 - lo_w : cw1 - lo_w] = \
            x[:, :, ch0:ch1, cw0:cw1]
    return out


def _corr_grad_x(gout, w, stride, pad, groups, x_shape):
    """Input gradient (adjoint) of _corr_fwd, phase-decomposed.

    Instead of correlating a stride-dilated gradient (mostly zeros, with
    the kernel-squared im2col blow-up), each input phase (i + pad) mod
    stride is an ordinary stride-1 correlation of gout with the matching
    kernel-tap subset, interleaved back into place.
    """
    N, C, H, W = x_shape
    OC, Cg, KH, KW = w.shape
    sh, sw = stride
    ph, pw = pad
    OH, OW = gout.shape[2], gout.shape[3]
    gx = np.zeros(x_shape, dtype=gout.dtype)
    for phase_h in range(sh):
        if phase_h >= KH:
            continue  # no kernel tap reaches these rows
        vh = (KH - phase_h + sh - 1) // sh
        r0h = (phase_h - ph) % sh
        th = len(range(r0h, H, sh))
        if th == 0:
            continue
        dh = (r0h + ph - phase_h) // sh - vh + 1
        for phase_w in range(sw):
            if phase_w >= KW:
                continue
            vw = (KW - phase_w + sw - 1) // sw
            r0w = (phase_w - pw) % sw
            tw = len(range(r0w, W, sw))
            if tw == 0:
                continue
            dw = (r0w + pw - phase_w) // sw - vw + 1
            wsub = np.ascontiguousarray(w[:, :, phase_h::sh, phase_w::sw])
            wr = _flip_swap(wsub, groups)
            gpad = _pad_slice(gout, dh, dh + th + vh - 1, dw, dw + tw + vw - 1)
            sub = _corr_fwd(gpad, wr, (1, 1), (0, 0), groups)
            gx[:, :, r0h::sh, r0w::sw] = sub
    return gx


def _check_channels(x_channels, w, groups, op):
    OC, Cg, KH, KW = w.shape
    if x_channels != Cg * groups:
        raise ValueError(
            f"{op}: channel axis mismatch: input has {x_channels} channels, "
            f"weights expect {Cg * groups} (groups={groups})"
        )
    if OC % groups:
        raise ValueError(f"{op}: output channels {OC} not divisible by groups {groups}")


# ---------------------------------------------------------------------------
# Convolution tape ops
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None,
           stride=(1, 1), padding="half", groups: int = 1) -> Tensor:
    """Strided 2D cross-correlation over [N,C,H,W] with optional bias."""
    stride = _pair(stride)
    pad = half_padding(w.shape[2:], stride) if padding == "half" else _pair(padding)
    _check_channels(x.shape[1], w.data, groups, "conv2d")
    out = _corr_fwd(x.data, w.data, stride, pad, groups)
    if b is not None:
        if b.shape != (w.shape[0],):
            raise ValueError(
                f"conv2d: bias axis mismatch: {b.shape} vs out channels {w.shape[0]}"
            )
        out += b.data[:, None, None]

    parents = (x, w) if b is None else (x, w, b)

    def backward(g, x=x, w=w, b=b, stride=stride, pad=pad, groups=groups):
        if x.requires_grad:
            x._accumulate(_corr_grad_x(g, w.data, stride, pad, groups, x.data.shape))
        if w.requires_grad:
            w._accumulate(_corr_grad_w(x.data, g, stride, pad, groups, w.data.shape))
        if b is not None and b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2, 3)))

    return make_op(out, parents, backward)


def _transpose_out_size(in_size, kernel, stride, pad, output_size):
    """Spatial dims of the transposed conv; validates a requested size."""
    natural = tuple(
        (i - 1) * s + k - 2 * p for i, k, s, p in zip(in_size, kernel, stride, pad)
    )
    if output_size is None:
        return natural
    output_size = tuple(output_size)
    for o, i, k, s, p in zip(output_size, in_size, kernel, stride, pad):
        if (o + 2 * p - k) // s + 1 != i or o + 2 * p < k:
            raise ValueError(
                f"conv transpose: output size {output_size} inconsistent with "
                f"input {in_size}, kernel {kernel}, stride {stride}, pad {pad}"
            )
    return output_size


def conv2d_transpose(x: Tensor, w: Tensor, b: Tensor | None = None,
                     stride=(1, 1), padding="half", groups: int = 1,
                     output_size=None) -> Tensor:
    """Adjoint of conv2d with the same weights: [N,OC,·] -> [N,C,·].

    w keeps the conv layout [OC, C/groups, KH, KW]; with "half" padding and
    kernel a multiple of stride, output spatial dims are input dims x stride.
    output_size pins the exact spatial dims when the matching forward conv
    dropped trailing rows (sizes that don't divide the stride).
    """
    stride = _pair(stride)
    pad = half_padding(w.shape[2:], stride) if padding == "half" else _pair(padding)
    OC, Cg, KH, KW = w.shape
    if x.shape[1] != OC:
        raise ValueError(
            f"conv2d_transpose: channel axis mismatch: input has {x.shape[1]} "
            f"channels, weights expect {OC}"
        )
    oh, ow = _transpose_out_size(x.shape[2:], (KH, KW), stride, pad, output_size)
    out_shape = (x.shape[0], Cg * groups, oh, ow)
    out = _corr_grad_x(x.data, w.data, stride, pad, groups, out_shape)
    if b is not None:
        if b.shape != (Cg * groups,):
            raise ValueError(
                f"conv2d_transpose: bias axis mismatch: {b.shape} vs "
                f"out channels {Cg * groups}"
            )
        out += b.data[:, None, None]

    parents = (x, w) if b is None else (x, w, b)

    def backward(g, x=x, w=w, b=b, stride=stride, pad=pad, groups=groups):
        if x.requires_grad:
            x._accumulate(_corr_fwd(g, w.data, stride, pad, groups))
        if w.requires_grad:
            # <convT(x; w), g> = <x, conv(g; w)>: reuse conv's weight grad
            # with input g and output gradient x.
            w._accumulate(_corr_grad_w(g, x.data, stride, pad, groups, w.data.shape))
        if b is not None and b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2, 3)))

    return make_op(out, parents, backward)


def _as_2d(t: Tensor) -> np.ndarray:
    return t.data[:, :, None, :]


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None,
           stride: int = 1, padding="half", groups: int = 1) -> Tensor:
    """1D cross-correlation over [N,C,L]; supports grouped filters."""
    s = (1, int(stride))
    k = int(w.shape[2])
    pad = (0, half_padding((1, k), s)[1]) if padding == "half" else (0, int(padding))
    _check_channels(x.shape[1], w.data[:, :, None, :], groups, "conv1d")
    out = _corr_fwd(_as_2d(x), w.data[:, :, None, :], s, pad, groups)[:, :, 0, :]
    if b is not None:
        out += b.data[:, None]

    parents = (x, w) if b is None else (x, w, b)

    def backward(g, x=x, w=w, b=b, s=s, pad=pad, groups=groups):
        g4 = g[:, :, None, :]
        if x.requires_grad:
            gx = _corr_grad_x(g4, w.data[:, :, None, :], s, pad, groups,
                              _as_2d(x).shape)
            x._accumulate(gx[:, :, 0, :])
        if w.requires_grad:
            gw = _corr_grad_w(_as_2d(x), g4, s, pad, groups,
                              w.data[:, :, None, :].shape)
            w._accumulate(gw[:, :, 0, :])
        if b is not None and b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2)))

    return make_op(out, parents, backward)


def conv1d_transpose(x: Tensor, w: Tensor, b: Tensor | None = None,
                     stride: int = 1, padding="half", groups: int = 1,
                     output_size: int | None = None) -> Tensor:
    """Adjoint of conv1d with the same [OC, C/groups, K] weights."""
    s = (1, int(stride))
    k = int(w.shape[2])
    pad = (0, half_padding((1, k), s)[1]) if padding == "half" else (0, int(padding))
    w4 = w.data[:, :, None, :]
    OC, Cg, _, K = w4.shape
    if x.shape[1] != OC:
        raise ValueError(
            f"conv1d_transpose: channel axis mismatch: input has {x.shape[1]} "
            f"channels, weights expect {OC}"
        )
    req = None if output_size is None else (1, int(output_size))
    _, ol = _transpose_out_size((1, x.shape[2]), (1, K), s, pad, req)
    out_shape = (x.shape[0], Cg * groups, 1, ol)
    out = _corr_grad_x(x.data[:, :, None, :], w4, s, pad, groups, out_shape)[:, :, 0, :]
    if b is not None:
        out += b.data[:, None]

    parents = (x, w) if b is None else (x, w, b)

    def backward(g, x=x, w=w, b=b, s=s, pad=pad, groups=groups):
        g4 = g[:, :, None, :]
        if x.requires_grad:
            x._accumulate(_corr_fwd(g4, w.data[:, :, None, :], s, pad, groups)[:, :, 0, :])
        if w.requires_grad:
            gw = _corr_grad_w(g4, _as_2d(x), s, pad, groups, w.data[:, :, None, :].shape)
            w._accumulate(gw[:, :, 0, :])
        if b is not None and b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2)))

    return make_op(out, parents, backward)


# ---------------------------------------------------------------------------
# Up-sampling, normalization, activations
# ---------------------------------------------------------------------------

def nearest_upsample(x: Tensor, factors=(2, 2)) -> Tensor:
    """Replicate pixels along H and W; gradient sums over each replica block."""
    fh, fw = _pair(factors)
    out = np.repeat(np.repeat(x.data, fh, axis=2), fw, axis=3)

    def backward(g, x=x, fh=fh, fw=fw):
        N, C, H, W = x.data.shape
        x._accumulate(g.reshape(N, C, H, fh, W, fw).sum(axis=(3, 5)))

    return make_op(out, (x,), backward)


def weight_norm(gain: Tensor, direction: Tensor) -> Tensor:
    """w = gain * direction / ||direction||, per output channel (axis 0)."""
    v = direction.data
    axes = tuple(range(1, v.ndim))
    norm = np.sqrt((v * v).sum(axis=axes, keepdims=True))
    if np.any(norm == 0):
        raise ValueError("weight_norm: zero-norm direction tensor")
    gshape = (-1,) + (1,) * (v.ndim - 1)
    gcol = gain.data.reshape(gshape)
    vhat = v / norm
    out = gcol * vhat

    def backward(g, gain=gain, direction=direction, vhat=vhat, norm=norm,
                 gcol=gcol, axes=axes, gshape=gshape):
        dot = (g * vhat).sum(axis=axes, keepdims=True)
        if gain.requires_grad:
            gain._accumulate(dot.reshape(gain.data.shape))
        if direction.requires_grad:
            direction._accumulate((gcol / norm) * (g - dot * vhat))

    return make_op(out, (gain, direction), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Zero mean / unit variance over all non-batch axes, then a per-channel
    affine (gain and bias indexed by axis 1)."""
    xd = x.data
    axes = tuple(range(1, xd.ndim))
    bshape = (1, -1) + (1,) * (xd.ndim - 2)
    mu = xd.mean(axis=axes, keepdims=True)
    centered = xd - mu
    var = (centered * centered).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=xd.dtype))
    xhat = centered * inv
    out = xhat * gain.data.reshape(bshape) + bias.data.reshape(bshape)

    def backward(g, x=x, gain=gain, bias=bias, xhat=xhat, inv=inv,
                 axes=axes, bshape=bshape):
        sum_axes = (0,) + tuple(range(2, x.data.ndim))
        if bias.requires_grad:
            bias._accumulate(g.sum(axis=sum_axes))
        if gain.requires_grad:
            gain._accumulate((g * xhat).sum(axis=sum_axes))
        if x.requires_grad:
            dxhat = g * gain.data.reshape(bshape)
            m1 = dxhat.mean(axis=axes, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=axes, keepdims=True)
            x._accumulate(inv * (dxhat - m1 - xhat * m2))

    return make_op(out, (x, gain, bias), backward)


def elu(x: Tensor) -> Tensor:
    # max(x,0) + expm1(min(x,0)) == elu(x), and 1 + expm1(min(x,0)) is its
    # slope everywhere: branchless, one exp pass.
    ex = np.expm1(np.minimum(x.data, 0))
    out = np.maximum(x.data, 0) + ex

    def backward(g, x=x, ex=ex):
        x._accumulate(g * (1.0 + ex))

    return make_op(out.astype(x.data.dtype, copy=False), (x,), backward)


def leaky_relu(x: Tensor, alpha: float = 0.3) -> Tensor:
    pos = x.data >= 0
    out = np.where(pos, x.data, np.asarray(alpha, dtype=x.data.dtype) * x.data)

    def backward(g, x=x, pos=pos, alpha=alpha):
        slope = np.where(pos, np.ones(1, dtype=x.data.dtype),
                         np.asarray(alpha, dtype=x.data.dtype))
        x._accumulate(g * slope)

    return make_op(out, (x,), backward)


def relu(x: Tensor) -> Tensor:
    return leaky_relu(x, alpha=0.0)


# ---------------------------------------------------------------------------
# Shape plumbing
# ---------------------------------------------------------------------------

def concat_channels(parts: list[Tensor]) -> Tensor:
    out = np.concatenate([p.data for p in parts], axis=1)
    splits = np.cumsum([p.data.shape[1] for p in parts])[:-1]

    def backward(g, parts=tuple(parts), splits=splits):
        for p, piece in zip(parts, np.split(g, splits, axis=1)):
            p._accumulate(piece.copy())

    return make_op(out, tuple(parts), backward)


def pad_end_reflect(x: Tensor, pad_h: int, pad_w: int) -> Tensor:
    """Reflect-pad the bottom/right of [N,C,H,W]; gradient folds back."""
    if pad_h == 0 and pad_w == 0:
        out = x.data

        def backward0(g, x=x):
            x._accumulate(g)

        return make_op(out, (x,), backward0)
    H, W = x.data.shape[2], x.data.shape[3]
    if pad_h > H - 1 or pad_w > W - 1:
        raise ValueError("input too short: reflect padding exceeds size - 1")
    out = np.pad(x.data, ((0, 0), (0, 0), (0, pad_h), (0, pad_w)), mode="reflect")

    # np.pad handles the axes sequentially (H then W), so the adjoint folds
    # the W reflection on the already-H-folded gradient.
    def backward(g, x=x, H=H, W=W, pad_h=pad_h, pad_w=pad_w):
        gh = g[:, :, :H, :].copy()
        if pad_h:
            gh[:, :, H - 1 - pad_h : H - 1, :] += g[:, :, H + pad_h - 1 : H - 1 : -1, :]
        gx = gh[:, :, :, :W].copy()
        if pad_w:
            gx[:, :, :, W - 1 - pad_w : W - 1] += gh[:, :, :, W + pad_w - 1 : W - 1 : -1]
        x._accumulate(gx)

    return make_op(out, (x,), backward)


def crop2d(x: Tensor, h: int, w: int) -> Tensor:
    """Keep the top-left [.., :h, :w]; gradient zero-pads back."""
    out = np.ascontiguousarray(x.data[:, :, :h, :w])

    def backward(g, x=x, h=h, w=w):
        gx = np.zeros_like(x.data)
        gx[:, :, :h, :w] = g
        x._accumulate(gx)

    return make_op(out, (x,), backward)


def complex_modulus(z: Tensor) -> Tensor:
    """[N,2,F,B] real/imag image -> [N,1,F,B] modulus."""
    re, im = z.data[:, 0], z.data[:, 1]
    m = np.sqrt(re * re + im * im)
    out = m[:, None]

    def backward(g, z=z, re=re, im=im, m=m):
        gm = g[:, 0]
        safe = np.where(m > 0, m, 1.0)
        scale = np.where(m > 0, gm / safe, 0.0)
        z._accumulate(np.stack([scale * re, scale * im], axis=1))

    return make_op(out.astype(z.data.dtype, copy=False), (z,), backward)


def scale_by_unit_phase(r: Tensor, phase_source: np.ndarray) -> Tensor:
    """[N,1,F,B] magnitudes -> [N,2,F,B] complex image with the (detached)
    phase of phase_source; zero-modulus source bins use phase 0."""
    re, im = phase_source[:, 0], phase_source[:, 1]
    m = np.sqrt(re * re + im * im)
    safe = np.where(m > 0, m, 1.0)
    ure = np.where(m > 0, re / safe, 1.0).astype(r.data.dtype)
    uim = np.where(m > 0, im / safe, 0.0).astype(r.data.dtype)
    mag = r.data[:, 0]
    out = np.stack([mag * ure, mag * uim], axis=1)

    def backward(g, r=r, ure=ure, uim=uim):
        r._accumulate((g[:, 0] * ure + g[:, 1] * uim)[:, None])

    return make_op(out, (r,), backward)


def fit_length(x: Tensor, length: int) -> Tensor:
    """Crop or zero-pad [N, L] along time to exactly `length` samples."""
    n = x.data.shape[1]
    if n == length:
        out = x.data

        def backward_same(g, x=x):
            x._accumulate(g)

        return make_op(out, (x,), backward_same)
    if n > length:
        out = np.ascontiguousarray(x.data[:, :length])

        def backward_crop(g, x=x, n=n):
            gx = np.zeros_like(x.data)
            gx[:, : g.shape[1]] = g
            x._accumulate(gx)

        return make_op(out, (x,), backward_crop)
    out = np.pad(x.data, ((0, 0), (0, length - n)))

    def backward_pad(g, x=x, n=n):
        x._accumulate(g[:, :n].copy())

    return make_op(out, (x,), backward_pad)


# ---------------------------------------------------------------------------
# Differentiable STFT / inverse STFT (batched waveforms)
# ---------------------------------------------------------------------------

def _stft_geometry(n: int, cfg: StftConfig):
    wlen, hop = cfg.window_size, cfg.hop_size
    half = wlen // 2
    if n < half + 1:
        raise ValueError(f"input too short: {n} samples < window/2 + 1 = {half + 1}")
    tail = (-(n + 2 * half - wlen)) % hop
    padded = n + 2 * half + tail
    frames = (padded - wlen) // hop + 1
    return half, tail, padded, frames


def stft_tensor(x: Tensor, cfg: StftConfig) -> Tensor:
    """[N, L] -> [N, 2, frames, bins] real/imag image, reflect-padded by
    window/2 (the same framing the plain dsp stft applies)."""
    wlen, hop = cfg.window_size, cfg.hop_size
    n = x.data.shape[1]
    half, tail, padded, frames = _stft_geometry(n, cfg)
    win = make_window(cfg.window, wlen).astype(x.data.dtype)
    xp = np.pad(x.data, ((0, 0), (half, half)), mode="reflect")
    if tail:
        xp = np.pad(xp, ((0, 0), (0, tail)))
    N = x.data.shape[0]
    sN, sL = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp, shape=(N, frames, wlen), strides=(sN, hop * sL, sL)
    )
    z = np.fft.rfft(view * win, axis=2)
    out = np.stack([z.real, z.imag], axis=1).astype(x.data.dtype, copy=False)

    def backward(g, x=x, win=win, wlen=wlen, hop=hop, half=half,
                 padded=padded, frames=frames, n=n):
        gz = g[:, 0].astype(np.complex128) + 1j * g[:, 1]
        H = gz * 0.5
        H[:, :, 0] = gz[:, :, 0].real
        H[:, :, -1] = gz[:, :, -1].real
        gframes = wlen * np.fft.irfft(H, n=wlen, axis=2)
        gframes *= win
        gp = np.zeros((x.data.shape[0], padded))
        for f in range(frames):
            gp[:, f * hop : f * hop + wlen] += gframes[:, f]
        gx = gp[:, half : half + n].copy()
        # left reflect: padded[j] = x[half - j], j in [0, half)
        gx[:, 1 : half + 1] += gp[:, :half][:, ::-1]
        # right reflect: padded[half + n + j] = x[n - 2 - j], j in [0, half)
        right = gp[:, half + n : half + n + half]
        m = right.shape[1]
        if m:
            gx[:, n - 1 - m : n - 1] += right[:, ::-1]
        x._accumulate(gx.astype(x.data.dtype))

    return make_op(out, (x,), backward)


def istft_tensor(z: Tensor, cfg: StftConfig, out_len: int) -> Tensor:
    """[N, 2, frames, bins] -> [N, out_len]: least-squares overlap-add and
    crop of the window/2 framing pad (inverse of stft_tensor)."""
    wlen, hop = cfg.window_size, cfg.hop_size
    half = wlen // 2
    N, two, frames, bins = z.data.shape
    if two != 2 or bins != cfg.bins:
        raise ValueError(f"istft_tensor: expected [N,2,frames,{cfg.bins}], got {z.shape}")
    win = make_window(cfg.window, wlen)
    total = wlen + (frames - 1) * hop
    if total < half + out_len:
        raise ValueError("istft_tensor: spectrogram too short for requested length")
    wsum = np.zeros(total)
    wsq = win**2
    for f in range(frames):
        wsum[f * hop : f * hop + wlen] += wsq
    good = wsum > wsum.max() * 1e-10
    inv_wsum = np.zeros(total)
    inv_wsum[good] = 1.0 / wsum[good]

    zc = z.data[:, 0].astype(np.complex128) + 1j * z.data[:, 1]
    framed = np.fft.irfft(zc, n=wlen, axis=2) * win
    acc = np.zeros((N, total))
    for f in range(frames):
        acc[:, f * hop : f * hop + wlen] += framed[:, f]
    acc *= inv_wsum
    out = acc[:, half : half + out_len].astype(z.data.dtype)

    def backward(g, z=z, win=win, wlen=wlen, hop=hop, half=half,
                 frames=frames, total=total, inv_wsum=inv_wsum, out_len=out_len):
        u = np.zeros((g.shape[0], total))
        u[:, half : half + out_len] = g
        u *= inv_wsum
        uf = np.empty((g.shape[0], frames, wlen))
        for f in range(frames):
            uf[:, f] = u[:, f * hop : f * hop + wlen]
        uf *= win
        spec = np.fft.rfft(uf, axis=2) / wlen
        scale = np.full(spec.shape[-1], 2.0)
        scale[0] = 1.0
        scale[-1] = 1.0
        gre = spec.real * scale
        gim = spec.imag * scale
        gim[:, :, 0] = 0.0
        gim[:, :, -1] = 0.0
        z._accumulate(np.stack([gre, gim], axis=1).astype(z.data.dtype))

    return make_op(out, (z,), backward)


# ---------------------------------------------------------------------------
# Differentiable 2x resampling (fixed half-band taps)
# ---------------------------------------------------------------------------

def _filter_rows(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Centered zero-phase FIR along axis 1, zero padding (self-adjoint)."""
    out = np.empty_like(x)
    d = _HALFBAND_DELAY
    for i in range(x.shape[0]):
        out[i] = np.convolve(x[i], taps)[d : d + x.shape[1]]
    return out


def downsample2_tensor(x: Tensor) -> Tensor:
    """[N, L] -> [N, L//2]: half-band filter then decimate, matching
    dsp.downsample2 sample-for-sample."""
    n = x.data.shape[1]
    taps = _HB_TAPS.astype(np.float64)
    y = _filter_rows(x.data.astype(np.float64), taps)[:, ::2][:, : n // 2]
    out = y.astype(x.data.dtype)

    def backward(g, x=x, taps=taps, n=n):
        u = np.zeros((g.shape[0], n))
        u[:, : 2 * g.shape[1] : 2] = g
        x._accumulate(_filter_rows(u, taps).astype(x.data.dtype))

    return make_op(out, (x,), backward)


def upsample2_tensor(x: Tensor) -> Tensor:
    """[N, L] -> [N, 2L]: zero-stuff then interpolate, matching dsp.upsample2."""
    n = x.data.shape[1]
    taps = (2.0 * _HB_TAPS).astype(np.float64)
    z = np.zeros((x.data.shape[0], 2 * n))
    z[:, ::2] = x.data
    out = _filter_rows(z, taps).astype(x.data.dtype)

    def backward(g, x=x, taps=taps, n=n):
        gu = _filter_rows(g.astype(np.float64), taps)[:, ::2][:, :n]
        x._accumulate(gu.astype(x.data.dtype))

    return make_op(out, (x,), backward)
