"""Shared-weight recurrent scoring model with exact reverse-mode gradients.

Every view is run through the same bidirectional LSTM; each time-step's
spatiotemporal feature is the concatenation of its input feature and the two
recurrent states (D + 2H wide). Two shared heads map that to per-view
outputs: a feature head (affine, tanh, affine, L2-normalize) producing the
D'-dim vectors fed to the joint kernel, and a quality head (affine, tanh,
affine, logistic) producing the per-view selection confidence used both as
the classification output and as the kernel quality.

Because all weights are shared across views and the joint kernel pools over
views, the trainable parameter count depends only on (D, H, D') - never on
the number of views or time-steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dpp, multi_dpp
from .data_model import MultiViewSequence
from .errors import ConfigError, NumericError, ShapeError, ValidationError
from .multi_dpp import ViewStreams

PARAM_FIELDS = (
    "wx_f", "wh_f", "b_f",
    "wx_b", "wh_b", "b_b",
    "feat_w1", "feat_b1", "feat_w2", "feat_b2",
    "qual_w1", "qual_b1", "qual_w2", "qual_b2",
)


@dataclass(frozen=True)
class ModelParams:
    """All trainable weights. Both heads use a hidden layer of width H.

    LSTM gate blocks are ordered (input, forget, cell, output) along the 4H
    axis; ``_f``/``_b`` are the forward and reverse time directions.
    """

    input_dim: int
    hidden_size: int
    output_dim: int
    seed: int
    wx_f: np.ndarray
    wh_f: np.ndarray
    b_f: np.ndarray
    wx_b: np.ndarray
    wh_b: np.ndarray
    b_b: np.ndarray
    feat_w1: np.ndarray
    feat_b1: np.ndarray
    feat_w2: np.ndarray
    feat_b2: np.ndarray
    qual_w1: np.ndarray
    qual_b1: np.ndarray
    qual_w2: np.ndarray
    qual_b2: np.ndarray

    def __post_init__(self):
        d, h, dp = self.input_dim, self.hidden_size, self.output_dim
        s = d + 2 * h
        expected = {
            "wx_f": (4 * h, d), "wh_f": (4 * h, h), "b_f": (4 * h,),
            "wx_b": (4 * h, d), "wh_b": (4 * h, h), "b_b": (4 * h,),
            "feat_w1": (h, s), "feat_b1": (h,), "feat_w2": (dp, h), "feat_b2": (dp,),
            "qual_w1": (h, s), "qual_b1": (h,), "qual_w2": (1, h), "qual_b2": (1,),
        }
        for name in PARAM_FIELDS:
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != expected[name]:
                raise ShapeError(f"{name} has shape {arr.shape}, expected {expected[name]}")
            if not np.isfinite(arr).all():
                raise NumericError(f"{name} contains non-finite values")
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    def named_arrays(self):
        return [(name, getattr(self, name)) for name in PARAM_FIELDS]

    def count(self) -> int:
        return sum(arr.size for _, arr in self.named_arrays())


def param_count(input_dim: int, hidden_size: int, output_dim: int) -> int:
    """Closed-form trainable parameter count; independent of M and N."""
    d, h, dp = input_dim, hidden_size, output_dim
    s = d + 2 * h
    lstm = 2 * (4 * h * d + 4 * h * h + 4 * h)
    feature_head = h * s + h + dp * h + dp
    quality_head = h * s + h + 1 * h + 1
    return lstm + feature_head + quality_head


def init_params(
    input_dim: int, hidden_size: int = 128, output_dim: int = 128, seed: int = 0
) -> ModelParams:
    """Deterministic scaled-uniform initialization.

    Every tensor of an affine map is drawn from U(-1/sqrt(fan_in),
    1/sqrt(fan_in)) where fan_in is that map's input width (D + H for the
    LSTM gates; D + 2H and H for the two head layers).
    """
    if min(input_dim, hidden_size, output_dim) < 1:
        raise ConfigError(
            f"dimensions must be positive, got ({input_dim}, {hidden_size}, {output_dim})"
        )
    d, h, dp = input_dim, hidden_size, output_dim
    rng = np.random.default_rng(seed)

    def draw(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    s = d + 2 * h
    return ModelParams(
        input_dim=d, hidden_size=h, output_dim=dp, seed=seed,
        wx_f=draw((4 * h, d), d + h), wh_f=draw((4 * h, h), d + h), b_f=draw((4 * h,), d + h),
        wx_b=draw((4 * h, d), d + h), wh_b=draw((4 * h, h), d + h), b_b=draw((4 * h,), d + h),
        feat_w1=draw((h, s), s), feat_b1=draw((h,), s),
        feat_w2=draw((dp, h), h), feat_b2=draw((dp,), h),
        qual_w1=draw((h, s), s), qual_b1=draw((h,), s),
        qual_w2=draw((1, h), h), qual_b2=draw((1,), h),
    )


def to_vector(params: ModelParams) -> np.ndarray:
    return np.concatenate([arr.ravel() for _, arr in params.named_arrays()])


def from_vector(like: ModelParams, vec: np.ndarray) -> ModelParams:
    if vec.shape != (like.count(),):
        raise ShapeError(f"vector length {vec.shape} does not match {like.count()} params")
    values = {}
    offset = 0
    for name, arr in like.named_arrays():
        values[name] = vec[offset : offset + arr.size].reshape(arr.shape)
        offset += arr.size
    return ModelParams(
        input_dim=like.input_dim, hidden_size=like.hidden_size,
        output_dim=like.output_dim, seed=like.seed, **values,
    )


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _lstm_forward(x, wx, wh, b):
    """Run one direction over (M, N, D) inputs; views ride the batch axis."""
    m, n, _ = x.shape
    h_size = wh.shape[1]
    gates = np.empty((m, n, 4 * h_size))
    cells = np.empty((m, n, h_size))
    hidden = np.empty((m, n, h_size))
    h_prev = np.zeros((m, h_size))
    c_prev = np.zeros((m, h_size))
    for t in range(n):
        z = x[:, t] @ wx.T + h_prev @ wh.T + b
        i = _sigmoid(z[:, :h_size])
        f = _sigmoid(z[:, h_size : 2 * h_size])
        g = np.tanh(z[:, 2 * h_size : 3 * h_size])
        o = _sigmoid(z[:, 3 * h_size :])
        c_prev = f * c_prev + i * g
        h_prev = o * np.tanh(c_prev)
        gates[:, t] = np.concatenate([i, f, g, o], axis=1)
        cells[:, t] = c_prev
        hidden[:, t] = h_prev
    return {"x": x, "gates": gates, "cells": cells, "hidden": hidden}


def _lstm_backward(cache, wx, wh, grad_hidden):
    """Backprop one direction; returns (dwx, dwh, db)."""
    x, gates, cells = cache["x"], cache["gates"], cache["cells"]
    m, n, _ = x.shape
    h_size = wh.shape[1]
    dwx = np.zeros_like(wx)
    dwh = np.zeros_like(wh)
    db = np.zeros(4 * h_size)
    dh_next = np.zeros((m, h_size))
    dc_next = np.zeros((m, h_size))
    for t in range(n - 1, -1, -1):
        i = gates[:, t, :h_size]
        f = gates[:, t, h_size : 2 * h_size]
        g = gates[:, t, 2 * h_size : 3 * h_size]
        o = gates[:, t, 3 * h_size :]
        c = cells[:, t]
        c_prev = cells[:, t - 1] if t > 0 else np.zeros((m, h_size))
        h_prev = cache["hidden"][:, t - 1] if t > 0 else np.zeros((m, h_size))
        tanh_c = np.tanh(c)
        dh = grad_hidden[:, t] + dh_next
        do = dh * tanh_c
        dc = dh * o * (1.0 - tanh_c * tanh_c) + dc_next
        dz = np.concatenate(
            [
                dc * g * i * (1.0 - i),
                dc * c_prev * f * (1.0 - f),
                dc * i * (1.0 - g * g),
                do * o * (1.0 - o),
            ],
            axis=1,
        )
        dwx += dz.T @ x[:, t]
        dwh += dz.T @ h_prev
        db += dz.sum(axis=0)
        dh_next = dz @ wh
        dc_next = dc * f
    return dwx, dwh, db


@dataclass
class ForwardTrace:
    """Cached activations from one forward pass, enough for backprop.

    ``spatiotemporal`` is (M, N, D + 2H); ``quality_raw`` holds the logistic
    outputs in the open interval (0, 1) before the kernel clamp; ``streams``
    is the clamped view of the same outputs plus the unit feature vectors.
    """

    params: ModelParams
    fwd: dict
    bwd: dict
    spatiotemporal: np.ndarray
    feat_hidden: np.ndarray
    feat_raw: np.ndarray
    feat_norms: np.ndarray
    qual_hidden: np.ndarray
    logits: np.ndarray
    quality_raw: np.ndarray
    streams: ViewStreams


def forward(params: ModelParams, sequence: MultiViewSequence) -> ForwardTrace:
    """Apply the shared encoder to every view of a sequence."""
    if sequence.feature_dim != params.input_dim:
        raise ShapeError(
            f"sequence has D={sequence.feature_dim}, model expects {params.input_dim}"
        )
    x = sequence.features.astype(np.float64)
    m, n, d = x.shape
    h = params.hidden_size

    fwd = _lstm_forward(x, params.wx_f, params.wh_f, params.b_f)
    bwd_rev = _lstm_forward(x[:, ::-1], params.wx_b, params.wh_b, params.b_b)
    spatio = np.concatenate([x, fwd["hidden"], bwd_rev["hidden"][:, ::-1]], axis=2)

    flat = spatio.reshape(m * n, d + 2 * h)
    feat_hidden = np.tanh(flat @ params.feat_w1.T + params.feat_b1)
    feat_raw = feat_hidden @ params.feat_w2.T + params.feat_b2
    norms = np.linalg.norm(feat_raw, axis=1)
    if (norms < 1e-12).any():
        raise NumericError("feature head produced a zero vector; cannot normalize")
    features = (feat_raw / norms[:, None]).reshape(m, n, params.output_dim)

    qual_hidden = np.tanh(flat @ params.qual_w1.T + params.qual_b1)
    logits = qual_hidden @ params.qual_w2.T + params.qual_b2
    quality_raw = _sigmoid(logits).reshape(m, n)

    streams = ViewStreams(
        features=features, quality=np.clip(quality_raw, dpp.QUALITY_FLOOR, 1.0)
    )
    return ForwardTrace(
        params=params, fwd=fwd, bwd=bwd_rev, spatiotemporal=spatio,
        feat_hidden=feat_hidden, feat_raw=feat_raw, feat_norms=norms,
        qual_hidden=qual_hidden, logits=logits, quality_raw=quality_raw,
        streams=streams,
    )


@dataclass(frozen=True)
class LossParts:
    total: float
    bce: float
    dpp_nll: float


def _check_targets(sequence, target_views, target_steps):
    y = np.asarray(target_views)
    if y.shape != (sequence.num_views, sequence.num_steps):
        raise ValidationError(
            f"target_views shape {y.shape} does not match "
            f"({sequence.num_views}, {sequence.num_steps})"
        )
    if not np.isin(y, (0, 1)).all():
        raise ValidationError("target_views must be binary")
    steps = {int(t) for t in target_steps}
    derived = {int(t) for t in np.flatnonzero(y.any(axis=0))}
    if steps != derived:
        raise ValidationError(
            f"target_steps {sorted(steps)} inconsistent with target_views {sorted(derived)}"
        )
    return y.astype(np.float64), sorted(steps)


def _bce_terms(y, quality_raw, num_views, full_form, normalize_steps):
    scale = 1.0 / num_views
    if normalize_steps:
        scale /= y.shape[1]
    if full_form:
        loss = -scale * float(
            (y * np.log(quality_raw) + (1.0 - y) * np.log1p(-quality_raw)).sum()
        )
        dlogits = scale * (quality_raw - y)
    else:
        loss = -scale * float((y * np.log(quality_raw)).sum())
        dlogits = -scale * y * (1.0 - quality_raw)
    return loss, dlogits


def evaluate_loss(
    params: ModelParams,
    sequence: MultiViewSequence,
    target_views,
    target_steps,
    lam: float = 1.0,
    bce_full_form: bool = True,
    bce_normalize_steps: bool = False,
) -> LossParts:
    """Forward-only loss, for validation passes."""
    y, steps = _check_targets(sequence, target_views, target_steps)
    trace = forward(params, sequence)
    bce, _ = _bce_terms(y, trace.quality_raw, sequence.num_views, bce_full_form, bce_normalize_steps)
    dpp_nll = -multi_dpp.multi_dpp_log_prob(trace.streams, steps)
    return LossParts(total=bce + lam * dpp_nll, bce=bce, dpp_nll=dpp_nll)


def loss_and_grad(
    params: ModelParams,
    sequence: MultiViewSequence,
    target_views,
    target_steps,
    lam: float = 1.0,
    bce_full_form: bool = True,
    bce_normalize_steps: bool = False,
) -> tuple[float, ModelParams]:
    """Joint loss (binary cross-entropy + lam * joint-DPP negative
    log-likelihood) and its exact gradient in a ModelParams-shaped bundle."""
    y, steps = _check_targets(sequence, target_views, target_steps)
    trace = forward(params, sequence)
    m, n = sequence.num_views, sequence.num_steps
    d, h, dp = params.input_dim, params.hidden_size, params.output_dim

    bce, dlogits = _bce_terms(y, trace.quality_raw, m, bce_full_form, bce_normalize_steps)

    grad_features = np.zeros((m, n, dp))
    dpp_nll = 0.0
    if lam != 0.0:
        bundle = multi_dpp.build_joint_kernel(trace.streams)
        log_p = dpp.log_prob(bundle.kernel, steps)
        if not np.isfinite(log_p):
            hint = (
                f" ({len(steps)} target steps exceed output_dim={dp}; the joint "
                f"kernel has rank at most output_dim, so such subsets have "
                f"probability 0 - use a larger output_dim)"
                if len(steps) > dp
                else ""
            )
            raise NumericError(
                f"target subset of size {len(steps)} has zero probability under "
                f"the joint kernel{hint}"
            )
        dpp_nll = -log_p
        grad_l = -lam * dpp.logprob_grad_L(bundle.kernel, steps)
        grad_phi, grad_q = dpp.kernel_grads_from_L(bundle.kernel, grad_l)
        grad_features, grad_stream_q = multi_dpp.backprop_streams(
            bundle, trace.streams, grad_phi, grad_q
        )
        # per-view clamp: logistic outputs below the floor carry no gradient
        passthrough = trace.quality_raw > dpp.QUALITY_FLOOR
        dlogits = dlogits + np.where(
            passthrough,
            grad_stream_q * trace.quality_raw * (1.0 - trace.quality_raw),
            0.0,
        )

    flat = trace.spatiotemporal.reshape(m * n, d + 2 * h)
    grads = {name: np.zeros_like(arr) for name, arr in params.named_arrays()}

    # quality head
    dlog_flat = dlogits.reshape(m * n, 1)
    grads["qual_w2"] = dlog_flat.T @ trace.qual_hidden
    grads["qual_b2"] = dlog_flat.sum(axis=0)
    dq_hidden = (dlog_flat @ params.qual_w2) * (1.0 - trace.qual_hidden**2)
    grads["qual_w1"] = dq_hidden.T @ flat
    grads["qual_b1"] = dq_hidden.sum(axis=0)
    dflat = dq_hidden @ params.qual_w1

    # feature head (through the row normalization)
    gphi = grad_features.reshape(m * n, dp)
    unit = trace.feat_raw / trace.feat_norms[:, None]
    graw = (gphi - unit * np.einsum("rd,rd->r", unit, gphi)[:, None]) / trace.feat_norms[:, None]
    grads["feat_w2"] = graw.T @ trace.feat_hidden
    grads["feat_b2"] = graw.sum(axis=0)
    df_hidden = (graw @ params.feat_w2) * (1.0 - trace.feat_hidden**2)
    grads["feat_w1"] = df_hidden.T @ flat
    grads["feat_b1"] = df_hidden.sum(axis=0)
    dflat = dflat + df_hidden @ params.feat_w1

    dspatio = dflat.reshape(m, n, d + 2 * h)
    dh_fwd = dspatio[:, :, d : d + h]
    dh_bwd = dspatio[:, :, d + h :]
    grads["wx_f"], grads["wh_f"], grads["b_f"] = _lstm_backward(
        trace.fwd, params.wx_f, params.wh_f, dh_fwd
    )
    grads["wx_b"], grads["wh_b"], grads["b_b"] = _lstm_backward(
        trace.bwd, params.wx_b, params.wh_b, dh_bwd[:, ::-1]
    )

    loss = bce + lam * dpp_nll
    grad_params = ModelParams(
        input_dim=d, hidden_size=h, output_dim=dp, seed=params.seed, **grads
    )
    return loss, grad_params
