"""Self-contained numerical core: the conv+LSTM chart model.

No ML runtime; everything is numpy. One example at a time, float32 by
default, float64 available for finite-difference gradient verification.

Layout conventions, fixed across forward/backward/checkpoints:

* images are (height=frames, width=bands, channels), conv kernels are
  (out_ch, in_ch, 3, 3) with same-padding, pooling is 2x2;
* fully-connected weights are (in, out), applied as ``x @ w + b``;
* LSTM gate weights pack the four gates row-wise as [input; forget;
  candidate; output], each ``hidden`` rows: w_x is (4*hidden, in),
  w_h is (4*hidden, hidden). The per-step output is ``o * relu(c)``
  (ReLU in place of the usual tanh on the output side; gates stay
  sigmoid, the candidate stays tanh).

The network: conv(16) -> dropout(0.8) -> pool -> conv(32) -> pool ->
fc(2560->128) -> reshape to 16 segments x 8 features -> element-wise fuse
with the 15 note one-hots (right-padded with a constant 1; the masked
final segment uses all ones) -> LSTM(64) -> dropout(0.8) -> LSTM(64) ->
fc(64->28) -> four independent 7-way softmax rows.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .audio import NormStats
from .errors import (
    BadMagic,
    ChecksumMismatch,
    NonFiniteActivation,
    NonFiniteGradient,
    ShapeMismatch,
    TruncatedFile,
    VersionMismatch,
)

DROPOUT_P = 0.8
PROB_FLOOR = 1e-9

CHECKPOINT_MAGIC = b"TKNM"
CHECKPOINT_VERSION = 1

PARAM_NAMES = (
    "conv1_w", "conv1_b",
    "conv2_w", "conv2_b",
    "fc1_w", "fc1_b",
    "lstm1_wx", "lstm1_wh", "lstm1_b",
    "lstm2_wx", "lstm2_wh", "lstm2_b",
    "out_w", "out_b",
)


@dataclass(frozen=True)
class ArchConfig:
    """Network size constants. Defaults are the full chart model."""

    frames: int = 16
    bands: int = 80
    conv1_filters: int = 16
    conv2_filters: int = 32
    seg_features: int = 8
    hidden: int = 64
    classes: int = 7
    horizon: int = 4

    def __post_init__(self):
        if self.frames % 4 or self.bands % 4:
            raise ValueError("frames and bands must be divisible by 4 (two 2x2 pools)")
        if self.seg_features != self.classes + 1:
            raise ValueError("segment features must be note classes + 1 bias channel")

    @property
    def context(self) -> int:
        return self.frames - 1

    @property
    def fc1_out(self) -> int:
        return self.frames * self.seg_features

    @property
    def flat_size(self) -> int:
        return (self.frames // 4) * (self.bands // 4) * self.conv2_filters

    @property
    def out_size(self) -> int:
        return self.horizon * self.classes

    def as_tuple(self) -> tuple[int, ...]:
        return (
            self.frames, self.bands, self.conv1_filters, self.conv2_filters,
            self.seg_features, self.hidden, self.classes, self.horizon,
        )

    @classmethod
    def from_tuple(cls, t) -> "ArchConfig":
        return cls(*[int(v) for v in t])


DEFAULT_ARCH = ArchConfig()


def param_shapes(arch: ArchConfig) -> dict[str, tuple[int, ...]]:
    h4 = 4 * arch.hidden
    return {
        "conv1_w": (arch.conv1_filters, 1, 3, 3),
        "conv1_b": (arch.conv1_filters,),
        "conv2_w": (arch.conv2_filters, arch.conv1_filters, 3, 3),
        "conv2_b": (arch.conv2_filters,),
        "fc1_w": (arch.flat_size, arch.fc1_out),
        "fc1_b": (arch.fc1_out,),
        "lstm1_wx": (h4, arch.seg_features),
        "lstm1_wh": (h4, arch.hidden),
        "lstm1_b": (h4,),
        "lstm2_wx": (h4, arch.hidden),
        "lstm2_wh": (h4, arch.hidden),
        "lstm2_b": (h4,),
        "out_w": (arch.hidden, arch.out_size),
        "out_b": (arch.out_size,),
    }


@dataclass
class ModelParams:
    """All learnable arrays plus the feature normalization that trained them."""

    arch: ArchConfig
    norm: NormStats
    arrays: dict[str, np.ndarray] = field(repr=False, default_factory=dict)

    def __post_init__(self):
        expected = param_shapes(self.arch)
        if set(self.arrays) != set(expected):
            raise ShapeMismatch("parameter set does not match architecture")
        for name, shape in expected.items():
            if self.arrays[name].shape != shape:
                raise ShapeMismatch(
                    f"{name}: expected shape {shape}, got {self.arrays[name].shape}"
                )

    @property
    def dtype(self):
        return self.arrays["conv1_w"].dtype

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def items(self):
        return [(name, self.arrays[name]) for name in PARAM_NAMES]

    def copy(self) -> "ModelParams":
        return replace(self, arrays={k: v.copy() for k, v in self.arrays.items()})


def init_params(
    arch: ArchConfig = DEFAULT_ARCH,
    seed: int = 0,
    dtype=np.float32,
    norm: NormStats | None = None,
) -> ModelParams:
    """Glorot-uniform weights, zero biases, LSTM forget-gate bias +1."""
    rng = np.random.default_rng(seed)
    h = arch.hidden

    def glorot(shape, fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=shape).astype(dtype)

    arrays = {
        "conv1_w": glorot((arch.conv1_filters, 1, 3, 3), 9, 9 * arch.conv1_filters),
        "conv1_b": np.zeros(arch.conv1_filters, dtype=dtype),
        "conv2_w": glorot(
            (arch.conv2_filters, arch.conv1_filters, 3, 3),
            9 * arch.conv1_filters,
            9 * arch.conv2_filters,
        ),
        "conv2_b": np.zeros(arch.conv2_filters, dtype=dtype),
        "fc1_w": glorot((arch.flat_size, arch.fc1_out), arch.flat_size, arch.fc1_out),
        "fc1_b": np.zeros(arch.fc1_out, dtype=dtype),
        "lstm1_wx": glorot((4 * h, arch.seg_features), arch.seg_features, 4 * h),
        "lstm1_wh": glorot((4 * h, h), h, 4 * h),
        "lstm1_b": np.zeros(4 * h, dtype=dtype),
        "lstm2_wx": glorot((4 * h, h), h, 4 * h),
        "lstm2_wh": glorot((4 * h, h), h, 4 * h),
        "lstm2_b": np.zeros(4 * h, dtype=dtype),
        "out_w": glorot((h, arch.out_size), h, arch.out_size),
        "out_b": np.zeros(arch.out_size, dtype=dtype),
    }
    arrays["lstm1_b"][h : 2 * h] = 1.0
    arrays["lstm2_b"][h : 2 * h] = 1.0
    if norm is None:
        norm = NormStats(np.zeros(arch.bands), np.ones(arch.bands))
    return ModelParams(arch, norm, arrays)


# ---------------------------------------------------------------- layers

def _conv2d(x, w, b):
    """Same-padded 3x3 convolution via im2col. x: (H, W, Cin)."""
    hh, ww, cin = x.shape
    cout = w.shape[0]
    xp = np.zeros((hh + 2, ww + 2, cin), dtype=x.dtype)
    xp[1:-1, 1:-1] = x
    cols = np.empty((hh, ww, 9 * cin), dtype=x.dtype)
    for k in range(9):
        ky, kx = divmod(k, 3)
        cols[:, :, k * cin : (k + 1) * cin] = xp[ky : ky + hh, kx : kx + ww]
    cols = cols.reshape(hh * ww, 9 * cin)
    wflat = w.transpose(0, 2, 3, 1).reshape(cout, 9 * cin)
    y = (cols @ wflat.T).reshape(hh, ww, cout) + b
    return y, (cols, wflat, x.shape, cout)


def _conv2d_backward(cache, dy):
    cols, wflat, (hh, ww, cin), cout = cache
    dyf = dy.reshape(hh * ww, cout)
    dwflat = dyf.T @ cols
    dw = dwflat.reshape(cout, 3, 3, cin).transpose(0, 3, 1, 2)
    db = dyf.sum(axis=0)
    dcols = (dyf @ wflat).reshape(hh, ww, 9, cin)
    dxp = np.zeros((hh + 2, ww + 2, cin), dtype=dy.dtype)
    for k in range(9):
        ky, kx = divmod(k, 3)
        dxp[ky : ky + hh, kx : kx + ww] += dcols[:, :, k]
    return dxp[1:-1, 1:-1], dw, db


def _maxpool2(x):
    """2x2 max pool; ties resolve to the first position (argmax)."""
    hh, ww, c = x.shape
    xr = x.reshape(hh // 2, 2, ww // 2, 2, c).transpose(0, 2, 4, 1, 3).reshape(
        hh // 2, ww // 2, c, 4
    )
    idx = xr.argmax(axis=3)
    out = np.take_along_axis(xr, idx[..., None], axis=3)[..., 0]
    return out, (idx, x.shape)


def _maxpool2_backward(cache, dy):
    idx, (hh, ww, c) = cache
    dxr = np.zeros((hh // 2, ww // 2, c, 4), dtype=dy.dtype)
    np.put_along_axis(dxr, idx[..., None], dy[..., None], axis=3)
    return dxr.reshape(hh // 2, ww // 2, c, 2, 2).transpose(0, 3, 1, 4, 2).reshape(hh, ww, c)


def _dropout_mask(shape, rng, dtype):
    """Inverted dropout: zero with probability DROPOUT_P, scale survivors."""
    return (rng.random(shape) >= DROPOUT_P).astype(dtype) / np.asarray(
        1.0 - DROPOUT_P, dtype=dtype
    )


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _lstm_forward(wx, wh, b, xs):
    """Run one LSTM layer over a (T, in) sequence; returns (T, hidden) outputs."""
    t_steps = xs.shape[0]
    h = wh.shape[1]
    hs = np.zeros((t_steps, h), dtype=xs.dtype)
    cs = np.zeros((t_steps, h), dtype=xs.dtype)
    gates = np.zeros((t_steps, 4, h), dtype=xs.dtype)
    h_t = np.zeros(h, dtype=xs.dtype)
    c_t = np.zeros(h, dtype=xs.dtype)
    for t in range(t_steps):
        z = wx @ xs[t] + wh @ h_t + b
        i = _sigmoid(z[:h])
        f = _sigmoid(z[h : 2 * h])
        g = np.tanh(z[2 * h : 3 * h])
        o = _sigmoid(z[3 * h :])
        c_t = f * c_t + i * g
        h_t = o * np.maximum(c_t, 0.0)
        gates[t, 0], gates[t, 1], gates[t, 2], gates[t, 3] = i, f, g, o
        cs[t] = c_t
        hs[t] = h_t
    return hs, (wx, wh, xs, hs, cs, gates)


def _lstm_backward(cache, dh_ext):
    """Backpropagate through time; dh_ext is the (T, hidden) external grad."""
    wx, wh, xs, hs, cs, gates = cache
    t_steps, h = hs.shape
    dwx = np.zeros_like(wx)
    dwh = np.zeros_like(wh)
    db = np.zeros(4 * h, dtype=wx.dtype)
    dxs = np.zeros_like(xs)
    dh_next = np.zeros(h, dtype=wx.dtype)
    dc_next = np.zeros(h, dtype=wx.dtype)
    for t in range(t_steps - 1, -1, -1):
        i, f, g, o = gates[t]
        c = cs[t]
        c_prev = cs[t - 1] if t > 0 else np.zeros(h, dtype=wx.dtype)
        h_prev = hs[t - 1] if t > 0 else np.zeros(h, dtype=wx.dtype)
        dh = dh_ext[t] + dh_next
        do = dh * np.maximum(c, 0.0)
        dc = dc_next + dh * o * (c > 0)
        dz = np.concatenate([
            dc * g * i * (1.0 - i),
            dc * c_prev * f * (1.0 - f),
            dc * i * (1.0 - g * g),
            do * o * (1.0 - o),
        ])
        dwx += np.outer(dz, xs[t])
        dwh += np.outer(dz, h_prev)
        db += dz
        dxs[t] = wx.T @ dz
        dh_next = wh.T @ dz
        dc_next = dc * f
    return dxs, dwx, dwh, db


def softmax_rows(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def pad_note_vectors(note_context: np.ndarray, arch: ArchConfig, dtype) -> np.ndarray:
    """Right-pad the note one-hots with a constant 1 and append the all-ones
    vector standing in for the masked final segment."""
    out = np.ones((arch.frames, arch.seg_features), dtype=dtype)
    out[: arch.context, : arch.classes] = note_context
    return out


def forward(
    params: ModelParams,
    song_window: np.ndarray,
    note_context: np.ndarray,
    training: bool = False,
    rng: np.random.Generator | None = None,
):
    """One pass through the network.

    ``song_window`` is (frames, bands); ``note_context`` is (frames-1, 7)
    where each row is a one-hot note class or all zeros (the generation-time
    placeholder for frames before any note was decided). Returns the (4, 7)
    prediction quad — one probability row per future timestamp — and the
    cache consumed by :func:`backward`.
    """
    arch = params.arch
    dtype = params.dtype
    song_window = np.asarray(song_window, dtype=dtype)
    note_context = np.asarray(note_context, dtype=dtype)
    if song_window.shape != (arch.frames, arch.bands):
        raise ShapeMismatch(f"song window must be {(arch.frames, arch.bands)}, got {song_window.shape}")
    if note_context.shape != (arch.context, arch.classes):
        raise ShapeMismatch(f"note context must be {(arch.context, arch.classes)}, got {note_context.shape}")
    if training and rng is None:
        raise ValueError("training mode needs an rng for dropout masks")

    a1, conv1_cache = _conv2d(song_window[:, :, None], params["conv1_w"], params["conv1_b"])
    r1 = np.maximum(a1, 0.0)
    if training:
        mask1 = _dropout_mask(r1.shape, rng, dtype)
        d1 = r1 * mask1
    else:
        mask1 = None
        d1 = r1
    p1, pool1_cache = _maxpool2(d1)

    a2, conv2_cache = _conv2d(p1, params["conv2_w"], params["conv2_b"])
    r2 = np.maximum(a2, 0.0)
    p2, pool2_cache = _maxpool2(r2)

    flat = p2.reshape(-1)
    a3 = flat @ params["fc1_w"] + params["fc1_b"]
    r3 = np.maximum(a3, 0.0)
    segs = r3.reshape(arch.frames, arch.seg_features)

    notes8 = pad_note_vectors(note_context, arch, dtype)
    fused = segs * notes8

    hs1, lstm1_cache = _lstm_forward(params["lstm1_wx"], params["lstm1_wh"], params["lstm1_b"], fused)
    if training:
        mask2 = _dropout_mask(hs1.shape, rng, dtype)
        hd = hs1 * mask2
    else:
        mask2 = None
        hd = hs1
    hs2, lstm2_cache = _lstm_forward(params["lstm2_wx"], params["lstm2_wh"], params["lstm2_b"], hd)

    h_last = hs2[-1]
    logits = h_last @ params["out_w"] + params["out_b"]
    probs = softmax_rows(logits.reshape(arch.horizon, arch.classes))
    if not np.isfinite(probs).all():
        raise NonFiniteActivation("forward pass produced non-finite probabilities")

    cache = {
        "conv1": conv1_cache, "a1": a1, "mask1": mask1, "pool1": pool1_cache,
        "conv2": conv2_cache, "a2": a2, "pool2": pool2_cache,
        "flat": flat, "a3": a3, "notes8": notes8,
        "lstm1": lstm1_cache, "mask2": mask2, "lstm2": lstm2_cache,
        "h_last": h_last, "probs": probs, "p2_shape": p2.shape,
    }
    return probs, cache


def loss(pred: np.ndarray, targets: np.ndarray) -> float:
    """Mean categorical cross-entropy over the four predicted timestamps.

    ``targets`` rows are one-hot; predicted probabilities are clamped to
    1e-9 so an exactly-wrong prediction stays finite (~20.72 per row).
    """
    pred = np.asarray(pred, dtype=np.float64)
    cls = np.asarray(targets).argmax(axis=1)
    picked = np.clip(pred[np.arange(pred.shape[0]), cls], PROB_FLOOR, None)
    return float(-np.log(picked).mean())


def backward(params: ModelParams, cache: dict, targets: np.ndarray) -> dict[str, np.ndarray]:
    """Exact gradients of :func:`loss` w.r.t. every parameter.

    Reuses the forward pass's dropout masks. Assumes the loss probability
    clamp is inactive (it only engages on fully saturated softmax rows).
    """
    arch = params.arch
    dtype = params.dtype
    targets = np.asarray(targets, dtype=dtype)
    if targets.shape != (arch.horizon, arch.classes):
        raise ShapeMismatch(f"targets must be {(arch.horizon, arch.classes)}, got {targets.shape}")

    dlogits = ((cache["probs"] - targets) / arch.horizon).astype(dtype).reshape(-1)
    grads: dict[str, np.ndarray] = {}
    grads["out_w"] = np.outer(cache["h_last"], dlogits)
    grads["out_b"] = dlogits
    dh_last = params["out_w"] @ dlogits

    dh_ext2 = np.zeros((arch.frames, arch.hidden), dtype=dtype)
    dh_ext2[-1] = dh_last
    dhd, grads["lstm2_wx"], grads["lstm2_wh"], grads["lstm2_b"] = _lstm_backward(cache["lstm2"], dh_ext2)
    if cache["mask2"] is not None:
        dhd = dhd * cache["mask2"]
    dfused, grads["lstm1_wx"], grads["lstm1_wh"], grads["lstm1_b"] = _lstm_backward(cache["lstm1"], dhd)

    dsegs = dfused * cache["notes8"]
    da3 = dsegs.reshape(-1) * (cache["a3"] > 0)
    grads["fc1_w"] = np.outer(cache["flat"], da3)
    grads["fc1_b"] = da3
    dflat = params["fc1_w"] @ da3

    dp2 = dflat.reshape(cache["p2_shape"])
    dr2 = _maxpool2_backward(cache["pool2"], dp2)
    da2 = dr2 * (cache["a2"] > 0)
    dp1, grads["conv2_w"], grads["conv2_b"] = _conv2d_backward(cache["conv2"], da2)

    dd1 = _maxpool2_backward(cache["pool1"], dp1)
    if cache["mask1"] is not None:
        dd1 = dd1 * cache["mask1"]
    da1 = dd1 * (cache["a1"] > 0)
    _, grads["conv1_w"], grads["conv1_b"] = _conv2d_backward(cache["conv1"], da1)

    for g in grads.values():
        if not np.isfinite(g).all():
            raise NonFiniteGradient("backward pass produced non-finite gradients")
    return grads


# ------------------------------------------------------------- optimizer

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0


def init_adam_state(params: ModelParams) -> AdamState:
    return AdamState(
        m={name: np.zeros_like(arr) for name, arr in params.items()},
        v={name: np.zeros_like(arr) for name, arr in params.items()},
    )


def adam_step(params: ModelParams, grads: dict[str, np.ndarray], state: AdamState, lr: float) -> ModelParams:
    """One bias-corrected Adam update, in place on the parameter arrays."""
    state.t += 1
    bc1 = 1.0 - ADAM_BETA1 ** state.t
    bc2 = 1.0 - ADAM_BETA2 ** state.t
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * (g * g)
        p -= (lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)).astype(p.dtype)
    return params


# ----------------------------------------------------------- checkpoints

def _pack_array(name: str, arr: np.ndarray) -> bytes:
    data = np.ascontiguousarray(arr, dtype="<f4")
    head = struct.pack("<H", len(name)) + name.encode()
    head += struct.pack("<B", data.ndim) + struct.pack(f"<{data.ndim}I", *data.shape)
    return head + data.tobytes()


def save_checkpoint(path: str | Path, params: ModelParams, state: AdamState | None = None) -> None:
    """Serialize parameters, Adam state, and normalization stats.

    Versioned little-endian layout, f32 arrays, trailing CRC32 of the whole
    preceding byte stream.
    """
    if state is None:
        state = init_adam_state(params)
    buf = bytearray()
    buf += CHECKPOINT_MAGIC
    buf += struct.pack("<I", CHECKPOINT_VERSION)
    buf += struct.pack("<8I", *params.arch.as_tuple())
    buf += np.ascontiguousarray(params.norm.mean, dtype="<f8").tobytes()
    buf += np.ascontiguousarray(params.norm.std, dtype="<f8").tobytes()
    buf += struct.pack("<Q", int(state.t))
    entries = (
        [(n, a) for n, a in params.items()]
        + [(f"m.{n}", state.m[n]) for n in PARAM_NAMES]
        + [(f"v.{n}", state.v[n]) for n in PARAM_NAMES]
    )
    buf += struct.pack("<I", len(entries))
    for name, arr in entries:
        buf += _pack_array(name, arr)
    buf += struct.pack("<I", zlib.crc32(bytes(buf)))
    Path(path).write_bytes(bytes(buf))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFile("checkpoint ends mid-record")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(
    path: str | Path, dtype=np.float32, expect: ArchConfig | None = None
) -> tuple[ModelParams, AdamState]:
    """Load a checkpoint, verifying magic, version, shapes, and checksum.

    Pass ``expect`` to reject checkpoints trained with different
    architecture constants than the caller is built for.
    """
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != CHECKPOINT_MAGIC:
        raise BadMagic(f"{path}: not a model checkpoint")
    if len(data) < 12:
        raise TruncatedFile(f"{path}: header cut short")

    r = _Reader(data[:-4])
    r.take(4)
    (version,) = r.unpack("<I")
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    try:
        arch = ArchConfig.from_tuple(r.unpack("<8I"))
    except ValueError as exc:
        raise ShapeMismatch(f"{path}: invalid architecture constants") from exc
    if expect is not None and arch != expect:
        raise ShapeMismatch(
            f"{path}: checkpoint architecture {arch.as_tuple()} does not match expected {expect.as_tuple()}"
        )
    mean = np.frombuffer(r.take(8 * arch.bands), dtype="<f8").copy()
    std = np.frombuffer(r.take(8 * arch.bands), dtype="<f8").copy()
    (adam_t,) = r.unpack("<Q")
    (count,) = r.unpack("<I")

    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        size = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(shape).astype(dtype)
    if r.pos != len(r.data):
        raise TruncatedFile(f"{path}: trailing bytes after declared arrays")
    stored_crc = struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(data[:-4]) != stored_crc:
        raise ChecksumMismatch(f"{path}: checkpoint payload corrupted")

    expected = param_shapes(arch)
    wanted = set(expected) | {f"m.{n}" for n in expected} | {f"v.{n}" for n in expected}
    if set(arrays) != wanted:
        raise ShapeMismatch(f"{path}: stored arrays do not match the declared architecture")
    for name, shape in expected.items():
        for key in (name, f"m.{name}", f"v.{name}"):
            if arrays[key].shape != shape:
                raise ShapeMismatch(f"{path}: {key} has shape {arrays[key].shape}, expected {shape}")

    params = ModelParams(arch, NormStats(mean, std), {n: arrays[n] for n in expected})
    state = AdamState(
        m={n: arrays[f"m.{n}"] for n in expected},
        v={n: arrays[f"v.{n}"] for n in expected},
        t=adam_t,
    )
    return params, state
