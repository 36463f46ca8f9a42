"""Small convolutional classifier, written directly against numpy.

Forward path: scale raw byte channels to [0, 1], mean-pool down to the
working resolution, run a stack of valid-padding strided convolutions with
ReLU, global-average-pool the last feature map, and finish with one fully
connected layer and a numerically stable softmax. Backward passes are
exact analytic gradients of that computation; no autograd anywhere.

Parameters flatten to a single float64 vector (declared order: conv
weights and biases layer by layer, then the FC weight and bias), which is
also the checkpoint payload.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np


class ParamsFormatError(ValueError):
    """Checkpoint is not a parameter file at all."""


class ParamsVersionError(ValueError):
    """Checkpoint was written by an incompatible format version."""


class ParamsChecksumError(ValueError):
    """Checkpoint bytes do not match their trailing checksum."""


_MAGIC = b"LSEGNET\x00"
_VERSION = 1


@dataclass(frozen=True)
class ArchConfig:
    """Network shape. The default is the production classifier."""

    input_channels: int = 3
    input_size: int = 64   # square input edge after pooling
    pool: int = 4          # mean-pool factor applied to the raw canvas
    conv_specs: tuple[tuple[int, int, int], ...] = ((8, 3, 2), (16, 3, 2))
    num_classes: int = 7

    def validate(self) -> None:
        if self.input_channels < 1 or self.input_size < 1 or self.pool < 1:
            raise ValueError("arch sizes must be >= 1")
        if self.num_classes < 2:
            raise ValueError("arch.num_classes must be >= 2")
        size = self.input_size
        for filters, kernel, stride in self.conv_specs:
            if filters < 1 or kernel < 1 or stride < 1:
                raise ValueError("conv specs must be positive")
            if kernel > size:
                raise ValueError("conv kernel larger than its input")
            size = (size - kernel) // stride + 1

    def feature_sizes(self) -> list[int]:
        """Spatial edge length entering each conv layer, plus the final one."""
        sizes = [self.input_size]
        for _, kernel, stride in self.conv_specs:
            sizes.append((sizes[-1] - kernel) // stride + 1)
        return sizes

    def to_dict(self) -> dict:
        return {
            "input_channels": self.input_channels,
            "input_size": self.input_size,
            "pool": self.pool,
            "conv_specs": [list(s) for s in self.conv_specs],
            "num_classes": self.num_classes,
        }

    @staticmethod
    def from_dict(d: dict) -> "ArchConfig":
        return ArchConfig(
            input_channels=int(d["input_channels"]),
            input_size=int(d["input_size"]),
            pool=int(d["pool"]),
            conv_specs=tuple(tuple(int(v) for v in s) for s in d["conv_specs"]),
            num_classes=int(d["num_classes"]),
        )


@dataclass
class ClassifierParams:
    arch: ArchConfig
    conv_w: list[np.ndarray]  # each (C_out, C_in, k, k)
    conv_b: list[np.ndarray]  # each (C_out,)
    fc_w: np.ndarray          # (K, C_last)
    fc_b: np.ndarray          # (K,)

    def to_vector(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.conv_w, self.conv_b):
            parts.append(w.reshape(-1))
            parts.append(b.reshape(-1))
        parts.append(self.fc_w.reshape(-1))
        parts.append(self.fc_b.reshape(-1))
        return np.concatenate(parts).astype(np.float64)

    @staticmethod
    def from_vector(arch: ArchConfig, vec: np.ndarray) -> "ClassifierParams":
        vec = np.asarray(vec, dtype=np.float64)
        conv_w, conv_b = [], []
        channels = arch.input_channels
        pos = 0

        def take(shape):
            nonlocal pos
            n = int(np.prod(shape))
            out = vec[pos:pos + n].reshape(shape).copy()
            pos += n
            return out

        for filters, kernel, _ in arch.conv_specs:
            conv_w.append(take((filters, channels, kernel, kernel)))
            conv_b.append(take((filters,)))
            channels = filters
        fc_w = take((arch.num_classes, channels))
        fc_b = take((arch.num_classes,))
        if pos != len(vec):
            raise ValueError(f"parameter vector length {len(vec)} does not fit arch")
        return ClassifierParams(arch, conv_w, conv_b, fc_w, fc_b)

    def copy(self) -> "ClassifierParams":
        return ClassifierParams.from_vector(self.arch, self.to_vector())


def init(seed: int, arch: ArchConfig | None = None) -> ClassifierParams:
    """Glorot-uniform weights, zero biases, drawn in declared order."""
    arch = arch or ArchConfig()
    arch.validate()
    rng = np.random.default_rng(seed)
    conv_w, conv_b = [], []
    channels = arch.input_channels
    for filters, kernel, _ in arch.conv_specs:
        fan_in = channels * kernel * kernel
        fan_out = filters * kernel * kernel
        a = np.sqrt(6.0 / (fan_in + fan_out))
        conv_w.append(rng.uniform(-a, a, size=(filters, channels, kernel, kernel)))
        conv_b.append(np.zeros(filters))
        channels = filters
    a = np.sqrt(6.0 / (channels + arch.num_classes))
    fc_w = rng.uniform(-a, a, size=(arch.num_classes, channels))
    fc_b = np.zeros(arch.num_classes)
    return ClassifierParams(arch, conv_w, conv_b, fc_w, fc_b)


def preprocess(channels: np.ndarray, arch: ArchConfig | None = None) -> np.ndarray:
    """Raw byte canvas (C, H, W) -> pooled float input (C, h, w).

    Mean-pools the canvas down by the pool factor, then restores the
    amplitude lost to empty cells by multiplying with pool^2. Canvases are
    sparse point splats, so without the gain a lone pixel's value would be
    diluted ~16x and the first conv layer would see near-zero inputs.
    A pixel of byte value v surrounded by zeros maps to v/255.
    """
    arch = arch or ArchConfig()
    x = np.asarray(channels, dtype=np.float64) / 255.0
    p = arch.pool
    if p > 1:
        c, h, w = x.shape
        if h % p or w % p:
            raise ValueError(f"canvas {h}x{w} not divisible by pool factor {p}")
        x = x.reshape(c, h // p, p, w // p, p).mean(axis=(2, 4)) * (p * p)
    c, h, w = x.shape
    if c != arch.input_channels or h != arch.input_size or w != arch.input_size:
        raise ValueError(
            f"pooled input {c}x{h}x{w} does not match arch "
            f"{arch.input_channels}x{arch.input_size}x{arch.input_size}")
    return x


# --------------------------------------------------------------------------
# forward / backward
# --------------------------------------------------------------------------

def _im2col(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    """(B, C, H, W) -> (B, OH*OW, C*kernel*kernel) patch matrix."""
    windows = np.lib.stride_tricks.sliding_window_view(x, (kernel, kernel),
                                                       axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride, :, :]
    b, c, oh, ow, _, _ = windows.shape
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(b, oh * ow, c * kernel * kernel)
    return np.ascontiguousarray(cols)


def _col2im(dcols: np.ndarray, x_shape: tuple, kernel: int,
            stride: int) -> np.ndarray:
    """Scatter-add patch gradients back to the input layout."""
    b, c, h, w = x_shape
    oh = (h - kernel) // stride + 1
    ow = (w - kernel) // stride + 1
    dx = np.zeros(x_shape)
    d = dcols.reshape(b, oh, ow, c, kernel, kernel)
    for i in range(kernel):
        for j in range(kernel):
            dx[:, :, i:i + oh * stride:stride, j:j + ow * stride:stride] += \
                d[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dx


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def forward_batch(params: ClassifierParams, x: np.ndarray,
                  want_cache: bool = False):
    """Probabilities (B, K) for pooled inputs (B, C, h, w)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise ValueError("forward_batch expects (B, C, h, w)")
    cache = {"inputs": [], "cols": [], "pre_relu": []}
    feat = x
    for w, b, (filters, kernel, stride) in zip(params.conv_w, params.conv_b,
                                               params.arch.conv_specs):
        cols = _im2col(feat, kernel, stride)
        out = cols @ w.reshape(filters, -1).T + b[None, None, :]
        bsz = feat.shape[0]
        oh = (feat.shape[2] - kernel) // stride + 1
        ow = (feat.shape[3] - kernel) // stride + 1
        pre = out.reshape(bsz, oh, ow, filters).transpose(0, 3, 1, 2)
        if want_cache:
            cache["inputs"].append(feat)
            cache["cols"].append(cols)
            cache["pre_relu"].append(pre)
        feat = np.maximum(pre, 0.0)
    pooled = feat.mean(axis=(2, 3))  # global average pool -> (B, C_last)
    logits = pooled @ params.fc_w.T + params.fc_b[None, :]
    probs = _softmax(logits)
    if want_cache:
        cache["gap"] = pooled
        cache["gap_hw"] = feat.shape[2:]
        cache["probs"] = probs
        return probs, cache
    return probs


def forward(params: ClassifierParams, channels: np.ndarray) -> np.ndarray:
    """Probabilities (K,) for one raw byte canvas (C, H, W)."""
    x = preprocess(channels, params.arch)
    return forward_batch(params, x[None])[0]


def _softmax_vjp(probs: np.ndarray, dprobs: np.ndarray) -> np.ndarray:
    """dL/dlogits from dL/dprobs through the softmax Jacobian."""
    inner = (dprobs * probs).sum(axis=1, keepdims=True)
    return probs * (dprobs - inner)


def backward_batch(params: ClassifierParams, cache: dict,
                   dprobs: np.ndarray) -> np.ndarray:
    """Gradient of the loss w.r.t. the flat parameter vector.

    dprobs is the upstream gradient of the scalar loss w.r.t. the forward
    probabilities, shape (B, K).
    """
    probs = cache["probs"]
    dlogits = _softmax_vjp(probs, np.asarray(dprobs, dtype=np.float64))
    dfc_w = dlogits.T @ cache["gap"]
    dfc_b = dlogits.sum(axis=0)
    dgap = dlogits @ params.fc_w  # (B, C_last)

    gh, gw = cache["gap_hw"]
    bsz = dgap.shape[0]
    dfeat = np.broadcast_to(dgap[:, :, None, None] / (gh * gw),
                            (bsz, dgap.shape[1], gh, gw)).copy()

    dconv_w = [None] * len(params.conv_w)
    dconv_b = [None] * len(params.conv_b)
    for layer in range(len(params.conv_w) - 1, -1, -1):
        filters, kernel, stride = params.arch.conv_specs[layer]
        pre = cache["pre_relu"][layer]
        dpre = dfeat * (pre > 0.0)
        b2, f2, oh, ow = dpre.shape
        dout = dpre.transpose(0, 2, 3, 1).reshape(b2, oh * ow, f2)
        cols = cache["cols"][layer]
        w_mat = params.conv_w[layer].reshape(filters, -1)
        dw = np.einsum("bpf,bpc->fc", dout, cols)
        dconv_w[layer] = dw.reshape(params.conv_w[layer].shape)
        dconv_b[layer] = dout.sum(axis=(0, 1))
        dcols = dout @ w_mat
        dfeat = _col2im(dcols, cache["inputs"][layer].shape, kernel, stride)

    grads = ClassifierParams(params.arch, dconv_w, dconv_b, dfc_w, dfc_b)
    return grads.to_vector()


# --------------------------------------------------------------------------
# checkpoint file: magic, version, arch JSON, float64 params, crc32
# --------------------------------------------------------------------------

def save(path: str, params: ClassifierParams) -> None:
    arch_blob = json.dumps(params.arch.to_dict(), sort_keys=True).encode("utf-8")
    vec = params.to_vector()
    body = (
        _MAGIC
        + struct.pack("<I", _VERSION)
        + struct.pack("<I", len(arch_blob)) + arch_blob
        + struct.pack("<Q", len(vec)) + vec.astype("<f8").tobytes()
    )
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))


def load(path: str) -> ClassifierParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(_MAGIC) + 12 or blob[: len(_MAGIC)] != _MAGIC:
        raise ParamsFormatError("not a classifier parameter file")
    body, tail = blob[:-4], blob[-4:]
    (stored,) = struct.unpack("<I", tail)
    if zlib.crc32(body) & 0xFFFFFFFF != stored:
        raise ParamsChecksumError("parameter file checksum mismatch")
    pos = len(_MAGIC)
    (version,) = struct.unpack_from("<I", body, pos)
    pos += 4
    if version != _VERSION:
        raise ParamsVersionError(f"unsupported parameter file version {version}")
    (arch_len,) = struct.unpack_from("<I", body, pos)
    pos += 4
    arch = ArchConfig.from_dict(json.loads(body[pos:pos + arch_len].decode("utf-8")))
    pos += arch_len
    (count,) = struct.unpack_from("<Q", body, pos)
    pos += 8
    vec = np.frombuffer(body, dtype="<f8", count=count, offset=pos)
    return ClassifierParams.from_vector(arch, vec)
