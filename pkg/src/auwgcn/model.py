"""The spotting network: per-frame GCN backbone, dilated temporal conv neck and head.

Shapes for the default config, T frames::

    feats (T, 12, 2) -> GCN relu(A X W) -> (T, 12, 16) -> flatten -> (192, T)
    conv k3 d1 + relu -> (64, T)      RF 3
    conv k3 d2 + relu -> (64, T)      RF 7
    conv k3 d2        -> (10, T)      RF 11

The 10 head channels are two blocks of five, macro first then micro: one
sigmoid "expression frame" logit followed by four softmax logits for
onset / apex / offset / background.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .feature_io import KINDS, N_CHANNELS, N_ROIS
from .numerics import Parameter

N_CLASSES = 4  # onset, apex, offset, background
ONSET, APEX, OFFSET, BACKGROUND = range(N_CLASSES)


@dataclass(frozen=True)
class ModelConfig:
    gcn_layers: int = 1
    gcn_hidden: int = 16
    neck_channels: tuple[int, ...] = (64, 64)
    head_channels: int = 10
    kernel: int = 3
    dilations: tuple[int, ...] = (1, 2, 2)
    init_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "neck_channels", tuple(int(c) for c in self.neck_channels))
        object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))
        if self.gcn_layers < 1 or self.gcn_hidden < 1:
            raise ValueError("need at least one GCN layer with a positive hidden size")
        if len(self.dilations) != len(self.neck_channels) + 1:
            raise ValueError("one dilation per conv layer (neck layers + head)")
        if self.kernel % 2 == 0:
            raise ValueError("kernel must be odd")
        if self.head_channels != len(KINDS) * (1 + N_CLASSES):
            raise ValueError(f"head must emit {len(KINDS) * (1 + N_CLASSES)} channels")

    @property
    def flat_dim(self) -> int:
        return N_ROIS * self.gcn_hidden

    @property
    def receptive_field(self) -> int:
        return 1 + sum((self.kernel - 1) * d for d in self.dilations)


@dataclass
class ModelParams:
    config: ModelConfig
    gcn_weights: list[Parameter]
    conv_weights: list[Parameter]
    conv_biases: list[Parameter]

    def named(self) -> list[tuple[str, Parameter]]:
        """Parameters in declaration (and checkpoint) order."""
        out = [(f"gcn{i}.weight", w) for i, w in enumerate(self.gcn_weights)]
        for i, (w, b) in enumerate(zip(self.conv_weights, self.conv_biases), start=1):
            out += [(f"conv{i}.weight", w), (f"conv{i}.bias", b)]
        return out

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named()]

    def count(self) -> int:
        return sum(p.value.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def flat(self) -> Parameter:
        """One Parameter aliasing every value and grad, so Adam runs in a single call.

        Each parameter's arrays are rebound to views of two shared buffers.
        """
        params = self.parameters()
        dtype = params[0].value.dtype
        size = sum(p.value.size for p in params)
        flat = Parameter(np.empty(size, dtype=dtype), np.zeros(size, dtype=dtype))
        pos = 0
        for p in params:
            n = p.value.size
            flat.value[pos : pos + n] = p.value.reshape(-1)
            flat.grad[pos : pos + n] = p.grad.reshape(-1)
            p.value = flat.value[pos : pos + n].reshape(p.value.shape)
            p.grad = flat.grad[pos : pos + n].reshape(p.grad.shape)
            pos += n
        return flat

    def astype(self, dtype) -> "ModelParams":
        """Deep copy with values cast to ``dtype`` and fresh zero grads."""

        def cast(ps):
            return [Parameter(p.value.astype(dtype)) for p in ps]

        return ModelParams(self.config, cast(self.gcn_weights), cast(self.conv_weights), cast(self.conv_biases))


def param_shapes(cfg: ModelConfig) -> list[tuple[int, ...]]:
    shapes: list[tuple[int, ...]] = []
    d_in = N_CHANNELS
    for _ in range(cfg.gcn_layers):
        shapes.append((d_in, cfg.gcn_hidden))
        d_in = cfg.gcn_hidden
    c_in = cfg.flat_dim
    for c_out in (*cfg.neck_channels, cfg.head_channels):
        shapes += [(c_out, c_in, cfg.kernel), (c_out,)]
        c_in = c_out
    return shapes


def _glorot(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    if len(shape) == 2:
        fan_in, fan_out = shape
    else:
        c_out, c_in, k = shape
        fan_in, fan_out = c_in * k, c_out * k
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def init_params(cfg: ModelConfig) -> ModelParams:
    rng = np.random.default_rng(cfg.init_seed)
    shapes = param_shapes(cfg)
    gcn = [Parameter(_glorot(rng, s)) for s in shapes[: cfg.gcn_layers]]
    conv_w, conv_b = [], []
    for w_shape, b_shape in zip(shapes[cfg.gcn_layers :: 2], shapes[cfg.gcn_layers + 1 :: 2]):
        conv_w.append(Parameter(_glorot(rng, w_shape)))
        conv_b.append(Parameter(np.zeros(b_shape, dtype=np.float32)))
    return ModelParams(cfg, gcn, conv_w, conv_b)


@dataclass
class Tape:
    adj: np.ndarray
    gcn_inputs: list[np.ndarray] = field(default_factory=list)  # (T, 12, d_in)
    gcn_mixed: list[np.ndarray] = field(default_factory=list)  # A·X, (T·12, d_in)
    gcn_pre: list[np.ndarray] = field(default_factory=list)  # pre-activation (T·12, d_out)
    conv_inputs: list[np.ndarray] = field(default_factory=list)
    conv_pre: list[np.ndarray] = field(default_factory=list)
    logits: np.ndarray | None = None


def _graph_mix(adj: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Apply A to every frame: (T, 12, d) -> (T·12, d)."""
    t, n, d = x.shape
    stacked = x.transpose(1, 0, 2).reshape(n, t * d)
    mixed = nx.matmul(adj, stacked)
    return mixed.reshape(n, t, d).transpose(1, 0, 2).reshape(t * n, d)


def _graph_mix_backward(adj: np.ndarray, grad: np.ndarray, t: int) -> np.ndarray:
    n = adj.shape[0]
    d = grad.shape[1]
    g = grad.reshape(t, n, d).transpose(1, 0, 2).reshape(n, t * d)
    gx = nx.matmul(adj.T, g)
    return gx.reshape(n, t, d).transpose(1, 0, 2)


def forward_with_tape(params: ModelParams, adj: np.ndarray, feats: np.ndarray) -> Tape:
    feats = np.asarray(feats)
    if feats.ndim != 3 or feats.shape[1:] != (N_ROIS, N_CHANNELS):
        raise ValueError(f"features must be (T, {N_ROIS}, {N_CHANNELS}), got {feats.shape}")
    dtype = params.gcn_weights[0].value.dtype
    adj = np.asarray(adj, dtype=dtype)
    if adj.shape != (N_ROIS, N_ROIS):
        raise ValueError(f"adjacency must be {N_ROIS}×{N_ROIS}, got {adj.shape}")
    dilations = params.config.dilations
    tape = Tape(adj)
    t = feats.shape[0]
    x = feats.astype(dtype, copy=False)
    for w in params.gcn_weights:
        tape.gcn_inputs.append(x)
        mixed = _graph_mix(adj, x)
        pre = nx.matmul(mixed, w.value)
        tape.gcn_mixed.append(mixed)
        tape.gcn_pre.append(pre)
        x = nx.relu(pre).reshape(t, N_ROIS, -1)
    h = x.reshape(t, -1).T  # (12·hidden, T), node-major rows
    last = len(params.conv_weights) - 1
    for i, (w, b, d) in enumerate(zip(params.conv_weights, params.conv_biases, dilations)):
        tape.conv_inputs.append(h)
        pre = nx.conv1d(h, w.value, b.value, d)
        tape.conv_pre.append(pre)
        h = pre if i == last else nx.relu(pre)
    tape.logits = h
    return tape


def forward(params: ModelParams, adj: np.ndarray, feats: np.ndarray) -> np.ndarray:
    """Head logits, shape (10, T)."""
    return forward_with_tape(params, adj, feats).logits


def relu_pattern(tape: Tape) -> bytes:
    """On/off pattern of every relu in a recorded pass; equal patterns share one linear region."""
    masks = [pre > 0 for pre in tape.gcn_pre] + [pre > 0 for pre in tape.conv_pre[:-1]]
    return np.packbits(np.concatenate([m.reshape(-1) for m in masks])).tobytes()


def backward(params: ModelParams, tape: Tape, upstream: np.ndarray) -> None:
    """Accumulate d(loss)/d(param) into every ``Parameter.grad``."""
    dilations = params.config.dilations
    if tape.logits is None or upstream.shape != tape.logits.shape:
        raise ValueError("upstream gradient does not match the recorded forward pass")
    g = upstream.astype(tape.logits.dtype, copy=False)
    last = len(params.conv_weights) - 1
    for i in range(last, -1, -1):
        w, b = params.conv_weights[i], params.conv_biases[i]
        if i != last:
            g = nx.relu_backward(tape.conv_pre[i], g)
        g, dw, db = nx.conv1d_backward(tape.conv_inputs[i], w.value, dilations[i], g)
        w.grad += dw
        b.grad += db
    t = g.shape[1]
    g = g.T.reshape(t * N_ROIS, -1)
    for i in range(len(params.gcn_weights) - 1, -1, -1):
        w = params.gcn_weights[i]
        g = nx.relu_backward(tape.gcn_pre[i], g)
        d_mixed, dw = nx.matmul_backward(tape.gcn_mixed[i], w.value, g)
        w.grad += dw
        if i > 0:
            g = _graph_mix_backward(tape.adj, d_mixed, t).reshape(t * N_ROIS, -1)


# ---------------------------------------------------------------------------
# probability decoding


@dataclass(frozen=True)
class KindMaps:
    p_exp: np.ndarray
    p_s: np.ndarray
    p_ap: np.ndarray
    p_e: np.ndarray
    p_bg: np.ndarray

    @property
    def cls(self) -> np.ndarray:
        """(4, T) stacked onset/apex/offset/background probabilities."""
        return np.stack([self.p_s, self.p_ap, self.p_e, self.p_bg])


@dataclass(frozen=True)
class ProbabilityMaps:
    macro: KindMaps
    micro: KindMaps

    def __getitem__(self, kind: str) -> KindMaps:
        if kind not in KINDS:
            raise KeyError(kind)
        return getattr(self, kind)

    @property
    def n_frames(self) -> int:
        return self.macro.p_exp.shape[0]


def kind_offset(kind: str) -> int:
    """First head channel of ``kind``'s block of five."""
    return KINDS.index(kind) * (1 + N_CLASSES)


def decode_kind(logits: np.ndarray, kind: str) -> KindMaps:
    o = kind_offset(kind)
    p_exp = nx.sigmoid(logits[o])
    cls = nx.softmax(logits[o + 1 : o + 1 + N_CLASSES], axis=0)
    return KindMaps(p_exp, *cls)


def decode_probabilities(logits: np.ndarray) -> ProbabilityMaps:
    if logits.ndim != 2 or logits.shape[0] != len(KINDS) * (1 + N_CLASSES):
        raise ValueError(f"expected (10, T) logits, got {logits.shape}")
    return ProbabilityMaps(*(decode_kind(logits, k) for k in KINDS))


# ---------------------------------------------------------------------------
# checkpoints

CKPT_MAGIC = b"AUWC"
CKPT_VERSION = 1


@dataclass
class Checkpoint:
    config: ModelConfig
    params: ModelParams
    adjacency: np.ndarray
    meta: dict = field(default_factory=dict)


def _write_tensor(fh: io.BufferedWriter, arr: np.ndarray) -> None:
    fh.write(struct.pack("<H", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_tensor(fh: io.BufferedReader) -> np.ndarray:
    (ndim,) = struct.unpack("<H", fh.read(2))
    shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
    count = int(np.prod(shape)) if shape else 1
    buf = fh.read(4 * count)
    if len(buf) != 4 * count:
        raise ValueError("checkpoint truncated")
    return np.frombuffer(buf, dtype="<f4").astype(np.float32).reshape(shape)


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    """Magic, version, JSON header (config + meta), parameter tensors, adjacency."""
    header = json.dumps(
        {"config": asdict(ckpt.config), "meta": ckpt.meta}, sort_keys=True
    ).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<HI", CKPT_VERSION, len(header)))
        fh.write(header)
        for _, p in ckpt.params.named():
            _write_tensor(fh, p.value)
        _write_tensor(fh, ckpt.adjacency)


def load_checkpoint(path: str | Path) -> Checkpoint:
    with open(path, "rb") as fh:
        if fh.read(4) != CKPT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        version, hlen = struct.unpack("<HI", fh.read(6))
        if version != CKPT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(hlen))
        cfg = ModelConfig(**header["config"])
        params = init_params(cfg)
        for name, p in params.named():
            arr = _read_tensor(fh)
            if arr.shape != p.value.shape:
                raise ValueError(f"{path}: {name} has shape {arr.shape}, expected {p.value.shape}")
            p.value[...] = arr
        adjacency = _read_tensor(fh)
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes")
    return Checkpoint(cfg, params, adjacency, header.get("meta", {}))


def params_equal(a: ModelParams, b: ModelParams) -> bool:
    return a.config == b.config and all(
        np.array_equal(p.value, q.value) for p, q in zip(a.parameters(), b.parameters())
    )
