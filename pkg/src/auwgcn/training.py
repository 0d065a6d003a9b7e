"""Sliding windows, frame labels, focal loss and the leave-one-subject-out loop."""

from __future__ import annotations

import logging
import math
import zlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import model as M
from . import numerics as nx
from .au_prior import AuRoiMap, build_adjacency, default_au_roi_map, uniform_adjacency
from .feature_io import KINDS, N_CHANNELS, N_ROIS, AnnotationInstance, Dataset, FeatureSequence

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    epochs: int = 100
    window_seconds: float = 2.2
    window_stride_fraction: float = 0.5
    alpha: float = 0.75
    gamma: float = 2.0
    boundary_radius_seconds: float = 1 / 30
    boundary_radius_fraction: float = 0.0  # per-instance floor: fraction of its duration
    seed: int = 0
    adjacency: str = "prior"  # "prior" or "uniform"

    def __post_init__(self):
        if not 0 < self.window_stride_fraction <= 1:
            raise ValueError("window_stride_fraction must be in (0, 1]")
        if self.adjacency not in ("prior", "uniform"):
            raise ValueError(f"unknown adjacency mode {self.adjacency!r}")
        if not 0 <= self.boundary_radius_fraction < 0.5:
            raise ValueError("boundary_radius_fraction must be in [0, 0.5)")
        if self.epochs < 0 or self.lr <= 0:
            raise ValueError("need epochs >= 0 and lr > 0")

    def window_length(self, fps: float, min_length: int = 11) -> int:
        l_w = int(round(self.window_seconds * fps))
        if l_w < min_length:
            raise ValueError(
                f"window of {self.window_seconds}s at {fps} fps is {l_w} frames; "
                f"it must cover the {min_length}-frame receptive field"
            )
        return l_w

    def window_stride(self, fps: float) -> int:
        return max(1, math.ceil(self.window_length(fps) * self.window_stride_fraction))

    def boundary_radius(self, fps: float) -> int:
        return int(round(self.boundary_radius_seconds * fps))


@dataclass(frozen=True)
class KindTargets:
    exp: np.ndarray  # (l_w,) 0/1
    cls: np.ndarray  # (l_w,) in {ONSET, APEX, OFFSET, BACKGROUND}


@dataclass
class WindowSample:
    feats: np.ndarray  # (l_w, 12, 2), zero past the end of the video
    mask: np.ndarray  # (l_w,) bool, False on padding
    video_id: str
    window_start: int
    targets: dict[str, KindTargets] = field(default_factory=dict)

    @property
    def length(self) -> int:
        return self.feats.shape[0]


def window_starts(n_frames: int, l_w: int, stride: int) -> list[int]:
    starts = [0]
    while starts[-1] + l_w < n_frames:
        starts.append(starts[-1] + stride)
    return starts


def make_windows(video: FeatureSequence, cfg: TrainConfig, stride: int | None = None) -> list[WindowSample]:
    l_w = cfg.window_length(video.fps)
    stride = stride or cfg.window_stride(video.fps)
    out = []
    for s in window_starts(video.n_frames, l_w, stride):
        chunk = video.frames[s : s + l_w]
        feats = np.zeros((l_w, N_ROIS, N_CHANNELS), dtype=np.float32)
        feats[: len(chunk)] = chunk
        mask = np.zeros(l_w, dtype=bool)
        mask[: len(chunk)] = True
        out.append(WindowSample(feats, mask, video.video_id, s))
    return out


def encode_labels(
    annotations: Sequence[AnnotationInstance],
    window_start: int,
    length: int,
    radius: int,
    radius_fraction: float = 0.0,
) -> dict[str, KindTargets]:
    """Frame targets for one window, indices global to the video.

    ``exp`` is 1 inside [onset, offset]; ``cls`` marks frames within
    ``radius`` of an onset/apex/offset, apex taking precedence over onset
    over offset. An instance's radius is raised to ``radius_fraction`` of its duration when that is larger.
    """
    frames = np.arange(window_start, window_start + length)
    out = {}
    for kind in KINDS:
        insts = sorted((a for a in annotations if a.kind == kind), key=lambda a: a.onset)
        for a, b in zip(insts, insts[1:]):
            if b.onset <= a.offset:
                raise ValueError(
                    f"overlapping {kind} instances [{a.onset}, {a.offset}] and [{b.onset}, {b.offset}]"
                )
        exp = np.zeros(length, dtype=np.int8)
        cls = np.full(length, M.BACKGROUND, dtype=np.int8)
        # lowest priority first, so later writes win
        for label, attr in ((M.OFFSET, "offset"), (M.ONSET, "onset"), (M.APEX, "apex")):
            for a in insts:
                ra = max(radius, int(round(radius_fraction * (a.offset - a.onset + 1))))
                cls[np.abs(frames - getattr(a, attr)) <= ra] = label
        for a in insts:
            exp[(frames >= a.onset) & (frames <= a.offset)] = 1
        out[kind] = KindTargets(exp, cls)
    return out


def video_samples(
    video: FeatureSequence, annotations: Sequence[AnnotationInstance], cfg: TrainConfig
) -> list[WindowSample]:
    radius = cfg.boundary_radius(video.fps)
    windows = make_windows(video, cfg)
    for w in windows:
        w.targets = encode_labels(annotations, w.window_start, w.length, radius, cfg.boundary_radius_fraction)
    return windows


# ---------------------------------------------------------------------------
# focal loss


def _binary_focal(z: np.ndarray, y: np.ndarray, alpha: float, gamma: float):
    p = nx.sigmoid(z.astype(np.float64))
    inside = (p > PROB_CLAMP) & (p < 1 - PROB_CLAMP)
    pc = np.clip(p, PROB_CLAMP, 1 - PROB_CLAMP)
    pos = y == 1
    loss = np.where(
        pos,
        -alpha * (1 - pc) ** gamma * np.log(pc),
        -(1 - alpha) * pc**gamma * np.log(1 - pc),
    )
    # dL/dp, then through dp/dz = p(1-p)
    dp = np.where(
        pos,
        alpha * (gamma * (1 - pc) ** (gamma - 1) * np.log(pc) - (1 - pc) ** gamma / pc)
        if gamma != 0
        else -alpha / pc,
        -(1 - alpha) * (gamma * pc ** (gamma - 1) * np.log(1 - pc) - pc**gamma / (1 - pc))
        if gamma != 0
        else (1 - alpha) / (1 - pc),
    )
    dz = np.where(inside, dp * p * (1 - p), 0.0)
    return loss, dz


def _class_focal(z: np.ndarray, c: np.ndarray, alpha: float, gamma: float):
    q = nx.softmax(z.astype(np.float64), axis=0)
    cols = np.arange(z.shape[1])
    qc = q[c, cols]
    inside = (qc > PROB_CLAMP) & (qc < 1 - PROB_CLAMP)
    qcc = np.clip(qc, PROB_CLAMP, 1 - PROB_CLAMP)
    loss = -alpha * (1 - qcc) ** gamma * np.log(qcc)
    if gamma != 0:
        dqc = alpha * (gamma * (1 - qcc) ** (gamma - 1) * np.log(qcc) - (1 - qcc) ** gamma / qcc)
    else:
        dqc = -alpha / qcc
    dq = np.zeros_like(q)
    dq[c, cols] = np.where(inside, dqc, 0.0)
    return loss, nx.softmax_backward(q, dq, axis=0)


def focal_loss(
    logits: np.ndarray,
    targets: dict[str, KindTargets],
    mask: np.ndarray | None = None,
    alpha: float = 0.75,
    gamma: float = 2.0,
) -> tuple[float, np.ndarray]:
    """Summed focal loss of both tasks and both kinds, and its gradient w.r.t. the logits.

    Each task's per-frame loss is averaged over the valid (unpadded) frames.
    """
    t = logits.shape[1]
    mask = np.ones(t, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    n_valid = max(int(mask.sum()), 1)
    grad = np.zeros(logits.shape, dtype=np.float64)
    total = 0.0
    for kind in KINDS:
        o = M.kind_offset(kind)
        tg = targets[kind]
        loss_b, dz_b = _binary_focal(logits[o], tg.exp, alpha, gamma)
        loss_c, dz_c = _class_focal(logits[o + 1 : o + 1 + M.N_CLASSES], tg.cls.astype(np.intp), alpha, gamma)
        total += (loss_b[mask].sum() + loss_c[mask].sum()) / n_valid
        grad[o] = dz_b * mask / n_valid
        grad[o + 1 : o + 1 + M.N_CLASSES] = dz_c * mask / n_valid
    return float(total), grad.astype(logits.dtype)


# ---------------------------------------------------------------------------
# training


@dataclass
class FoldResult:
    checkpoint: M.Checkpoint
    initial_loss: float
    final_loss: float
    step_losses: np.ndarray
    train_videos: list[str]


def fold_adjacency(
    ds: Dataset, held_out: str | None, cfg: TrainConfig, au_map: AuRoiMap | None = None
) -> np.ndarray:
    """Adjacency built from training-subject annotations only."""
    if cfg.adjacency == "uniform":
        return uniform_adjacency()
    annotations = [
        a for v in ds.videos if v.subject_id != held_out for a in ds.annotations_for(v.video_id)
    ]
    return build_adjacency(annotations, au_map or default_au_roi_map()).normalized


def _fold_rng(seed: int, held_out: str | None) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32((held_out or "").encode())])


def _mean_loss(params, adj, samples, cfg) -> float:
    losses = [
        focal_loss(M.forward(params, adj, s.feats), s.targets, s.mask, cfg.alpha, cfg.gamma)[0]
        for s in samples
    ]
    return float(np.mean(losses)) if losses else float("nan")


def train_fold(
    ds: Dataset,
    held_out: str | None,
    cfg: TrainConfig,
    model_cfg: M.ModelConfig,
    au_map: AuRoiMap | None = None,
    observer: Callable[[WindowSample], None] | None = None,
) -> FoldResult:
    """Train on every subject except ``held_out``; batch size one, Adam."""
    if held_out is not None and held_out not in ds.subjects:
        raise ValueError(f"unknown subject {held_out!r}")
    train_videos = [v for v in ds.videos if v.subject_id != held_out]
    samples = [
        s for v in train_videos for s in video_samples(v, ds.annotations_for(v.video_id), cfg)
    ]
    if not samples:
        raise ValueError(f"no training windows when holding out {held_out!r}")
    adj = fold_adjacency(ds, held_out, cfg, au_map).astype(np.float32)
    params = M.init_params(model_cfg)
    flat = params.flat()
    state = nx.AdamState.for_param(flat)
    rng = _fold_rng(cfg.seed, held_out)

    initial = _mean_loss(params, adj, samples, cfg)
    losses = np.empty(cfg.epochs * len(samples))
    step = 0
    for epoch in range(cfg.epochs):
        for idx in rng.permutation(len(samples)):
            s = samples[idx]
            if observer is not None:
                observer(s)
            tape = M.forward_with_tape(params, adj, s.feats)
            loss, g = focal_loss(tape.logits, s.targets, s.mask, cfg.alpha, cfg.gamma)
            M.backward(params, tape, g)
            nx.adam_step(flat, state, cfg.lr)
            losses[step] = loss
            step += 1
        log.debug("fold %s epoch %d loss %.4f", held_out, epoch, losses[step - len(samples) : step].mean())
    tail = max(1, len(losses) // 10)
    final = float(losses[-tail:].mean()) if len(losses) else initial
    log.info("fold %s: loss %.4f -> %.4f", held_out, initial, final)
    meta = {"held_out": held_out, "seed": cfg.seed}
    ckpt = M.Checkpoint(model_cfg, params, adj, meta)
    return FoldResult(ckpt, initial, final, losses, [v.video_id for v in train_videos])


def _run_fold(args):
    return train_fold(*args)


def loso(
    ds: Dataset,
    cfg: TrainConfig,
    model_cfg: M.ModelConfig,
    au_map: AuRoiMap | None = None,
    workers: int = 1,
) -> dict[str, FoldResult]:
    """One independent fold per held-out subject."""
    subjects = ds.subjects
    if len(subjects) < 2:
        raise ValueError("leave-one-subject-out needs at least two subjects")
    jobs = [(ds, s, cfg, model_cfg, au_map) for s in subjects]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_fold, jobs))
    else:
        results = [_run_fold(j) for j in jobs]
    return dict(zip(subjects, results))
