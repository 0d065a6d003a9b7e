"""From probability maps to scored expression intervals."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import model as M
from .evaluation import interval_iou
from .feature_io import KINDS, FeatureSequence
from .training import TrainConfig, make_windows

PROPOSAL_COLUMNS = ("video_id", "kind", "start", "end", "score")


@dataclass(frozen=True)
class Proposal:
    start: int
    end: int
    score: float
    kind: str
    video_id: str = ""

    @property
    def length(self) -> int:
        return self.end - self.start + 1


@dataclass(frozen=True)
class SpotConfig:
    thr_ap: float = 0.4
    k_dis_seconds_macro: float = 2.0
    k_dis_seconds_micro: float = 0.25
    nms_iou: float = 0.5

    def k_dis(self, kind: str, fps: float) -> int:
        seconds = self.k_dis_seconds_macro if kind == "macro" else self.k_dis_seconds_micro
        return max(1, int(round(seconds * fps)))


def generate_proposals(
    maps: M.KindMaps,
    kind: str,
    thr_ap: float,
    k_dis: int,
    video_id: str = "",
) -> list[Proposal]:
    """Candidate intervals around every frame whose apex probability reaches ``thr_ap``.

    Onset is the most likely start frame within ``k_dis`` before the apex,
    offset the most likely end frame within ``k_dis`` after it; argmax ties
    go to the frame nearest the apex. Apexes on the first or last frame have
    an empty search range and are skipped.
    """
    p_s, p_ap, p_e = maps.p_s, maps.p_ap, maps.p_e
    t = len(p_ap)
    out = []
    for i in np.flatnonzero(p_ap >= thr_ap):
        i = int(i)
        lo, hi = max(0, i - k_dis), min(t - 1, i + k_dis)
        if lo > i - 1 or i + 1 > hi:
            continue
        before = p_s[lo:i][::-1]  # nearest first
        start = i - 1 - int(np.argmax(before))
        end = i + 1 + int(np.argmax(p_e[i + 1 : hi + 1]))
        score = float(p_s[start]) * float(p_ap[i]) * float(p_e[end])
        out.append(Proposal(start, end, score, kind, video_id))
    return out


def nms(proposals: Sequence[Proposal], iou_thr: float) -> list[Proposal]:
    """Greedy non-maximum suppression; drops anything with IoU >= ``iou_thr`` to a kept proposal."""
    order = sorted(proposals, key=lambda p: (-p.score, p.start, p.length))
    kept: list[Proposal] = []
    for p in order:
        if all(interval_iou((p.start, p.end), (k.start, k.end)) < iou_thr for k in kept):
            kept.append(p)
    return kept


def video_probabilities(
    params: M.ModelParams, adj: np.ndarray, video: FeatureSequence, train_cfg: TrainConfig
) -> M.ProbabilityMaps:
    """Per-frame maps for a whole video, averaging windows at half-window stride."""
    l_w = train_cfg.window_length(video.fps)
    windows = make_windows(video, train_cfg, stride=max(1, l_w // 2))
    t = video.n_frames
    sums = {k: np.zeros((5, t)) for k in KINDS}
    counts = np.zeros(t)
    for w in windows:
        n = int(w.mask.sum())
        maps = M.decode_probabilities(M.forward(params, adj, w.feats))
        sl = slice(w.window_start, w.window_start + n)
        counts[sl] += 1
        for k in KINDS:
            km = maps[k]
            sums[k][:, sl] += np.stack([km.p_exp, km.p_s, km.p_ap, km.p_e, km.p_bg])[:, :n]
    return M.ProbabilityMaps(*(M.KindMaps(*(sums[k] / counts)) for k in KINDS))


def spot_video(
    params: M.ModelParams,
    adj: np.ndarray,
    video: FeatureSequence,
    train_cfg: TrainConfig,
    spot_cfg: SpotConfig | None = None,
) -> list[Proposal]:
    spot_cfg = spot_cfg or SpotConfig()
    maps = video_probabilities(params, adj, video, train_cfg)
    out = []
    for kind in KINDS:
        cands = generate_proposals(
            maps[kind], kind, spot_cfg.thr_ap, spot_cfg.k_dis(kind, video.fps), video.video_id
        )
        out += sorted(nms(cands, spot_cfg.nms_iou), key=lambda p: p.start)
    return out


def write_proposals(proposals: Iterable[Proposal], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PROPOSAL_COLUMNS)
        for p in proposals:
            writer.writerow([p.video_id, p.kind, p.start, p.end, f"{p.score:.6f}"])


def read_proposals(path: str | Path) -> list[Proposal]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != PROPOSAL_COLUMNS:
            raise ValueError(f"{path}: expected columns {','.join(PROPOSAL_COLUMNS)}")
        out = []
        for row in reader:
            if row["kind"] not in KINDS:
                raise ValueError(f"{path}: unknown kind {row['kind']!r}")
            out.append(
                Proposal(int(row["start"]), int(row["end"]), float(row["score"]), row["kind"], row["video_id"])
            )
    return out
