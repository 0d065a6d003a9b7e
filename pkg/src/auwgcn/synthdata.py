"""Synthetic motion-feature videos with planted macro- and micro-expressions.

Each planted instance draws an AU template and adds a triangular flow bump
(rising onset -> apex, falling apex -> offset) to the ROIs those AUs map to,
along a fixed per-ROI direction. Everything else is Gaussian noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .au_prior import AuRoiMap, default_au_roi_map
from .feature_io import N_CHANNELS, N_ROIS, AnnotationInstance, Dataset, FeatureSequence

MACRO_SECONDS = (0.5, 4.0)
MICRO_SECONDS = (0.2, 0.5)  # upper bound exclusive
GAP_SECONDS = 0.5

# Macro templates are smiles and brow raises; micro templates are frowns, lid
# tightening and nose wrinkles. The pools touch a shared pair of brow ROIs but
# each has ROIs the other never moves, so the kind is visible in the spatial
# pattern as well as the duration.
AU_TEMPLATES: dict[str, tuple[tuple[str, ...], ...]] = {
    "macro": (("AU6", "AU12"), ("AU12",), ("AU1", "AU2"), ("AU2",)),
    "micro": (("AU4",), ("AU4", "AU7"), ("AU9", "AU10"), ("AU7",)),
}

# unit flow direction per ROI: brows up, glabella and nose in, cheeks and lids up, mouth out
_ANGLES = np.deg2rad([100, 80, 110, 70, 270, 60, 120, 80, 100, 90, 200, -20])
ROI_DIRECTIONS = np.stack([np.cos(_ANGLES), np.sin(_ANGLES)], axis=1).astype(np.float32)


class PackingError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    subjects: int = 4
    videos_per_subject: int = 2
    fps: float = 30.0
    video_seconds: float = 60.0
    macro_rate: float = 3.0
    micro_rate: float = 2.0
    noise_sigma: float = 0.2
    signal_amp: float = 1.0
    micro_scale: float = 1.0  # micro peak = micro_scale * signal_amp
    seed: int = 0

    def __post_init__(self):
        if self.subjects < 1 or self.videos_per_subject < 1:
            raise ValueError("need at least one subject and one video per subject")
        if self.fps <= 0 or self.video_seconds <= 0:
            raise ValueError("fps and video_seconds must be positive")
        if self.macro_rate < 0 or self.micro_rate < 0 or self.noise_sigma < 0:
            raise ValueError("rates and noise_sigma must be non-negative")
        if not self.signal_amp > 3 * self.noise_sigma:
            raise ValueError("signal_amp must exceed 3·noise_sigma")
        if int(np.ceil(MICRO_SECONDS[0] * self.fps)) >= MICRO_SECONDS[1] * self.fps:
            raise ValueError(f"fps {self.fps} too low to represent micro-expressions")


def _duration_frames(rng: np.random.Generator, kind: str, fps: float) -> int:
    if kind == "macro":
        lo = int(np.ceil(MACRO_SECONDS[0] * fps))
        hi = int(np.floor(MACRO_SECONDS[1] * fps))
    else:
        lo = int(np.ceil(MICRO_SECONDS[0] * fps))
        hi = int(np.ceil(MICRO_SECONDS[1] * fps)) - 1  # n/fps < 0.5
    return int(rng.integers(lo, hi + 1))


def bump_profile(n: int, apex_offset: int) -> np.ndarray:
    """Triangular envelope over ``n`` frames peaking at 1 on ``apex_offset``; every frame > 0."""
    k = np.arange(n, dtype=np.float64)
    rise = (k + 1) / (apex_offset + 1)
    fall = (n - k) / (n - apex_offset)
    return np.where(k <= apex_offset, rise, fall)


def _place(rng: np.random.Generator, durations: list[int], n_frames: int, gap: int, video_id: str) -> list[int]:
    """Random non-overlapping onsets, ``gap`` frames apart and from both video edges."""
    slack = n_frames - sum(durations) - gap * (len(durations) + 1)
    if slack < 0:
        raise PackingError(f"cannot place {len(durations)} instances in video {video_id!r}")
    cuts = np.sort(rng.integers(0, slack + 1, size=len(durations)))
    onsets, pos = [], gap
    prev = 0
    for dur, cut in zip(durations, cuts):
        pos += int(cut) - prev
        prev = int(cut)
        onsets.append(pos)
        pos += dur + gap
    return onsets


def generate_video(
    cfg: SynthConfig, index: int, video_id: str, subject_id: str, au_map: AuRoiMap
) -> tuple[FeatureSequence, list[AnnotationInstance]]:
    rng = np.random.default_rng([cfg.seed, index])
    n_frames = int(round(cfg.video_seconds * cfg.fps))
    kinds = ["macro"] * int(rng.poisson(cfg.macro_rate)) + ["micro"] * int(rng.poisson(cfg.micro_rate))
    rng.shuffle(kinds)
    durations = [_duration_frames(rng, k, cfg.fps) for k in kinds]
    onsets = _place(rng, durations, n_frames, int(np.ceil(GAP_SECONDS * cfg.fps)), video_id)

    frames = rng.normal(0.0, cfg.noise_sigma, size=(n_frames, N_ROIS, N_CHANNELS)).astype(np.float32)
    annotations = []
    for kind, onset, n in zip(kinds, onsets, durations):
        apex_off = int(round(rng.uniform(0.2, 0.8) * (n - 1)))
        pool = AU_TEMPLATES[kind]
        template = pool[int(rng.integers(len(pool)))]
        rois = sorted(set().union(*(au_map.rois(au) for au in template)))
        amp = cfg.signal_amp * (cfg.micro_scale if kind == "micro" else 1.0)
        env = (amp * bump_profile(n, apex_off)).astype(np.float32)
        for r in rois:
            frames[onset : onset + n, r, :] += env[:, None] * ROI_DIRECTIONS[r]
        annotations.append(
            AnnotationInstance(onset, onset + apex_off, onset + n - 1, kind, frozenset(template))
        )
    annotations.sort(key=lambda a: a.onset)
    return FeatureSequence(video_id, subject_id, cfg.fps, frames), annotations


def generate_dataset(cfg: SynthConfig, au_map: AuRoiMap | None = None) -> Dataset:
    au_map = au_map or default_au_roi_map()
    videos, annotations = [], {}
    index = 0
    for s in range(cfg.subjects):
        subject = f"s{s + 1:02d}"
        for v in range(cfg.videos_per_subject):
            video_id = f"{subject}_v{v + 1:02d}"
            seq, ann = generate_video(cfg, index, video_id, subject, au_map)
            videos.append(seq)
            annotations[video_id] = ann
            index += 1
    return Dataset(videos, annotations)
