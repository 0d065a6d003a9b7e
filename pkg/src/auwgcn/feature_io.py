"""On-disk formats for motion features and expression annotations.

Feature files (``.auwf``) are little-endian binary::

    magic   b"AUWF"
    version u16 (= 1)
    fps     f32
    T       u32
    N       u16 (= 12 ROIs)
    C       u16 (= 2 flow channels)
    values  T·N·C f32, [frame][roi][channel] order

Annotations are a UTF-8 CSV with header
``subject_id,video_id,kind,onset,apex,offset,aus``; ``aus`` is ``;``-separated.

A dataset directory holds ``features/<video_id>.auwf``, ``videos.csv``
(``subject_id,video_id``) and ``annotations.csv``.
"""

from __future__ import annotations

import csv
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

N_ROIS = 12
N_CHANNELS = 2
KINDS = ("macro", "micro")

MAGIC = b"AUWF"
VERSION = 1
_HEADER = struct.Struct("<4sHfIHH")
HEADER_SIZE = _HEADER.size  # 18 bytes

ANNOTATION_COLUMNS = ("subject_id", "video_id", "kind", "onset", "apex", "offset", "aus")
VIDEO_COLUMNS = ("subject_id", "video_id")

_AU_RE = re.compile(r"^AU(\d+)([A-Z]*)$")


class FeatureFormatError(ValueError):
    """Base class for feature-file decoding failures."""


class BadMagicError(FeatureFormatError):
    pass


class TruncatedPayloadError(FeatureFormatError):
    pass


class TrailingBytesError(FeatureFormatError):
    pass


class NonFiniteFeatureError(FeatureFormatError):
    pass


class ShapeMismatchError(FeatureFormatError):
    pass


class AnnotationError(ValueError):
    pass


def check_roi(index: int) -> int:
    if not 0 <= int(index) < N_ROIS:
        raise ValueError(f"ROI index {index} outside [0, {N_ROIS - 1}]")
    return int(index)


def normalize_au(token: str) -> str:
    """``"au12"`` -> ``"AU12"``, ``"12r"`` -> ``"AU12R"``."""
    tok = token.strip().upper()
    if not tok.startswith("AU"):
        tok = "AU" + tok
    m = _AU_RE.match(tok)
    if m is None:
        raise AnnotationError(f"malformed AU identifier {token!r}")
    return f"AU{int(m.group(1))}{m.group(2)}"


def au_stem(au: str) -> str:
    """Numeric stem of an AU id, dropping side codes: ``"AU12R"`` -> ``"AU12"``."""
    m = _AU_RE.match(normalize_au(au))
    return f"AU{int(m.group(1))}"


@dataclass(frozen=True)
class FeatureSequence:
    video_id: str
    subject_id: str
    fps: float
    frames: np.ndarray  # (T, 12, 2) float32

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float32)
        if frames.ndim != 3 or frames.shape[1:] != (N_ROIS, N_CHANNELS):
            raise ShapeMismatchError(
                f"frames must have shape (T, {N_ROIS}, {N_CHANNELS}), got {frames.shape}"
            )
        if frames.shape[0] < 1:
            raise ShapeMismatchError("a feature sequence needs at least one frame")
        if not np.all(np.isfinite(frames)):
            raise NonFiniteFeatureError(f"video {self.video_id!r} has non-finite features")
        if not self.fps > 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class AnnotationInstance:
    onset: int
    apex: int
    offset: int
    kind: str
    aus: frozenset[str] = frozenset()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise AnnotationError(f"unknown expression kind {self.kind!r}")
        if not 0 <= self.onset <= self.apex <= self.offset:
            raise AnnotationError(
                f"need 0 <= onset <= apex <= offset, got ({self.onset}, {self.apex}, {self.offset})"
            )
        object.__setattr__(self, "aus", frozenset(normalize_au(a) for a in self.aus))

    @property
    def n_frames(self) -> int:
        return self.offset - self.onset + 1


@dataclass
class Dataset:
    videos: list[FeatureSequence]
    annotations: dict[str, list[AnnotationInstance]] = field(default_factory=dict)

    @property
    def subjects(self) -> list[str]:
        return sorted({v.subject_id for v in self.videos})

    def video(self, video_id: str) -> FeatureSequence:
        for v in self.videos:
            if v.video_id == video_id:
                return v
        raise KeyError(video_id)

    def videos_of(self, subject_id: str) -> list[FeatureSequence]:
        return [v for v in self.videos if v.subject_id == subject_id]

    def annotations_for(self, video_id: str) -> list[AnnotationInstance]:
        return self.annotations.get(video_id, [])


# ---------------------------------------------------------------------------
# features


def save_features(seq: FeatureSequence, path: str | Path) -> None:
    t, n, c = seq.frames.shape
    payload = np.ascontiguousarray(seq.frames, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, seq.fps, t, n, c))
        fh.write(payload)


def load_features(
    path: str | Path, video_id: str | None = None, subject_id: str = ""
) -> FeatureSequence:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: not a feature file (bad magic)")
    if len(raw) < HEADER_SIZE:
        raise TruncatedPayloadError(f"{path}: header truncated")
    _, version, fps, t, n, c = _HEADER.unpack_from(raw)
    if version != VERSION:
        raise FeatureFormatError(f"{path}: unsupported version {version}")
    if (n, c) != (N_ROIS, N_CHANNELS) or t < 1:
        raise ShapeMismatchError(f"{path}: declared shape ({t}, {n}, {c})")
    need = HEADER_SIZE + t * n * c * 4
    if len(raw) < need:
        raise TruncatedPayloadError(
            f"{path}: payload has {len(raw) - HEADER_SIZE} bytes, expected {need - HEADER_SIZE}"
        )
    if len(raw) > need:
        raise TrailingBytesError(f"{path}: {len(raw) - need} trailing bytes")
    frames = np.frombuffer(raw, dtype="<f4", count=t * n * c, offset=HEADER_SIZE)
    frames = frames.astype(np.float32).reshape(t, n, c)
    if not np.all(np.isfinite(frames)):
        raise NonFiniteFeatureError(f"{path}: non-finite feature values")
    return FeatureSequence(video_id or path.stem, subject_id, float(fps), frames)


# ---------------------------------------------------------------------------
# annotations


def _parse_row(row: dict[str, str], lineno: int) -> tuple[str, str, AnnotationInstance]:
    try:
        subject = row["subject_id"].strip()
        video = row["video_id"].strip()
        kind = row["kind"].strip().lower()
        onset, apex, offset = (int(row[k]) for k in ("onset", "apex", "offset"))
        aus_field = (row.get("aus") or "").strip()
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise AnnotationError(f"line {lineno}: malformed row ({exc})") from exc
    if not subject or not video:
        raise AnnotationError(f"line {lineno}: empty subject or video id")
    aus = [a for a in aus_field.split(";") if a.strip()]
    try:
        inst = AnnotationInstance(onset, apex, offset, kind, frozenset(aus))
    except AnnotationError as exc:
        raise AnnotationError(f"line {lineno}: {exc}") from exc
    return subject, video, inst


def read_annotation_rows(path: str | Path) -> list[tuple[str, str, AnnotationInstance]]:
    """Parse the annotations CSV into (subject_id, video_id, instance) rows."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(ANNOTATION_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise AnnotationError(f"{path}: missing columns {sorted(missing)}")
        return [_parse_row(row, i) for i, row in enumerate(reader, start=2)]


def load_annotations(path: str | Path) -> list[tuple[str, AnnotationInstance]]:
    return [(video, inst) for _, video, inst in read_annotation_rows(path)]


def _sort_aus(aus: Iterable[str]) -> list[str]:
    return sorted(aus, key=lambda a: (int(_AU_RE.match(a).group(1)), a))


def write_annotations(rows: Iterable[tuple[str, str, AnnotationInstance]], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ANNOTATION_COLUMNS)
        for subject, video, a in rows:
            writer.writerow(
                [subject, video, a.kind, a.onset, a.apex, a.offset, ";".join(_sort_aus(a.aus))]
            )


# ---------------------------------------------------------------------------
# datasets


def validate_dataset(ds: Dataset) -> list[str]:
    """Describe every broken dataset invariant; an empty list means valid."""
    problems: list[str] = []
    lengths: dict[str, int] = {}
    for v in ds.videos:
        if v.video_id in lengths:
            problems.append(f"duplicate video_id {v.video_id!r}")
        lengths[v.video_id] = v.n_frames
        if not v.subject_id:
            problems.append(f"video {v.video_id!r} has no subject_id")
    for video_id, insts in ds.annotations.items():
        if video_id not in lengths:
            if insts:
                problems.append(f"annotations reference missing video {video_id!r}")
            continue
        t = lengths[video_id]
        for a in insts:
            if a.offset >= t:
                problems.append(
                    f"video {video_id!r}: instance ({a.onset}, {a.apex}, {a.offset}) "
                    f"out of range for T={t}"
                )
        for kind in KINDS:
            spans = sorted((a.onset, a.offset) for a in insts if a.kind == kind)
            for (s0, e0), (s1, e1) in zip(spans, spans[1:]):
                if s1 <= e0:
                    problems.append(
                        f"video {video_id!r}: overlapping {kind} instances "
                        f"[{s0}, {e0}] and [{s1}, {e1}]"
                    )
    return problems


def save_dataset(ds: Dataset, root: str | Path) -> None:
    root = Path(root)
    (root / "features").mkdir(parents=True, exist_ok=True)
    for v in ds.videos:
        save_features(v, root / "features" / f"{v.video_id}.auwf")
    with open(root / "videos.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(VIDEO_COLUMNS)
        for v in ds.videos:
            writer.writerow([v.subject_id, v.video_id])
    subject_of = {v.video_id: v.subject_id for v in ds.videos}
    rows = [
        (subject_of.get(vid, ""), vid, a)
        for vid in sorted(ds.annotations)
        for a in sorted(ds.annotations[vid], key=lambda a: (a.onset, a.kind))
    ]
    write_annotations(rows, root / "annotations.csv")


def load_dataset(root: str | Path) -> Dataset:
    root = Path(root)
    with open(root / "videos.csv", newline="", encoding="utf-8") as fh:
        index = [(r["subject_id"].strip(), r["video_id"].strip()) for r in csv.DictReader(fh)]
    videos = [
        load_features(root / "features" / f"{vid}.auwf", video_id=vid, subject_id=subj)
        for subj, vid in index
    ]
    annotations: dict[str, list[AnnotationInstance]] = {vid: [] for _, vid in index}
    ann_path = root / "annotations.csv"
    if ann_path.exists():
        for _, vid, inst in read_annotation_rows(ann_path):
            annotations.setdefault(vid, []).append(inst)
    return Dataset(videos, annotations)
