"""AU co-occurrence prior for the ROI graph.

Every annotated instance contributes, for each ordered pair of its AUs
(self-pairs included), a count to every ROI pair those AUs map onto. The
raw counts are then degree-normalised with self-loops,
``D^-1/2 (A' + I) D^-1/2``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .feature_io import N_ROIS, AnnotationInstance, au_stem, check_roi, normalize_au

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AuRoiMap:
    entries: Mapping[str, frozenset[int]]

    def __post_init__(self):
        clean = {}
        for au, rois in self.entries.items():
            rois = frozenset(check_roi(r) for r in rois)
            if not rois:
                raise ValueError(f"{au} maps to no ROI")
            clean[au_stem(au)] = rois
        object.__setattr__(self, "entries", dict(sorted(clean.items(), key=lambda kv: int(kv[0][2:]))))

    def rois(self, au: str) -> frozenset[int] | None:
        """ROIs for an AU, falling back to its numeric stem for side-coded ids."""
        return self.entries.get(au_stem(au))

    def __contains__(self, au: str) -> bool:
        return self.rois(au) is not None

    def to_text(self) -> str:
        return "".join(
            f"{au}: {','.join(str(r) for r in sorted(rois))}\n" for au, rois in self.entries.items()
        )

    @classmethod
    def from_text(cls, text: str) -> "AuRoiMap":
        entries: dict[str, frozenset[int]] = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            au, sep, rest = line.partition(":")
            if not sep:
                raise ValueError(f"line {lineno}: expected 'AU<k>: <roi>,...', got {line!r}")
            try:
                rois = frozenset(int(tok) for tok in rest.split(",") if tok.strip())
            except ValueError as exc:
                raise ValueError(f"line {lineno}: bad ROI list {rest!r}") from exc
            entries[normalize_au(au)] = rois
        return cls(entries)

    @classmethod
    def load(cls, path: str | Path) -> "AuRoiMap":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")


def default_au_roi_map() -> AuRoiMap:
    text = resources.files("auwgcn").joinpath("data/default_au_roi.txt").read_text(encoding="utf-8")
    return AuRoiMap.from_text(text)


@dataclass(frozen=True)
class AdjacencyMatrix:
    raw: np.ndarray  # (12, 12) integer counts
    normalized: np.ndarray  # (12, 12) float


def count_cooccurrence(
    annotations: Iterable[AnnotationInstance], au_map: AuRoiMap
) -> np.ndarray:
    raw = np.zeros((N_ROIS, N_ROIS), dtype=np.int64)
    unknown: set[str] = set()
    for inst in annotations:
        rois = []
        for au in inst.aus:
            mapped = au_map.rois(au)
            if mapped is None:
                unknown.add(au)
                continue
            rois.append(np.fromiter(sorted(mapped), dtype=np.intp))
        # ordered AU pairs (u, v), u == v included
        for ru in rois:
            for rv in rois:
                raw[np.ix_(ru, rv)] += 1
    if unknown:
        log.warning("AUs without ROI mapping skipped: %s", ", ".join(sorted(unknown)))
    return raw


def normalize(raw: np.ndarray) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape != (N_ROIS, N_ROIS):
        raise ValueError(f"adjacency must be {N_ROIS}×{N_ROIS}, got {raw.shape}")
    a = raw + np.eye(N_ROIS)
    d = 1.0 / np.sqrt(a.sum(axis=1))
    out = d[:, None] * a * d[None, :]
    # rounding differs between (i, j) and (j, i); average to make symmetry exact
    return (out + out.T) / 2


def uniform_adjacency() -> np.ndarray:
    """Fully connected graph with equal weights 1/12 (spectral radius 1)."""
    return np.full((N_ROIS, N_ROIS), 1.0 / N_ROIS)


def build_adjacency(
    annotations: Iterable[AnnotationInstance], au_map: AuRoiMap | None = None
) -> AdjacencyMatrix:
    raw = count_cooccurrence(annotations, au_map or default_au_roi_map())
    return AdjacencyMatrix(raw, normalize(raw))
