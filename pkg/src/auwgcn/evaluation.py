"""IoU matching of spotted intervals against ground truth, and P/R/F1."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Sequence

from .feature_io import KINDS, AnnotationInstance

if TYPE_CHECKING:
    from .spotting import Proposal


def interval_iou(a: tuple[int, int], b: tuple[int, int]) -> float:
    """IoU of two inclusive frame intervals."""
    (s1, e1), (s2, e2) = a, b
    if s1 > e1 or s2 > e2:
        raise ValueError(f"malformed interval: {a} or {b}")
    inter = min(e1, e2) - max(s1, s2) + 1
    if inter <= 0:
        return 0.0
    union = (e1 - s1 + 1) + (e2 - s2 + 1) - inter
    return inter / union


@dataclass
class MatchReport:
    tp: dict[str, int] = field(default_factory=lambda: dict.fromkeys(KINDS, 0))
    fp: dict[str, int] = field(default_factory=lambda: dict.fromkeys(KINDS, 0))
    fn: dict[str, int] = field(default_factory=lambda: dict.fromkeys(KINDS, 0))
    matches: list[tuple[Proposal, AnnotationInstance, float]] = field(default_factory=list)


def match(
    proposals: Sequence[Proposal],
    ground_truths: Sequence[AnnotationInstance],
    k_iou: float = 0.5,
    kind: str | None = None,
) -> MatchReport:
    """Greedy one-to-one matching for one video and one kind.

    Proposals are visited by descending score (ties: earlier start first);
    each claims the unclaimed ground truth of highest IoU if it reaches
    ``k_iou``. Ties in IoU go to the earlier ground truth.
    """
    kind = kind or (proposals[0].kind if proposals else ground_truths[0].kind if ground_truths else KINDS[0])
    report = MatchReport()
    claimed = [False] * len(ground_truths)
    for p in sorted(proposals, key=lambda p: (-p.score, p.start)):
        best, best_iou = -1, -1.0
        for j, g in enumerate(ground_truths):
            if claimed[j]:
                continue
            iou = interval_iou((p.start, p.end), (g.onset, g.offset))
            if iou > best_iou:
                best, best_iou = j, iou
        if best >= 0 and best_iou >= k_iou:
            claimed[best] = True
            report.matches.append((p, ground_truths[best], best_iou))
    tp = len(report.matches)
    report.tp[kind] = tp
    report.fp[kind] = len(proposals) - tp
    report.fn[kind] = len(ground_truths) - tp
    return report


def evaluate(
    proposals: Iterable[Proposal],
    annotations: dict[str, Sequence[AnnotationInstance]],
    k_iou: float = 0.5,
) -> list[MatchReport]:
    """Match per (video, kind) over every video that has proposals or annotations."""
    by_key: dict[tuple[str, str], list[Proposal]] = defaultdict(list)
    for p in proposals:
        by_key[(p.video_id, p.kind)].append(p)
    videos = sorted(set(annotations) | {v for v, _ in by_key})
    reports = []
    for vid in videos:
        for kind in KINDS:
            gts = [a for a in annotations.get(vid, ()) if a.kind == kind]
            reports.append(match(by_key.get((vid, kind), []), gts, k_iou, kind))
    return reports


@dataclass(frozen=True)
class Scores:
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0


@dataclass(frozen=True)
class ScoreSummary:
    per_kind: dict[str, Scores]
    overall: Scores

    def __getitem__(self, key: str) -> Scores:
        return self.overall if key == "overall" else self.per_kind[key]

    def rows(self) -> list[tuple[str, Scores]]:
        return [*self.per_kind.items(), ("overall", self.overall)]

    def to_text(self) -> str:
        lines = [f"{'kind':<8} {'tp':>5} {'fp':>5} {'fn':>5} {'precision':>10} {'recall':>8} {'f1':>8}"]
        for name, s in self.rows():
            lines.append(
                f"{name:<8} {s.tp:>5} {s.fp:>5} {s.fn:>5} {s.precision:>10.4f} {s.recall:>8.4f} {s.f1:>8.4f}"
            )
        return "\n".join(lines) + "\n"

    def to_kv(self) -> str:
        lines = []
        for name, s in self.rows():
            for key in ("tp", "fp", "fn"):
                lines.append(f"{name}.{key} = {getattr(s, key)}")
            for key in ("precision", "recall", "f1"):
                lines.append(f"{name}.{key} = {getattr(s, key):.6f}")
        return "\n".join(lines) + "\n"


def summarize(reports: Iterable[MatchReport]) -> ScoreSummary:
    """Pool raw counts across videos and folds, then compute P/R/F1."""
    sums = {k: [0, 0, 0] for k in KINDS}
    for r in reports:
        for k in KINDS:
            sums[k][0] += r.tp[k]
            sums[k][1] += r.fp[k]
            sums[k][2] += r.fn[k]
    per_kind = {k: Scores(*v) for k, v in sums.items()}
    overall = Scores(*(sum(v[i] for v in sums.values()) for i in range(3)))
    return ScoreSummary(per_kind, overall)
