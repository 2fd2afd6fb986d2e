"""Living-score fusion and presentation-attack metrics.

Rates are kept as exact fractions of counts and converted to percent only
for reporting, so ACER = (APCER + BPCER) / 2 and HTER = (FRR + FAR) / 2 hold
exactly.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

LIVE = "live"
ATTACK = "attack"


@dataclass(frozen=True)
class ScoreRecord:
    sample_id: str
    label: str  # live | attack
    score: float
    pai: str = ""

    def __post_init__(self):
        if self.label not in (LIVE, ATTACK):
            raise ValueError(f"{self.sample_id}: label must be 'live' or 'attack', got {self.label!r}")
        if not math.isfinite(self.score):
            raise ValueError(f"{self.sample_id}: non-finite score")
        if (self.label == ATTACK) != bool(self.pai):
            raise ValueError(f"{self.sample_id}: PAI tag must be present iff the sample is an attack")


def fuse_score(refined_maps: Sequence, masks: Sequence, living_prob: float, beta: float = 0.8) -> float:
    """beta * b + (1 - beta) * mean over frames of the masked mean depth."""
    if len(refined_maps) == 0 or len(refined_maps) != len(masks):
        raise ValueError("need one mask per refined depth map")
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    terms = []
    for d, m in zip(refined_maps, masks):
        d = np.asarray(d, float).squeeze()
        m = np.asarray(m, float).squeeze()
        if d.shape != m.shape:
            raise ValueError(f"depth shape {d.shape} vs mask shape {m.shape}")
        area = m.sum()
        if area <= 0:
            raise ValueError("empty mask")
        terms.append(np.abs(d * m).sum() / area)
    return beta * float(living_prob) + (1.0 - beta) * float(np.mean(terms))


def _pct(fr: Fraction) -> float:
    return float(fr * 100)


@dataclass
class MetricsReport:
    threshold: float
    apcer_per_pai: dict[str, Fraction]
    bpcer_frac: Fraction
    far_frac: Fraction
    counts: dict[str, int] = field(default_factory=dict)

    @property
    def apcer_frac(self) -> Fraction:
        return max(self.apcer_per_pai.values())

    @property
    def acer_frac(self) -> Fraction:
        return (self.apcer_frac + self.bpcer_frac) / 2

    @property
    def frr_frac(self) -> Fraction:
        return self.bpcer_frac

    @property
    def hter_frac(self) -> Fraction:
        return (self.frr_frac + self.far_frac) / 2

    # percent views
    apcer = property(lambda self: _pct(self.apcer_frac))
    bpcer = property(lambda self: _pct(self.bpcer_frac))
    acer = property(lambda self: _pct(self.acer_frac))
    frr = property(lambda self: _pct(self.frr_frac))
    far = property(lambda self: _pct(self.far_frac))
    hter = property(lambda self: _pct(self.hter_frac))

    def as_row(self) -> dict[str, float]:
        row = {"threshold": self.threshold}
        for pai, fr in sorted(self.apcer_per_pai.items()):
            row[f"apcer_{pai}"] = _pct(fr)
        row.update(apcer=self.apcer, bpcer=self.bpcer, acer=self.acer, frr=self.frr, far=self.far, hter=self.hter)
        return row


def acer(apcer: float, bpcer: float) -> float:
    return (apcer + bpcer) / 2


def hter(frr: float, far: float) -> float:
    return (frr + far) / 2


def compute_metrics(records: Sequence[ScoreRecord], threshold: float) -> MetricsReport:
    """Accept as live iff score >= threshold."""
    live = [r for r in records if r.label == LIVE]
    attacks = [r for r in records if r.label == ATTACK]
    if not live:
        raise ValueError("no records of class 'live'")
    if not attacks:
        raise ValueError("no records of class 'attack'")
    by_pai: dict[str, list[ScoreRecord]] = {}
    for r in attacks:
        by_pai.setdefault(r.pai, []).append(r)
    apcer_per_pai = {
        pai: Fraction(sum(r.score >= threshold for r in rs), len(rs)) for pai, rs in by_pai.items()
    }
    bpcer = Fraction(sum(r.score < threshold for r in live), len(live))
    far = Fraction(sum(r.score >= threshold for r in attacks), len(attacks))
    counts = {LIVE: len(live), **{pai: len(rs) for pai, rs in by_pai.items()}}
    return MetricsReport(float(threshold), apcer_per_pai, bpcer, far, counts)


@dataclass
class SweepResult:
    points: list[tuple[float, MetricsReport]]
    eer_threshold: float | None
    eer_report: MetricsReport | None
    degenerate: bool = False


def sweep_thresholds(records: Sequence[ScoreRecord]) -> SweepResult:
    """Evaluate at every midpoint between consecutive distinct scores.

    The reported operating point minimises |FAR - FRR| (first such
    threshold in ascending order).
    """
    scores = sorted({r.score for r in records})
    if len(scores) < 2:
        return SweepResult([], None, None, degenerate=True)
    points = []
    for lo, hi in zip(scores, scores[1:]):
        thr = (lo + hi) / 2
        points.append((thr, compute_metrics(records, thr)))
    best = min(points, key=lambda tp: abs(tp[1].far_frac - tp[1].frr_frac))
    return SweepResult(points, best[0], best[1])


# --------------------------------------------------------------------------
# score files

SCORE_HEADER = ["sample_id", "label", "pai", "score"]


def read_scores(fh: Iterable[str]) -> list[ScoreRecord]:
    reader = csv.reader(fh)
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != SCORE_HEADER:
        raise ValueError(f"score file header must be {','.join(SCORE_HEADER)}, got {header}")
    out = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 4:
            raise ValueError(f"line {lineno}: expected 4 fields, got {len(row)}")
        sid, label, pai, score = (c.strip() for c in row)
        try:
            value = float(score)
        except ValueError:
            raise ValueError(f"line {lineno}: bad score {score!r}") from None
        out.append(ScoreRecord(sid, label, value, pai))
    return out


def write_scores(records: Iterable[ScoreRecord], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(SCORE_HEADER)
    for r in records:
        w.writerow([r.sample_id, r.label, r.pai, repr(r.score)])


def reports_csv(reports: Sequence[MetricsReport]) -> str:
    pais = sorted({p for r in reports for p in r.apcer_per_pai})
    cols = ["threshold"] + [f"apcer_{p}" for p in pais] + ["apcer", "bpcer", "acer", "frr", "far", "hter"]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow({k: f"{v:.6g}" for k, v in r.as_row().items()})
    return buf.getvalue()


def format_table(report: MetricsReport) -> str:
    lines = [f"threshold  {report.threshold:.6g}"]
    for pai, fr in sorted(report.apcer_per_pai.items()):
        lines.append(f"APCER[{pai}]  {_pct(fr):7.3f}%  (n={report.counts.get(pai, 0)})")
    lines += [
        f"APCER      {report.apcer:7.3f}%",
        f"BPCER      {report.bpcer:7.3f}%  (n={report.counts.get(LIVE, 0)})",
        f"ACER       {report.acer:7.3f}%",
        f"FRR        {report.frr:7.3f}%",
        f"FAR        {report.far:7.3f}%",
        f"HTER       {report.hter:7.3f}%",
    ]
    return "\n".join(lines)
