"""Binary-classification metrics and the experiment protocols."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Metrics:
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float | None
    recall: float | None
    f1: float
    zero_division: bool = False

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn,
                "precision": self.precision, "recall": self.recall, "f1": self.f1,
                "zero_division": self.zero_division}


def prf1(predictions, labels) -> Metrics:
    """Confusion counts, precision, recall and F1 = 2PR / (P + R).

    Undefined precision/recall come back as ``None`` with ``zero_division``
    set; F1 is 0 whenever it cannot be formed.
    """
    p = np.asarray(predictions).astype(bool)
    y = np.asarray(labels).astype(bool)
    if p.shape != y.shape:
        raise ValueError(f"{p.size} predictions vs {y.size} labels")
    tp = int(np.count_nonzero(p & y))
    fp = int(np.count_nonzero(p & ~y))
    fn = int(np.count_nonzero(~p & y))
    tn = int(p.size - tp - fp - fn)
    precision = tp / (tp + fp) if tp + fp else None
    recall = tp / (tp + fn) if tp + fn else None
    zero_div = precision is None or recall is None
    if precision is None or recall is None or precision + recall == 0:
        f1 = 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return Metrics(tp, fp, fn, tn, precision, recall, f1, zero_div)


@dataclass(frozen=True)
class CaseRate:
    """False-positive rate over a selected set of cases; ``rate`` is None with no cases."""

    cases: int
    false_positives: int

    @property
    def rate(self) -> float | None:
        return self.false_positives / self.cases if self.cases else None

    def to_dict(self) -> dict:
        return {"cases": self.cases, "false_positives": self.false_positives, "rate": self.rate}


def section_overload(loads, sections, section: int) -> np.ndarray:
    """Per instant: does a single overloaded vehicle sit on ``section`` (0-based)?"""
    lo, hi = sections.boundaries[section], sections.boundaries[section + 1]
    hit = (loads.position >= lo) & (loads.position < hi) & (loads.weight >= sections.threshold_kg)
    return np.bincount(loads.instant[hit], minlength=loads.n_instants) > 0


def section_total_weight(loads, sections, section: int) -> np.ndarray:
    """Per instant: summed vehicle weight (kg) on ``section`` (0-based)."""
    lo, hi = sections.boundaries[section], sections.boundaries[section + 1]
    on = (loads.position >= lo) & (loads.position < hi)
    return np.bincount(loads.instant[on], weights=loads.weight[on], minlength=loads.n_instants)


def neighbor_fp_study(predictions, instants, loads, sections, neighbors=None) -> CaseRate:
    """False positives when an overload is on a neighbouring section but not the target.

    ``predictions[i]`` is the model's label for sampling instant
    ``instants[i]``. ``neighbors`` lists 0-based sections (default: the one
    just before the target, i.e. upstream).
    """
    target = sections.target
    if neighbors is None:
        neighbors = [target - 1] if target > 0 else [target + 1]
    instants = np.asarray(instants)
    pred = np.asarray(predictions).astype(bool)
    near = np.zeros(loads.n_instants, dtype=bool)
    for s in neighbors:
        near |= section_overload(loads, sections, s)
    case = near[instants] & ~section_overload(loads, sections, target)[instants]
    return CaseRate(int(case.sum()), int((case & pred).sum()))


@dataclass(frozen=True)
class WeightFpResult:
    overall: CaseRate
    bins: tuple[tuple[float, float, CaseRate], ...]  # (lo_kg, hi_kg, rate)

    def to_dict(self) -> dict:
        return {"overall": self.overall.to_dict(),
                "bins": [{"lo_kg": lo, "hi_kg": hi, **r.to_dict()} for lo, hi, r in self.bins]}


def total_weight_fp_study(predictions, instants, loads, sections, bin_start: float = 30_000.0,
                          bin_width: float = 10_000.0) -> WeightFpResult:
    """False positives when only light vehicles are on the target but together weigh
    more than the overload threshold, overall and by total-weight bin.

    Bins are ``[bin_start + i*bin_width, bin_start + (i+1)*bin_width)``; bins
    without cases are left out.
    """
    target = sections.target
    instants = np.asarray(instants)
    pred = np.asarray(predictions).astype(bool)
    total = section_total_weight(loads, sections, target)[instants]
    single = section_overload(loads, sections, target)[instants]
    case = ~single & (total > sections.threshold_kg)
    overall = CaseRate(int(case.sum()), int((case & pred).sum()))
    bins = []
    if case.any():
        idx = np.floor((total[case] - bin_start) / bin_width).astype(int)
        fp = pred[case]
        for i in range(idx.min(), idx.max() + 1):
            sel = idx == i
            if sel.any():
                lo = bin_start + i * bin_width
                bins.append((lo, lo + bin_width, CaseRate(int(sel.sum()), int(fp[sel].sum()))))
    return WeightFpResult(overall, tuple(bins))
