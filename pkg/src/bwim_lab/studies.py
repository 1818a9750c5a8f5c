"""Experiment protocols: per-section comparison, noise sweep, section length,
and the multi-vehicle false-positive analyses."""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .evaluation import neighbor_fp_study, total_weight_fp_study
from .models import predict_label
from .pipeline import Bench, fit_and_test, make_trajectory
from .traffic import avg_vehicles_per_section

log = logging.getLogger(__name__)

CSV_COLUMNS = ("axis_value", "approach", "precision", "recall", "f1", "tp", "fp", "fn", "tn")


@dataclass
class StudyResult:
    study: str
    axis: str
    rows: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def f1(self, axis_value, approach: str) -> float:
        for r in self.rows:
            if r["axis_value"] == axis_value and r["approach"] == approach:
                return r["f1"]
        raise KeyError((axis_value, approach))

    def axis_values(self) -> list:
        seen = []
        for r in self.rows:
            if r["axis_value"] not in seen:
                seen.append(r["axis_value"])
        return seen

    def csv_text(self) -> str:
        extra = sorted({k for r in self.rows for k in r} - set(CSV_COLUMNS))
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([*CSV_COLUMNS, *extra])
        for r in self.rows:
            w.writerow(["" if r.get(k) is None else (repr(r[k]) if isinstance(r[k], float) else r[k])
                        for k in (*CSV_COLUMNS, *extra)])
        return buf.getvalue()

    def summary(self) -> dict:
        return {"study": self.study, "axis": self.axis, "rows": self.rows, "meta": self.meta}


def _metrics_row(axis_value, approach: str, m) -> dict:
    return {"axis_value": axis_value, "approach": approach, "precision": m.precision,
            "recall": m.recall, "f1": m.f1, "tp": m.tp, "fp": m.fp, "fn": m.fn, "tn": m.tn}


def _job(args):
    cfg_data, raw, labels, sigma, section, kind = args
    cfg = RunConfig.from_mapping(cfg_data)
    from .pipeline import make_dataset

    ds = make_dataset(cfg, raw, labels, sigma, section)
    out = fit_and_test(cfg, ds, kind)
    return out.metrics, out.report.to_dict()


def _run_jobs(jobs: list, n_workers: int) -> list:
    if n_workers <= 1 or len(jobs) <= 1:
        return [_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(_job, jobs))


def _meta(cfg: RunConfig, **extra) -> dict:
    return {"config_digest": cfg.digest,
            "seeds": {"traffic": cfg["traffic"]["seed"], "noise": cfg["dataset"]["noise_seed"],
                      "model": cfg["model"]["seed"]}, **extra}


def full_sections(cfg: RunConfig) -> list[int]:
    """1-based numbers of the sections worth a study; a tail stub under half the nominal length is skipped."""
    sm, nominal = cfg.section_map(), cfg["sections"]["section_length"]
    return [i + 1 for i in range(sm.n_sections) if sm.span(i)[1] - sm.span(i)[0] >= 0.5 * nominal]


def section_study(cfg: RunConfig, approaches=None, sections=None, jobs: int = 1,
                  bench: Bench | None = None) -> StudyResult:
    """Train and test every approach with each girder section (1-based) as the target."""
    bench = bench or Bench.build(cfg)
    approaches = list(approaches or cfg["study"]["approaches"])
    if sections is None:
        sections = cfg["study"]["sections"] or full_sections(cfg)
    work = [(cfg.data, bench.response.values, bench.labels(s), None, s, kind)
            for s in sections for kind in approaches]
    results = _run_jobs(work, jobs)
    res = StudyResult("sections", "section", meta=_meta(cfg, approaches=approaches))
    for (_, _, _, _, s, kind), (metrics, report) in zip(work, results):
        row = _metrics_row(s, kind, metrics)
        row["best_epoch"] = report["best_epoch"]
        row["threshold"] = report["threshold"]
        res.rows.append(row)
    return res


def noise_sweep(cfg: RunConfig, sigmas=None, approaches=None, jobs: int = 1,
                bench: Bench | None = None) -> StudyResult:
    """Rerun dataset building and training at each noise level on the target section."""
    bench = bench or Bench.build(cfg)
    approaches = list(approaches or cfg["study"]["approaches"])
    sigmas = list(cfg["study"]["sigmas"] if sigmas is None else sigmas)
    labels = bench.labels()
    work = [(cfg.data, bench.response.values, labels, float(sg), None, kind)
            for sg in sigmas for kind in approaches]
    results = _run_jobs(work, jobs)
    res = StudyResult("noise", "sigma",
                      meta=_meta(cfg, approaches=approaches,
                                 section=cfg["sections"]["target_section"]))
    for (_, _, _, sg, _, kind), (metrics, report) in zip(work, results):
        row = _metrics_row(sg, kind, metrics)
        row["best_epoch"] = report["best_epoch"]
        row["threshold"] = report["threshold"]
        res.rows.append(row)
    return res


def section_length_study(cfg: RunConfig, lengths=None, bench: Bench | None = None) -> StudyResult:
    """Average vehicle count per girder section for a range of section lengths."""
    traj = bench.traj if bench is not None else make_trajectory(cfg)
    lengths = list(cfg["study"]["section_lengths"] if lengths is None else lengths)
    res = StudyResult("section-length", "section_length_m", meta=_meta(cfg))
    for L in lengths:
        res.rows.append({"axis_value": float(L), "approach": "traffic", "precision": None,
                         "recall": None, "f1": None, "tp": None, "fp": None, "fn": None, "tn": None,
                         "avg_vehicles": avg_vehicles_per_section(traj, float(L))})
    return res


@dataclass
class MultiVehicleResult:
    neighbor: object
    weight: object
    neighbors: list[int]
    test_metrics: object

    def summary(self) -> dict:
        return {"neighbor_fp": self.neighbor.to_dict(), "neighbor_sections": self.neighbors,
                "total_weight_fp": self.weight.to_dict(), "test": self.test_metrics.to_dict()}


def multi_vehicle_study(model, threshold: float, ds, loads, neighbors=None,
                        bin_start: float = 30_000.0, bin_width: float = 10_000.0) -> MultiVehicleResult:
    """Both false-positive analyses on the test split of ``ds``.

    ``neighbors`` are 1-based section numbers (default: the section just
    upstream of the target).
    """
    from .evaluation import prf1

    _, _, test = ds.splits()
    pred = predict_label(model.scores(test.windows), threshold)
    nb0 = None if neighbors is None else [n - 1 for n in neighbors]
    nb = neighbor_fp_study(pred, test.end_instants, loads, ds.sections, nb0)
    wt = total_weight_fp_study(pred, test.end_instants, loads, ds.sections, bin_start, bin_width)
    used = nb0 if nb0 is not None else ([ds.sections.target - 1] if ds.sections.target > 0
                                        else [ds.sections.target + 1])
    return MultiVehicleResult(nb, wt, [n + 1 for n in used], prf1(pred, test.labels))
