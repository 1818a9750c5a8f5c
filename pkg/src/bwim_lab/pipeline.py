"""End-to-end steps shared by the command line and the studies."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .dataset import Dataset, build_dataset, instant_labels
from .evaluation import Metrics, prf1
from .models import Classifier, TrainReport, make_model, predict_label, train
from .structure import InstantLoads, ResponseMatrix, instant_loads, synthesize_response
from .traffic import TrafficTrajectory, simulate


def make_trajectory(cfg: RunConfig) -> TrafficTrajectory:
    return simulate(cfg.ca_params(), cfg.n_ticks())


def make_loads(cfg: RunConfig, traj: TrafficTrajectory) -> InstantLoads:
    d = cfg["dataset"]
    return instant_loads(traj, d["sample_dt"], d["n_instants"])


def make_response(cfg: RunConfig, traj: TrafficTrajectory,
                  loads: InstantLoads | None = None) -> ResponseMatrix:
    d = cfg["dataset"]
    if loads is None:
        loads = make_loads(cfg, traj)
    resp = synthesize_response(traj, cfg.beam_model(), cfg.sensors(), d["sample_dt"],
                               d["n_instants"], loads=loads)
    resp.meta.update({"bridge_preset": cfg.preset, "I": cfg["beam"]["I"]})
    return resp


def make_dataset(cfg: RunConfig, raw: np.ndarray, labels: np.ndarray,
                 sigma: float | None = None, section: int | None = None) -> Dataset:
    d = cfg["dataset"]
    sigma = d["sigma"] if sigma is None else sigma
    meta = {
        "response_model": "quasi-static",
        "weight_cap_kg": cfg["traffic"]["weight_cap"],
        "seeds": {"traffic": cfg["traffic"]["seed"], "noise": d["noise_seed"]},
        "bridge_preset": cfg.preset,
    }
    return build_dataset(raw, labels, cfg.section_map(section), d["window"], sigma,
                         d["noise_seed"], tuple(d["split"]), meta)


@dataclass
class Bench:
    """Everything one bridge configuration produces before any learning."""

    cfg: RunConfig
    traj: TrafficTrajectory
    loads: InstantLoads
    response: ResponseMatrix

    @classmethod
    def build(cls, cfg: RunConfig) -> "Bench":
        traj = make_trajectory(cfg)
        loads = make_loads(cfg, traj)
        return cls(cfg, traj, loads, make_response(cfg, traj, loads))

    def labels(self, section: int | None = None) -> np.ndarray:
        """Per-instant labels for a 1-based section (default: the configured target)."""
        sm = self.cfg.section_map(section)
        return instant_labels(self.loads, sm)

    def dataset(self, sigma: float | None = None, section: int | None = None) -> Dataset:
        return make_dataset(self.cfg, self.response.values, self.labels(section), sigma, section)


@dataclass
class RunOutcome:
    model: Classifier
    report: TrainReport
    metrics: Metrics
    test_scores: np.ndarray


def fit_and_test(cfg: RunConfig, ds: Dataset, kind: str = "dovi") -> RunOutcome:
    train_set, val_set, test_set = ds.splits()
    model = make_model(kind, ds.values.shape[1], cfg.model_config())
    report = train(model, train_set, val_set)
    scores = model.scores(test_set.windows)
    metrics = prf1(predict_label(scores, report.threshold), test_set.labels)
    return RunOutcome(model, report, metrics, scores)


def evaluate_model(model: Classifier, ds: Dataset, threshold: float, part: str = "test") -> Metrics:
    sets = dict(zip(("train", "val", "test"), ds.splits()))
    s = sets[part]
    return prf1(predict_label(model.scores(s.windows), threshold), s.labels)
