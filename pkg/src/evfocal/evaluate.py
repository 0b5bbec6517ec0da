"""MAE / RMSE in inverse-depth units, reports, ablations and the constant baseline."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from . import config as config_mod
from . import pipeline
from .depthnet import DepthNet, train


def _pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    return pred, gt


def mae(pred, gt) -> float:
    pred, gt = _pair(pred, gt)
    return float(np.mean(np.abs(pred - gt)))


def rmse(pred, gt) -> float:
    pred, gt = _pair(pred, gt)
    return float(np.sqrt(np.mean((pred - gt) ** 2)))


@dataclass
class EvalReport:
    tag: str
    fingerprint: str
    seeds: list[int]
    per_scene: list[dict] = field(default_factory=list)   # id, mae, rmse

    @property
    def mean_mae(self) -> float:
        return float(np.mean([s["mae"] for s in self.per_scene])) if self.per_scene else float("nan")

    @property
    def mean_rmse(self) -> float:
        return float(np.mean([s["rmse"] for s in self.per_scene])) if self.per_scene else float("nan")

    def to_json(self) -> dict:
        return {"tag": self.tag, "fingerprint": self.fingerprint, "seeds": list(self.seeds),
                "per_scene": self.per_scene, "mean_mae": self.mean_mae,
                "mean_rmse": self.mean_rmse}

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1, sort_keys=True)


def report_from_maps(preds, gts, tag="", fingerprint="", seeds=(), ids=None) -> EvalReport:
    ids = list(range(len(gts))) if ids is None else ids
    rows = [{"id": i, "mae": mae(p, g), "rmse": rmse(p, g)} for i, p, g in zip(ids, preds, gts)]
    return EvalReport(tag, fingerprint, list(seeds), rows)


def evaluate(net: DepthNet, samples, tag="", fingerprint="", seeds=(), ids=None) -> EvalReport:
    preds = [net.predict(np.asarray(s.grid, dtype=net.cfg.dtype)) for s, _ in samples]
    return report_from_maps(preds, [g for _, g in samples], tag, fingerprint, seeds, ids)


def constant_baseline(train_gts, test_gts=None) -> tuple[float, float]:
    """Median of all training pixels, and its MAE on ``test_gts`` (default: training set)."""
    pix = np.concatenate([np.asarray(g, dtype=np.float64).ravel() for g in train_gts])
    if pix.size == 0:
        raise ValueError("ground-truth set is empty")
    c = float(np.median(pix))
    test_gts = train_gts if test_gts is None else test_gts
    score = float(np.mean([mae(np.full_like(np.asarray(g, dtype=np.float64), c), g)
                           for g in test_gts]))
    return c, score


AXES = {"bin_size": "bins", "polarity": "layout", "normalization": "normalize"}


@dataclass
class AblationRow:
    value: object
    mae: float
    rmse: float
    per_seed: list[dict]


def run_ablation(axis: str, values, base_config, seeds=None, scenes=None,
                 domain: str = "clean") -> list[AblationRow]:
    """Retrain and evaluate on the held-out test split for each axis value.

    ``scenes`` may carry pre-simulated train/test records so the event
    streams are shared across values; they are re-voxelized per value.
    """
    if axis not in AXES:
        raise ValueError(f"axis must be one of {sorted(AXES)}")
    values = list(values)
    if not values:
        raise ValueError("ablation needs at least one value")
    seeds = list(base_config.seeds if seeds is None else seeds)
    if not seeds:
        raise ValueError("ablation needs at least one seed")
    if scenes is None:
        scenes = pipeline.build_scenes(base_config, splits=("train", "test"))

    rows = []
    for value in values:
        cfg = config_mod.with_stack(base_config, **{AXES[axis]: value})
        train_set = pipeline.samples(scenes["train"], "clean", cfg.stack)
        test_set = pipeline.samples(scenes["test"], domain, cfg.stack)
        per_seed = []
        for seed in seeds:
            tcfg = dataclasses.replace(cfg.train, seed=seed)
            net = train(train_set, tcfg, cfg.net).net
            rep = evaluate(net, test_set)
            per_seed.append({"seed": seed, "mae": rep.mean_mae, "rmse": rep.mean_rmse})
        rows.append(AblationRow(value, float(np.mean([r["mae"] for r in per_seed])),
                                float(np.mean([r["rmse"] for r in per_seed])), per_seed))
    return rows


def render_table(rows: list[AblationRow], axis: str) -> str:
    header = f"{axis:>14} | {'MAE [1/m]':>10} | {'RMSE [1/m]':>10}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(f"{str(r.value):>14} | {r.mae:10.4f} | {r.rmse:10.4f}")
    return "\n".join(lines)


def difference_map(pred, gt) -> np.ndarray:
    pred, gt = _pair(pred, gt)
    return np.abs(pred - gt)
