"""Desk-scale experiment protocols: learning signal, bin-size trend, domain shift.

All three share one set of simulated scenes; event streams are re-voxelized
for each stack configuration instead of being simulated again.
"""

from __future__ import annotations

import dataclasses
import logging
import time

import numpy as np

from . import config as config_mod
from . import pipeline
from .config import RunConfig
from .depthnet import finetune, train
from .evaluate import constant_baseline, evaluate

log = logging.getLogger(__name__)


def _timed(fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t0


def pretrain_and_evaluate(cfg: RunConfig, scenes: dict, seeds=None, domains=("clean",)) -> dict:
    """Train one model per seed on the clean train split; evaluate on the test split.

    Returns per-seed MAE/RMSE for each requested test domain, the constant
    baseline on the clean test split, wall time, and the trained nets.
    """
    seeds = list(cfg.seeds if seeds is None else seeds)
    train_set = pipeline.samples(scenes["train"], "clean", cfg.stack)
    tests = {d: pipeline.samples(scenes["test"], d, cfg.stack) for d in domains}
    baseline_value, baseline_mae = constant_baseline([g for _, g in train_set],
                                                     [g for _, g in tests["clean"]])
    out = {"bins": cfg.stack.bins, "layout": cfg.stack.layout, "normalize": cfg.stack.normalize,
           "baseline": {"value": baseline_value, "mae": baseline_mae}, "seeds": {}, "nets": {}}
    for seed in seeds:
        tcfg = dataclasses.replace(cfg.train, seed=seed)
        result, seconds = _timed(train, train_set, tcfg, cfg.net)
        row = {"train_seconds": seconds, "final_train_loss": result.history[-1]["loss"]}
        for d, test_set in tests.items():
            rep = evaluate(result.net, test_set)
            row[d] = {"mae": rep.mean_mae, "rmse": rep.mean_rmse}
        log.info("B=%d seed %d: %s", cfg.stack.bins, seed, row)
        out["seeds"][seed] = row
        out["nets"][seed] = result.net
    return out


def finetune_gap(cfg: RunConfig, scenes: dict, pretrained: dict) -> dict:
    """Fine-tune each pretrained net on the proxy finetune split.

    For each seed reports clean and proxy test MAE before fine-tuning, proxy
    MAE after, the relative degradation (proxy - clean) / clean and the
    fraction of that gap recovered by fine-tuning.
    """
    ft_set = pipeline.samples(scenes["finetune"], "proxy", cfg.stack)
    proxy_test = pipeline.samples(scenes["test"], "proxy", cfg.stack)
    rows = {}
    for seed, net in pretrained["nets"].items():
        before = pretrained["seeds"][seed]
        tcfg = dataclasses.replace(cfg.finetune, seed=seed)
        result, seconds = _timed(finetune, net, ft_set, tcfg)
        after = evaluate(result.net, proxy_test).mean_mae
        clean, proxy = before["clean"]["mae"], before["proxy"]["mae"]
        gap = proxy - clean
        rows[seed] = {"clean_mae": clean, "proxy_mae": proxy, "finetuned_proxy_mae": after,
                      "degradation": gap / clean,
                      "recovered": (proxy - after) / gap if gap > 0 else float("nan"),
                      "finetune_seconds": seconds}
        log.info("finetune seed %d: %s", seed, rows[seed])
    return rows


def desk_experiments(cfg: RunConfig, bins_values=(5, 1), with_finetune: bool = True) -> dict:
    """The full desk protocol; the first ``bins_values`` entry is the main model."""
    scenes, build_seconds = _timed(pipeline.build_scenes, cfg)
    results = {"dataset_fingerprint": config_mod.dataset_fingerprint(cfg),
               "build_seconds": build_seconds, "runs": {}}
    for i, bins in enumerate(bins_values):
        bcfg = config_mod.with_stack(cfg, bins=bins)
        domains = ("clean", "proxy") if i == 0 else ("clean",)
        results["runs"][bins] = pretrain_and_evaluate(bcfg, scenes, domains=domains)
        if i == 0 and with_finetune:
            results["finetune"] = finetune_gap(bcfg, scenes, results["runs"][bins])
    return results


def summary(results: dict) -> dict:
    """JSON-friendly copy without the trained nets."""
    doc = {k: v for k, v in results.items() if k != "runs"}
    doc["runs"] = {b: {k: v for k, v in run.items() if k != "nets"}
                   for b, run in results["runs"].items()}
    for run in doc["runs"].values():
        run["mean_mae"] = {d: float(np.mean([r[d]["mae"] for r in run["seeds"].values()]))
                           for d in ("clean", "proxy") if d in next(iter(run["seeds"].values()))}
    return doc
