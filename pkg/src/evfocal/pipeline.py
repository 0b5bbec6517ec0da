"""Scene -> focal stack -> events -> voxel grid, for clean and real-proxy domains."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .breathing import (BreathingProfile, correspondences_for, profile_from_correspondences,
                        synth_breathing_profile, warp_events)
from .config import RunConfig
from .eventsim import EventStream, SimConfig, simulate
from .scenegen import FocalStack, generate_scene, render_focal_stack
from .stack import EventFocalStack, StackConfig, voxelize

SPLITS = ("train", "val", "test", "finetune")
SPLIT_DOMAINS = {"train": ("clean",), "val": ("clean",), "test": ("clean", "proxy"),
                 "finetune": ("clean", "proxy")}


def scene_seed(dataset_seed: int, split: str, index: int) -> int:
    ss = np.random.SeedSequence([dataset_seed, SPLITS.index(split), index])
    return int(ss.generate_state(1)[0])


def render_scene(cfg: RunConfig, seed: int) -> FocalStack:
    scene = generate_scene(seed, cfg.camera, cfg.scene.n_layers, cfg.scene.depth_range)
    stack = render_focal_stack(scene, cfg.camera, cfg.scene.focus_steps, cfg.scene.sweep)
    stack.meta["camera"] = dataclasses.asdict(cfg.camera)
    return stack


def proxy_profiles(cfg: RunConfig, seed: int) -> tuple[BreathingProfile, BreathingProfile]:
    """(true breathing profile, profile used for correction)."""
    W, H = cfg.camera.resolution_w, cfg.camera.resolution_h
    true = synth_breathing_profile(cfg.proxy.breathing_max_scale, cfg.proxy.breathing_entries, W, H)
    if cfg.proxy.calibration == "exact":
        return true, true
    pairs = [correspondences_for(m, W, H, noise_px=cfg.proxy.calib_noise_px, seed=seed + i)
             for i, m in enumerate(true.matrices)]
    return true, profile_from_correspondences(true.fractions, pairs, true.reference_index)


def proxy_sim_config(cfg: RunConfig) -> SimConfig:
    return dataclasses.replace(cfg.sim, noise_rate=cfg.proxy.noise_rate,
                               threshold_jitter=cfg.proxy.threshold_jitter)


def scene_events(cfg: RunConfig, stack: FocalStack, seed: int, domain: str) -> EventStream:
    if domain == "clean":
        return simulate(stack, cfg.sim, seed)
    if domain != "proxy":
        raise ValueError(f"unknown domain {domain!r}")
    events = simulate(stack, proxy_sim_config(cfg), seed)
    true, used = proxy_profiles(cfg, seed)
    events = warp_events(events, true, "inject")
    if cfg.proxy.correct:
        events = warp_events(events, used, "correct")
    return events


def to_grid(events: EventStream, stack_cfg: StackConfig) -> EventFocalStack:
    return voxelize(events, stack_cfg.bins, stack_cfg.layout, stack_cfg.normalize)


@dataclass
class SceneRecord:
    split: str
    index: int
    seed: int
    gt_inverse_depth: np.ndarray
    events: dict[str, EventStream]


def build_scene(cfg: RunConfig, split: str, index: int, domains=None) -> SceneRecord:
    seed = scene_seed(cfg.dataset.seed, split, index)
    stack = render_scene(cfg, seed)
    domains = SPLIT_DOMAINS[split] if domains is None else domains
    events = {d: scene_events(cfg, stack, seed, d) for d in domains}
    return SceneRecord(split, index, seed, stack.gt_inverse_depth, events)


def split_sizes(cfg: RunConfig) -> dict[str, int]:
    d = cfg.dataset
    return {"train": d.n_train, "val": d.n_val, "test": d.n_test, "finetune": d.n_finetune}


def build_scenes(cfg: RunConfig, splits=SPLITS) -> dict[str, list[SceneRecord]]:
    sizes = split_sizes(cfg)
    return {s: [build_scene(cfg, s, i) for i in range(sizes[s])] for s in splits}


def samples(records: list[SceneRecord], domain: str, stack_cfg: StackConfig):
    """[(voxel grid, inverse depth)] for one domain of a split."""
    return [(to_grid(r.events[domain], stack_cfg), r.gt_inverse_depth) for r in records]
