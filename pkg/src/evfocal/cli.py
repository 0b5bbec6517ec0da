"""Command-line entry points for the event focal-stack depth pipeline."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from . import config as config_mod
from . import io, pipeline
from .breathing import BreathingProfile, EstimationError, profile_from_correspondences, warp_events
from .config import ConfigError, RunConfig
from .depthnet import DepthNet, DepthNetConfig, finetune, train
from .eventsim import simulate
from .evaluate import constant_baseline, render_table, report_from_maps, run_ablation
from .nn import load_checkpoint, save_checkpoint
from .stack import StackConfig, voxelize

log = logging.getLogger("evfocal")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class DataError(RuntimeError):
    pass


# --- helpers ---------------------------------------------------------------

def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _overrides(pairs) -> dict:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError(item, "override must look like key.path=value")
        k, v = item.split("=", 1)
        out[k.strip()] = _parse_value(v)
    return out


def load_config(args) -> RunConfig:
    overrides = _overrides(getattr(args, "set", None))
    path = getattr(args, "config", None)
    if path and not os.path.exists(path):
        raise DataError(f"config file not found: {path}")
    return config_mod.load(path, overrides)


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _read_json(path):
    if not os.path.exists(path):
        raise DataError(f"file not found: {path}")
    with open(path) as fh:
        return json.load(fh)


def _out_dir(args, cfg: RunConfig) -> str:
    out = getattr(args, "out", None) or cfg.output_dir
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise DataError(f"output directory is not writable: {out}")
    return out


def load_manifest(path, cfg: RunConfig | None = None) -> dict:
    manifest = _read_json(path)
    manifest["_root"] = os.path.dirname(os.path.abspath(path))
    if cfg is not None and manifest["fingerprint"] != config_mod.dataset_fingerprint(cfg):
        raise DataError("dataset fingerprint does not match the config; refusing to mix artifacts")
    return manifest


def manifest_samples(manifest: dict, split: str, domain: str):
    root = manifest["_root"]
    entries = [e for e in manifest["entries"] if e["split"] == split and e["domain"] == domain]
    samples = [(io.read_voxels(os.path.join(root, e["stack"])),
                io.read_raster(os.path.join(root, e["gt"]))) for e in entries]
    return entries, samples


def _save_loss_csv(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "split", "loss"])
        for row in history:
            w.writerow([row["epoch"], row["split"], repr(float(row["loss"]))])


def _checkpoint_meta(cfg: RunConfig, dataset_fp: str, kind: str, seed: int) -> dict:
    return {"kind": kind, "seed": seed, "dataset_fingerprint": dataset_fp,
            "model_fingerprint": config_mod.model_fingerprint(cfg),
            "net": dataclasses.asdict(cfg.net), "stack": dataclasses.asdict(cfg.stack)}


def load_net(path) -> tuple[DepthNet, dict]:
    if not os.path.exists(path):
        raise DataError(f"checkpoint not found: {path}")
    params, _, meta = load_checkpoint(path)
    net_cfg = DepthNetConfig(**meta["net"])
    return DepthNet.from_state(net_cfg, params), meta


# --- commands --------------------------------------------------------------

def cmd_gen_dataset(args) -> int:
    cfg = load_config(args)
    out = _out_dir(args, cfg)
    fp = config_mod.dataset_fingerprint(cfg)
    entries = []
    sizes = pipeline.split_sizes(cfg)
    for split in pipeline.SPLITS:
        for i in range(sizes[split]):
            rec = pipeline.build_scene(cfg, split, i)
            sid = f"{split}_{i:04d}"
            sdir = os.path.join(out, "scenes", sid)
            os.makedirs(sdir, exist_ok=True)
            io.write_raster(os.path.join(sdir, "gt_invdepth.f32r"), rec.gt_inverse_depth)
            for domain, events in rec.events.items():
                vox = pipeline.to_grid(events, cfg.stack)
                io.write_voxels(os.path.join(sdir, f"{domain}.efs"), vox)
                if args.save_events:
                    io.write_events(os.path.join(sdir, f"{domain}.evfs"), events,
                                    {"scene_seed": rec.seed, "domain": domain, "fingerprint": fp})
                entries.append({"id": sid, "split": split, "domain": domain, "seed": rec.seed,
                                "stack": f"scenes/{sid}/{domain}.efs",
                                "gt": f"scenes/{sid}/gt_invdepth.f32r", "fingerprint": fp})
    _write_json(os.path.join(out, "manifest.json"),
                {"fingerprint": fp, "config": cfg.to_dict(), "entries": entries})
    _write_json(os.path.join(out, "config.json"), cfg.to_dict())
    print(f"wrote {len(entries)} samples to {out} (fingerprint {fp})")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = load_config(args)
    if args.stack:
        stack = io.load_focal_stack(args.stack)
    else:
        stack = pipeline.render_scene(cfg, args.scene_seed)
        if args.save_stack:
            io.save_focal_stack(args.save_stack, stack)
    if args.domain == "proxy":
        events = pipeline.scene_events(cfg, stack, args.seed, "proxy")
    else:
        events = simulate(stack, cfg.sim, args.seed)
    io.write_events(args.out, events, {"sim": dataclasses.asdict(cfg.sim), "domain": args.domain,
                                       "source": args.stack or f"scene_seed={args.scene_seed}"})
    print(f"{len(events)} events -> {args.out}")
    return EXIT_OK


def cmd_voxelize(args) -> int:
    cfg = load_config(args)
    events = io.read_events(args.events)
    vox = voxelize(events, cfg.stack.bins, cfg.stack.layout, cfg.stack.normalize)
    io.write_voxels(args.out, vox)
    print(f"voxel grid {vox.grid.shape} -> {args.out}")
    return EXIT_OK


def _load_profile(args) -> BreathingProfile:
    if args.profile:
        return BreathingProfile.from_json(_read_json(args.profile))
    doc = _read_json(args.correspondences)
    pairs = [(np.array(s["observed"]), np.array(s["reference"])) for s in doc["sets"]]
    try:
        return profile_from_correspondences(doc["fractions"], pairs, doc.get("reference_index", 0))
    except EstimationError as exc:
        raise DataError(str(exc)) from exc


def cmd_correct_breathing(args) -> int:
    events = io.read_events(args.events)
    profile = _load_profile(args)
    corrected = warp_events(events, profile, "correct")
    io.write_events(args.out, corrected, {"corrected_from": args.events})
    if args.save_profile:
        profile.save(args.save_profile)
    print(f"{len(corrected)}/{len(events)} events kept -> {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args)
    out = _out_dir(args, cfg)
    manifest = load_manifest(args.manifest, cfg)
    _, train_set = manifest_samples(manifest, "train", "clean")
    _, val_set = manifest_samples(manifest, "val", "clean")
    if not train_set:
        raise DataError("manifest has no clean training samples")
    seeds = [args.seed] if args.seed is not None else list(cfg.seeds)
    for seed in seeds:
        tcfg = dataclasses.replace(cfg.train, seed=seed)
        result = train(train_set, tcfg, cfg.net, val=val_set)
        meta = _checkpoint_meta(cfg, manifest["fingerprint"], "pretrain", seed)
        save_checkpoint(os.path.join(out, f"model_seed{seed}.ckp"), result.net.params,
                        result.optimizer, meta)
        _save_loss_csv(os.path.join(out, f"loss_seed{seed}.csv"), result.history)
        print(f"seed {seed}: final train loss {result.history[-1]['loss']:.6f}")
    return EXIT_OK


def _check_ckpt(meta, manifest):
    if meta.get("dataset_fingerprint") != manifest["fingerprint"]:
        raise DataError("checkpoint was trained on a different dataset fingerprint; refusing")


def cmd_finetune(args) -> int:
    cfg = load_config(args)
    out = _out_dir(args, cfg)
    manifest = load_manifest(args.manifest)
    net, meta = load_net(args.checkpoint)
    _check_ckpt(meta, manifest)
    _, ft_set = manifest_samples(manifest, "finetune", args.domain)
    if not ft_set:
        raise DataError(f"manifest has no finetune samples for domain {args.domain}")
    seed = meta.get("seed", 0) if args.seed is None else args.seed
    tcfg = dataclasses.replace(cfg.finetune, seed=seed)
    result = finetune(net, ft_set, tcfg)
    meta = dict(meta, kind=f"finetune-{args.domain}", finetune=dataclasses.asdict(tcfg))
    stem = os.path.splitext(os.path.basename(args.checkpoint))[0]
    save_checkpoint(os.path.join(out, f"{stem}_ft_{args.domain}.ckp"), result.net.params,
                    result.optimizer, meta)
    _save_loss_csv(os.path.join(out, f"{stem}_ft_{args.domain}_loss.csv"), result.history)
    print(f"finetuned {stem} on {len(ft_set)} {args.domain} scenes")
    return EXIT_OK


def cmd_eval(args) -> int:
    manifest = load_manifest(args.manifest)
    entries, samples = manifest_samples(manifest, args.split, args.domain)
    if not samples:
        raise DataError(f"no samples for split={args.split} domain={args.domain}")
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    ids = [e["id"] for e in entries]
    gts = [g for _, g in samples]
    if args.predictions:
        preds = [io.read_raster(os.path.join(args.predictions, f"{i}.f32r")) for i in ids]
        tag, fp, seeds = "predictions", manifest["fingerprint"], []
    else:
        net, meta = load_net(args.checkpoint)
        _check_ckpt(meta, manifest)
        preds = [net.predict(s.grid) for s, _ in samples]
        tag, fp, seeds = meta.get("kind", "model"), meta["model_fingerprint"], [meta.get("seed", 0)]
    report = report_from_maps(preds, gts, f"{tag}:{args.split}:{args.domain}", fp, seeds, ids)
    _, train_gt = manifest_samples(manifest, "train", "clean")
    doc = report.to_json()
    doc["dataset_fingerprint"] = manifest["fingerprint"]
    if train_gt:
        doc["constant_baseline"] = dict(zip(("value", "mae"),
                                            constant_baseline([g for _, g in train_gt], gts)))
    stem = os.path.join(out, f"eval_{args.split}_{args.domain}")
    _write_json(stem + ".json", doc)
    if args.diff_maps:
        for i, p, g in zip(ids, preds, gts):
            d = np.abs(np.asarray(p) - g)
            io.write_raster(f"{stem}_{i}_diff.f32r", d)
            io.write_ppm(f"{stem}_{i}_diff.ppm", io.colormap(d, 0.0, 1.0))
    print(f"MAE {report.mean_mae:.4f}  RMSE {report.mean_rmse:.4f}  ({len(ids)} scenes)")
    return EXIT_OK


def cmd_infer(args) -> int:
    net, meta = load_net(args.checkpoint)
    stack_cfg = StackConfig(**meta["stack"])
    events = io.read_events(args.events)
    S = net.cfg.image_size
    if (events.width, events.height) != (S, S):
        raise DataError(f"event sensor {events.width}x{events.height} does not match model size {S}")
    if len(events) == 0:
        log.warning("event file is empty; predicting from an all-zero stack")
    if args.profile or args.correspondences:
        events = warp_events(events, _load_profile(args), "correct")
    vox = voxelize(events, stack_cfg.bins, stack_cfg.layout, stack_cfg.normalize)
    pred = net.predict(vox.grid)
    if not np.all(np.isfinite(pred)):
        raise FloatingPointError("prediction contains non-finite values")
    io.write_raster(args.out, pred)
    print(f"inverse depth map {pred.shape} -> {args.out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = load_config(args)
    out = _out_dir(args, cfg)
    values = [_parse_value(v) for v in args.values.split(",")]
    rows = run_ablation(args.axis, values, cfg)
    table = render_table(rows, args.axis)
    doc = {"axis": args.axis, "fingerprint": config_mod.dataset_fingerprint(cfg),
           "seeds": list(cfg.seeds), "rows": [dataclasses.asdict(r) for r in rows]}
    _write_json(os.path.join(out, f"ablation_{args.axis}.json"), doc)
    with open(os.path.join(out, f"ablation_{args.axis}.txt"), "w") as fh:
        fh.write(table + "\n")
    print(table)
    return EXIT_OK


# --- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evfocal", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="JSON run config")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key by dotted path (repeatable)")
        return sp

    sp = with_config(sub.add_parser("gen-dataset", help="render, simulate and voxelize scenes"))
    sp.add_argument("--out")
    sp.add_argument("--save-events", action="store_true")
    sp.set_defaults(func=cmd_gen_dataset)

    sp = with_config(sub.add_parser("simulate", help="focal stack -> EVFS event file"))
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--stack", help="focal stack directory")
    src.add_argument("--scene-seed", type=int, help="render a procedural scene instead")
    sp.add_argument("--save-stack")
    sp.add_argument("--domain", choices=("clean", "proxy"), default="clean")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_simulate)

    sp = with_config(sub.add_parser("voxelize", help="EVFS events -> EFS1 voxel grid"))
    sp.add_argument("--events", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_voxelize)

    sp = sub.add_parser("correct-breathing", help="warp events by the closest homography")
    sp.add_argument("--events", required=True)
    grp = sp.add_mutually_exclusive_group(required=True)
    grp.add_argument("--profile")
    grp.add_argument("--correspondences")
    sp.add_argument("--save-profile")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_correct_breathing)

    sp = with_config(sub.add_parser("train", help="pretrain on the clean training split"))
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_train)

    sp = with_config(sub.add_parser("finetune", help="continue training on the finetune split"))
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--domain", choices=("clean", "proxy"), default="proxy")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_finetune)

    sp = sub.add_parser("eval", help="MAE/RMSE report on one split and domain")
    sp.add_argument("--manifest", required=True)
    grp = sp.add_mutually_exclusive_group(required=True)
    grp.add_argument("--checkpoint")
    grp.add_argument("--predictions", help="directory of <id>.f32r predicted maps")
    sp.add_argument("--split", default="test")
    sp.add_argument("--domain", default="clean", choices=("clean", "proxy"))
    sp.add_argument("--diff-maps", action="store_true")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("infer", help="event file -> inverse depth raster")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--events", required=True)
    grp = sp.add_mutually_exclusive_group()
    grp.add_argument("--profile")
    grp.add_argument("--correspondences")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_infer)

    sp = with_config(sub.add_parser("ablate", help="retrain across one voxelization axis"))
    sp.add_argument("--axis", required=True, choices=("bin_size", "polarity", "normalization"))
    sp.add_argument("--values", required=True, help="comma-separated, e.g. 1,2,5,10")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, io.FormatError, FileNotFoundError, EstimationError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
