"""Command-line entry points: generate, train, eval, ablate, replay.

Every command writes ``manifest.json`` into its output directory before doing
any work. Failures print one JSON line ``{"error": <class>, "message": ...}``
on stderr and exit nonzero (2 for usage errors, 1 otherwise).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import yaml

from . import __version__
from .data import DatasetError, SynthConfig, generate_synthetic, load_dir, save_dataset, split_dataset
from .evaluate import TASKS, evaluate_task
from .model import HatConfig, HatModel
from .numerics import load_checkpoint, save_checkpoint
from .sampling import SamplingError
from .training import VARIANTS, TrainConfig, run_ablation_suite, train, write_results_table

log = logging.getLogger("hat")

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
SECTIONS = ("seed", "synth", "split", "model", "train", "eval", "ablate")


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ config


def load_config(path) -> dict:
    """Read a YAML run config and resolve every section to explicit values."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    if not isinstance(raw, dict):
        raise UsageError(f"{path}: top level must be a mapping")
    return resolve_config(raw)


def resolve_config(raw: dict) -> dict:
    unknown = sorted(set(raw) - set(SECTIONS))
    if unknown:
        raise UsageError(f"config has unknown section(s): {', '.join(unknown)}")
    try:
        out = {"seed": int(raw.get("seed", 0))}
        out["synth"] = SynthConfig.from_dict(raw["synth"]).to_dict() if "synth" in raw else None
        split = dict(raw.get("split") or {})
        out["split"] = {"fractions": [float(x) for x in split.pop("fractions", (0.8, 0.1, 0.1))]}
        if split:
            raise KeyError(f"split config has unknown key(s): {', '.join(sorted(split))}")
        out["model"] = HatConfig.from_dict(raw.get("model") or {}).to_dict()
        train_raw = dict(raw.get("train") or {})
        train_raw.pop("seed", None)
        out["train"] = TrainConfig.from_dict(train_raw).to_dict()
        ev = dict(raw.get("eval") or {})
        out["eval"] = {"n_resamples": int(ev.pop("n_resamples", 10_000)), "level": float(ev.pop("level", 0.95))}
        if ev:
            raise KeyError(f"eval config has unknown key(s): {', '.join(sorted(ev))}")
        ab = dict(raw.get("ablate") or {})
        out["ablate"] = {
            "variants": list(ab.pop("variants", list(VARIANTS))),
            "seeds": [int(s) for s in ab.pop("seeds", [out["seed"]])],
            "n_resamples": int(ab.pop("n_resamples", 1000)),
        }
        if ab:
            raise KeyError(f"ablate config has unknown key(s): {', '.join(sorted(ab))}")
    except KeyError as e:
        raise UsageError(e.args[0] if e.args else str(e)) from None
    except (TypeError, ValueError) as e:
        raise UsageError(f"invalid config: {e}") from None
    bad = [v for v in out["ablate"]["variants"] if v not in VARIANTS]
    if bad:
        raise UsageError(f"unknown ablation variant(s) {', '.join(bad)}; expected one of {', '.join(VARIANTS)}")
    return out


def _train_config(cfg: dict, seed: int, max_history: int | None) -> TrainConfig:
    t = dict(cfg["train"], seed=seed)
    if max_history is not None:
        t["max_history"] = max_history
        t["history_cap"] = None
    return TrainConfig.from_dict(t)


# ------------------------------------------------------------------ io helpers


def _out_dir(path) -> Path:
    if path is None:
        raise UsageError("--out is required")
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    return d


def write_manifest(out: Path, **fields) -> dict:
    manifest = {
        "command": fields.get("command"),
        "config_path": fields.get("config_path"),
        "config": fields.get("config"),
        "seed": fields.get("seed"),
        "dataset_fingerprint": fields.get("dataset_fingerprint"),
        "data_dir": fields.get("data_dir"),
        "checkpoint": fields.get("checkpoint"),
        "out_dir": str(out),
        "args": fields.get("args", {}),
        "version": __version__,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


def _write_jsonl(path: Path, records) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def _load_data(path):
    if path is None:
        raise UsageError("--data is required")
    if not Path(path).is_dir():
        raise UsageError(f"data directory not found: {path}")
    return load_dir(path)


def _clean(x):
    return None if isinstance(x, float) and not math.isfinite(x) else x


# ------------------------------------------------------------------ commands


def cmd_generate(args) -> int:
    cfg = load_config(args.config)
    if cfg["synth"] is None:
        raise UsageError("config is missing the 'synth' section")
    seed = cfg["seed"] if args.seed is None else args.seed
    out = _out_dir(args.out)
    fields = dict(command="generate", config_path=str(args.config), config=cfg, seed=seed)
    write_manifest(out, **fields)
    ds = generate_synthetic(SynthConfig.from_dict(cfg["synth"]), seed)
    ds = split_dataset(ds, tuple(cfg["split"]["fractions"]), seed)
    save_dataset(ds, out)
    write_manifest(out, **fields, dataset_fingerprint=ds.fingerprint())
    log.info("wrote %d items, %d outfits, %d shoppers to %s", len(ds.items), len(ds.outfits), len(ds.shoppers), out)
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    seed = cfg["seed"] if args.seed is None else args.seed
    ds = _load_data(args.data)
    out = _out_dir(args.out)
    tcfg = _train_config(cfg, seed, args.max_history)
    ckpt = out / "checkpoint.hat"
    write_manifest(
        out,
        command="train",
        config_path=str(args.config),
        config=cfg,
        seed=seed,
        dataset_fingerprint=ds.fingerprint(),
        data_dir=str(args.data),
        checkpoint=str(ckpt),
        args={"max_history": args.max_history},
    )
    steps = []
    res = train(ds, HatConfig.from_dict(cfg["model"]), tcfg, on_step=steps.append)
    _write_jsonl(out / "losses.jsonl", steps)
    _write_jsonl(out / "metrics.jsonl", res.log)
    extra = {
        "model": res.model.cfg.to_dict(),
        "train": tcfg.to_dict(),
        "dataset_fingerprint": ds.fingerprint(),
        "best_epoch": res.best_epoch,
        "best_val_auc": _clean(res.best_val_auc),
    }
    save_checkpoint(res.model.params, ckpt, extra)
    log.info("best epoch %d (val auc %s); checkpoint %s", res.best_epoch, res.best_val_auc, ckpt)
    return 0


def load_model(path) -> HatModel:
    try:
        store, extra = load_checkpoint(path)
    except FileNotFoundError:
        raise UsageError(f"checkpoint not found: {path}") from None
    if "model" not in extra:
        raise UsageError(f"{path}: checkpoint has no model config")
    return HatModel(HatConfig.from_dict(extra["model"]), store)


def cmd_eval(args) -> int:
    if args.task not in TASKS:
        raise UsageError(f"unknown task {args.task!r}; expected one of {', '.join(TASKS)}")
    if args.checkpoint is None:
        raise UsageError("--checkpoint is required")
    cfg = load_config(args.config) if args.config else resolve_config({})
    seed = cfg["seed"] if args.seed is None else args.seed
    model = load_model(args.checkpoint)
    ds = _load_data(args.data)
    n_res = cfg["eval"]["n_resamples"] if args.resamples is None else args.resamples
    if n_res < 1:
        raise UsageError("--resamples must be >= 1")
    out = _out_dir(args.out) if args.out else None
    if out is not None:
        write_manifest(
            out,
            command="eval",
            config_path=args.config,
            config=cfg,
            seed=seed,
            dataset_fingerprint=ds.fingerprint(),
            data_dir=str(args.data),
            checkpoint=str(args.checkpoint),
            args={"task": args.task, "max_history": args.max_history, "resamples": n_res},
        )
    rep = evaluate_task(
        model, ds, args.task, seed=seed, max_history=args.max_history, n_resamples=n_res, level=cfg["eval"]["level"]
    )
    line = rep.to_json()
    if out is not None:
        (out / f"report_{args.task}.jsonl").write_text(line + "\n", encoding="utf-8")
    print(line)
    return 0


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    ds = _load_data(args.data)
    out = _out_dir(args.out)
    seeds = [args.seed] if args.seed is not None else cfg["ablate"]["seeds"]
    write_manifest(
        out,
        command="ablate",
        config_path=str(args.config),
        config=cfg,
        seed=seeds[0],
        dataset_fingerprint=ds.fingerprint(),
        data_dir=str(args.data),
        args={"seeds": seeds},
    )
    model_cfg = HatConfig.from_dict(cfg["model"])
    rows = []
    for seed in seeds:
        base = _train_config(cfg, seed, args.max_history)
        rows += run_ablation_suite(ds, model_cfg, base, cfg["ablate"]["variants"], cfg["ablate"]["n_resamples"])
    write_results_table(rows, out / "results.tsv")
    failed = [r for r in rows if r.get("error")]
    for r in failed:
        log.error("variant %s seed %s failed: %s", r["variant"], r["seed"], r["error"])
    return 1 if failed else 0


def cmd_replay(args) -> int:
    """Re-run the command recorded in a manifest, into ``--out`` (or its original directory)."""
    try:
        m = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise UsageError(f"manifest not found: {args.manifest}") from None
    cfg_path = Path(args.out or m["out_dir"]) / "replay_config.yaml"
    Path(cfg_path).parent.mkdir(parents=True, exist_ok=True)
    cfg_path.write_text(yaml.safe_dump(_yaml_config(m["config"]), sort_keys=True), encoding="utf-8")
    extra = m.get("args") or {}
    ns = argparse.Namespace(
        config=str(cfg_path),
        data=m.get("data_dir"),
        out=args.out or m["out_dir"],
        seed=m.get("seed"),
        checkpoint=m.get("checkpoint"),
        task=extra.get("task"),
        max_history=extra.get("max_history"),
        resamples=extra.get("resamples"),
    )
    if m["command"] == "ablate":
        ns.seed = None
        cfg = dict(m["config"], ablate=dict(m["config"]["ablate"], seeds=extra.get("seeds", [m["seed"]])))
        cfg_path.write_text(yaml.safe_dump(_yaml_config(cfg), sort_keys=True), encoding="utf-8")
    handler = COMMANDS.get(m["command"])
    if handler is None or m["command"] == "replay":
        raise UsageError(f"manifest has unknown command {m['command']!r}")
    return handler(ns)


def _yaml_config(cfg: dict) -> dict:
    return {k: v for k, v in cfg.items() if v is not None}


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate, "replay": cmd_replay}


# ------------------------------------------------------------------ entry


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hat", description="History-aware outfit compatibility: data, training, evaluation.")
    p.add_argument("--version", action="version", version=f"hat {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)

    t = sub.add_parser("train", help="train a model and write a checkpoint plus logs")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--max-history", type=int, dest="max_history")

    e = sub.add_parser("eval", help="evaluate a checkpoint on one task")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--task", required=True, help=f"one of {', '.join(TASKS)}")
    e.add_argument("--seed", type=int)
    e.add_argument("--config")
    e.add_argument("--out")
    e.add_argument("--max-history", type=int, dest="max_history")
    e.add_argument("--resamples", type=int)

    a = sub.add_parser("ablate", help="train and evaluate every ablation variant")
    a.add_argument("--config", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--seed", type=int)
    a.add_argument("--max-history", type=int, dest="max_history")

    r = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    r.add_argument("--manifest", required=True)
    r.add_argument("--out")
    return p


def _setup_logging() -> None:
    level = os.environ.get("HAT_LOG_LEVEL", "info").strip().lower()
    if level not in LOG_LEVELS:
        raise UsageError(f"HAT_LOG_LEVEL must be one of {', '.join(LOG_LEVELS)}, got {level!r}")
    logging.basicConfig(level=LOG_LEVELS[level], stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


def _fail(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": " ".join(str(message).split())}) + "\n")
    return code


def main(argv=None) -> int:
    try:
        _setup_logging()
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as e:
        return _fail("UsageError", str(e), 2)
    except DatasetError as e:
        return _fail("DatasetError", "; ".join(e.problems), 1)
    except SamplingError as e:
        return _fail("SamplingError", str(e), 1)
    except (OSError, ValueError, KeyError, RuntimeError) as e:
        return _fail(type(e).__name__, str(e), 1)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
