"""Training loop, checkpoint selection and the ablation suite."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field, fields

import numpy as np

from .evaluate import Scorer, cosine_gap, eval_cp, eval_fitb
from .losses import LossWeights, total_loss
from .model import HatConfig, HatModel, forward_full
from .numerics import AdamW, Tape, backward, clip_grad_norm
from .sampling import assemble_batch, build_cp_hard_pairs, epoch_order
from .seeding import substream

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-3
    weight_decay: float = 1e-2
    seed: int = 0
    max_history: int = 10
    loss: LossWeights = field(default_factory=LossWeights)
    disable_cl: bool = False
    disable_am: bool = False
    fixed_margin: bool = False
    history_cap: int | None = None
    grad_clip: float = 5.0
    val_every: int = 1
    val_split: str = "val"

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.lr <= 0 or self.weight_decay < 0 or self.epochs < 0:
            raise ValueError("lr must be > 0, weight_decay and epochs >= 0")

    @property
    def history(self) -> int:
        return self.max_history if self.history_cap is None else self.history_cap

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise KeyError(f"train config has unknown key(s): {', '.join(unknown)}")
        if isinstance(d.get("loss"), dict):
            d["loss"] = LossWeights.from_dict(d["loss"])
        return cls(**d)

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["loss"] = self.loss.to_dict()
        return out


class DivergenceError(RuntimeError):
    def __init__(self, msg, store):
        super().__init__(msg)
        self.store = store


@dataclass
class TrainResult:
    model: HatModel
    log: list[dict]
    best_epoch: int
    best_val_auc: float
    steps: int

    def log_lines(self) -> list[str]:
        return [json.dumps(r, sort_keys=True) for r in self.log]


def train(ds, model_cfg: HatConfig, cfg: TrainConfig, on_step=None) -> TrainResult:
    """Deterministic for fixed (dataset, configs). Returns the best-validation checkpoint.

    ``on_step`` is called after every batch with ``{step, L_FL, L_CL, L_AM, total}``.
    """
    hist = cfg.history
    model_cfg = dataclasses.replace(
        model_cfg, max_history=hist, image_dim=ds.image_dim, title_dim=ds.title_dim
    )
    model = HatModel.create(model_cfg, substream(cfg.seed, "init"), seed=cfg.seed)
    store = model.params
    opt = AdamW(store, lr=cfg.lr, weight_decay=cfg.weight_decay)
    has_val = bool(ds.outfits_in(cfg.val_split)) and cfg.val_split in set(ds.split.values())
    best = (store.snapshot(), -1, -math.inf)
    last_good = store.snapshot()
    records = []
    steps = 0
    for epoch in range(cfg.epochs):
        order = epoch_order(ds, epoch, cfg.seed)
        rng = substream(cfg.seed, "sampling", epoch)
        sums = np.zeros(4)
        n_batches = 0
        clipped = 0
        for b in range(0, len(order), cfg.batch_size):
            batch = assemble_batch(ds, order[b : b + cfg.batch_size], hist, rng)
            if not batch.examples:
                continue
            store.zero_grad()
            with Tape() as tape:
                out = forward_full(model, ds, batch)
                loss = total_loss(out, cfg.loss, not cfg.disable_cl, not cfg.disable_am, cfg.fixed_margin)
            if not np.isfinite(loss.total.data):
                store.restore(last_good)
                raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {n_batches}", store)
            backward(tape, loss.total)
            if clip_grad_norm(store, cfg.grad_clip) > cfg.grad_clip:
                clipped += 1
            if opt.step():
                steps += 1
                last_good = store.snapshot()
            if on_step is not None:
                on_step({"step": steps, "epoch": epoch + 1, **loss.as_record()})
            sums += [loss.focal, loss.contrastive, loss.margin, float(loss.total.data)]
            n_batches += 1
        rec = {
            "epoch": epoch + 1,
            "train_loss": sums[3] / max(n_batches, 1),
            "components": dict(zip(("L_FL", "L_CL", "L_AM"), (sums[:3] / max(n_batches, 1)).tolist())),
            "val_auc": None,
            "steps": steps,
            "clipped_batches": clipped,
        }
        if clipped:
            log.debug("epoch %d: gradient clipped on %d/%d batches", epoch + 1, clipped, n_batches)
        if has_val and ((epoch + 1) % cfg.val_every == 0 or epoch + 1 == cfg.epochs):
            rep = eval_cp(model, ds, "cp_random", hist, cfg.seed, split=cfg.val_split, n_resamples=1)
            rec["val_auc"] = rep.metric
            if rep.metric > best[2]:
                best = (store.snapshot(), epoch + 1, rep.metric)
        elif not has_val:
            best = (store.snapshot(), epoch + 1, math.nan)
        records.append(rec)
        log.info("epoch %d loss %.4f val_auc %s", epoch + 1, rec["train_loss"], rec["val_auc"])
    store.restore(best[0])
    return TrainResult(model, records, best[1], best[2], steps)


# ------------------------------------------------------------------ ablations

VARIANTS = {
    "full": {},
    "no_cl": {"disable_cl": True},
    "no_am": {"disable_am": True},
    "fixed_margin": {"fixed_margin": True},
    "history_0": {"history_cap": 0},
    "history_20": {"history_cap": 20},
    "history_30": {"history_cap": 30},
}

RESULT_COLUMNS = (
    "variant",
    "seed",
    "dataset",
    "max_history",
    "cp_random",
    "cp_hard",
    "fitb_random",
    "fitb_hard",
    "cos_gap",
    "best_epoch",
    "error",
)


def evaluate_variant(model: HatModel, ds, seed: int, max_history: int, n_resamples: int = 1000, pairs=None) -> dict:
    scorer = Scorer(model, ds)
    pairs = build_cp_hard_pairs(ds, "test") if pairs is None else pairs
    row = {}
    for task in ("cp_random", "cp_hard"):
        row[task] = eval_cp(model, ds, task, max_history, seed, n_resamples=n_resamples, pairs=pairs, scorer=scorer).metric
    for task in ("fitb_random", "fitb_hard"):
        row[task] = eval_fitb(model, ds, task, seed, max_history, n_resamples=n_resamples, scorer=scorer).metric
    test = sorted(ds.outfits_in("test"), key=lambda o: o.outfit_id)
    row["cos_gap"] = cosine_gap(scorer.embeddings([o.item_ids for o in test]), [o.shopper_id for o in test])
    return row


def run_variant(ds, model_cfg: HatConfig, base: TrainConfig, variant: str, n_resamples: int = 1000, pairs=None) -> dict:
    cfg = dataclasses.replace(base, **VARIANTS[variant])
    row = {"variant": variant, "seed": cfg.seed, "dataset": ds.fingerprint(), "max_history": cfg.history, "error": ""}
    try:
        res = train(ds, model_cfg, cfg)
        row["best_epoch"] = res.best_epoch
        row.update(evaluate_variant(res.model, ds, cfg.seed, cfg.history, n_resamples, pairs))
    except Exception as e:  # keep going with the other variants
        log.exception("variant %s failed", variant)
        row["error"] = f"{type(e).__name__}: {e}"
    return row


def run_ablation_suite(ds, model_cfg: HatConfig, base: TrainConfig, variants=None, n_resamples: int = 1000) -> list[dict]:
    """Train and evaluate each variant on the same dataset, split and seed."""
    variants = list(VARIANTS) if variants is None else list(variants)
    pairs = build_cp_hard_pairs(ds, "test")
    return [run_variant(ds, model_cfg, base, v, n_resamples, pairs) for v in variants]


def write_results_table(rows, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(RESULT_COLUMNS) + "\n")
        for r in rows:
            cells = []
            for c in RESULT_COLUMNS:
                v = r.get(c, "")
                cells.append(f"{v:.6f}" if isinstance(v, float) else str(v))
            fh.write("\t".join(cells) + "\n")


def read_results_table(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        return [dict(zip(header, line.rstrip("\n").split("\t"))) for line in fh if line.strip()]
