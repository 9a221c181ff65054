"""Negatives, weak negatives, CP-Hard pairs, FITB questions, histories and batches."""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .data import Dataset, Outfit
from .seeding import substream

log = logging.getLogger(__name__)


class SamplingError(ValueError):
    pass


@dataclass(frozen=True)
class WeakNegative:
    source_outfit_id: str
    swapped_index: int
    replacement_item_id: str
    original_item_id: str
    outfit: Outfit


@dataclass(frozen=True)
class FitbQuestion:
    outfit_id: str
    shopper_id: str
    partial_item_ids: tuple[str, ...]
    masked_position: int
    correct_item_id: str
    distractor_item_ids: tuple[str, ...]
    candidate_item_ids: tuple[str, ...]
    answer_index: int
    mode: str

    def candidate_outfits(self) -> list[tuple[str, ...]]:
        out = []
        for c in self.candidate_item_ids:
            items = list(self.partial_item_ids)
            items.insert(self.masked_position, c)
            out.append(tuple(items))
        return out


@dataclass
class Example:
    shopper_id: str
    positive: Outfit
    negative: Outfit
    weak: Outfit
    history: list[Outfit]

    @property
    def swapped_index(self) -> int:
        return self.weak.swapped_index


@dataclass
class TrainBatch:
    examples: list[Example] = field(default_factory=list)
    dropped: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.examples)

    def label_counts(self) -> dict[str, int]:
        c = Counter()
        for ex in self.examples:
            c[ex.positive.label] += 1
            c[ex.negative.label] += 1
            c[ex.weak.label] += 1
        return dict(c)


def _alternatives(ds: Dataset, item_id: str, exclude) -> list[str]:
    return [i for i in ds.category_index[ds.category_of(item_id)] if i != item_id and i not in exclude]


def make_random_negative(outfit: Outfit, ds: Dataset, rng: np.random.Generator, stats: Counter | None = None) -> Outfit:
    """Replace every item with a uniformly drawn different item of its category."""
    new = []
    for k, item in enumerate(outfit.item_ids):
        taken = set(new) | set(outfit.item_ids[k + 1 :])
        alts = _alternatives(ds, item, taken)
        if not alts:
            if stats is not None:
                stats["negative_kept_original"] += 1
            new.append(item)
            continue
        new.append(alts[int(rng.integers(len(alts)))])
    return Outfit(f"{outfit.outfit_id}#neg", new, outfit.shopper_id, label="negative")


def swappable_positions(outfit: Outfit, ds: Dataset) -> list[int]:
    return [k for k, i in enumerate(outfit.item_ids) if _alternatives(ds, i, outfit.item_ids)]


def make_weak_negative(outfit: Outfit, ds: Dataset, rng: np.random.Generator) -> WeakNegative:
    """Swap exactly one item for a different item of the same category."""
    positions = swappable_positions(outfit, ds)
    if not positions:
        raise SamplingError(f"outfit {outfit.outfit_id}: no position has a same-category alternative")
    pos = positions[int(rng.integers(len(positions)))]
    original = outfit.item_ids[pos]
    alts = _alternatives(ds, original, outfit.item_ids)
    repl = alts[int(rng.integers(len(alts)))]
    items = list(outfit.item_ids)
    items[pos] = repl
    weak = Outfit(f"{outfit.outfit_id}#weak", items, outfit.shopper_id, label="weak_negative", swapped_index=pos)
    return WeakNegative(outfit.outfit_id, pos, repl, original, weak)


def build_cp_hard_pairs(ds: Dataset, split: str | None = "test") -> list[tuple[str, str]]:
    """(shopper, other shopper's outfit) pairs sharing at least one item.

    Overlap is checked against all of the shopper's outfits regardless of
    split; the candidate negatives are restricted to ``split``.
    """
    shopper_ids = sorted(ds.shoppers)
    cands = sorted(ds.outfits_in(split), key=lambda o: o.outfit_id)
    if len(shopper_ids) < 2 or not cands:
        return []
    out_ptr, out_items = kernels.to_csr([ds.rows(o.item_ids) for o in cands])
    grp_ptr, grp_items = kernels.to_csr(
        [sorted({r for o in ds.outfits_of(s) for r in ds.rows(o.item_ids)}) for s in shopper_ids]
    )
    hit = kernels.overlap_matrix(out_ptr, out_items, grp_ptr, grp_items, len(ds.items))
    pairs = []
    for g, s in enumerate(shopper_ids):
        for k in np.flatnonzero(hit[g]):
            if cands[k].shopper_id != s:
                pairs.append((s, cands[k].outfit_id))
    return pairs


def build_fitb_questions(
    ds: Dataset, split: str | None, mode: str, rng: np.random.Generator, stats: Counter | None = None
) -> list[FitbQuestion]:
    if mode not in ("random", "hard"):
        raise ValueError(f"unknown FITB mode {mode!r}; expected 'random' or 'hard'")
    all_items = ds.item_ids
    questions = []
    for o in sorted(ds.outfits_in(split), key=lambda o: o.outfit_id):
        pos = int(rng.integers(len(o.item_ids)))
        correct = o.item_ids[pos]
        partial = o.item_ids[:pos] + o.item_ids[pos + 1 :]
        exclude = set(o.item_ids)
        if mode == "hard":
            pool = _alternatives(ds, correct, exclude)
            if len(pool) >= 3:
                distractors = [pool[i] for i in rng.choice(len(pool), size=3, replace=False)]
            else:
                if stats is not None:
                    stats["fitb_hard_short_category"] += 1
                log.warning("category of %s has fewer than 3 alternatives; topping up at random", correct)
                distractors = list(pool)
                rest = [i for i in all_items if i not in exclude and i not in distractors]
                distractors += [rest[i] for i in rng.choice(len(rest), size=3 - len(pool), replace=False)]
        else:
            n = len(all_items)
            distractors = []
            while len(distractors) < 3:
                cand = all_items[int(rng.integers(n))]
                if cand not in exclude and cand not in distractors:
                    distractors.append(cand)
        candidates = [correct] + distractors
        order = rng.permutation(4)
        candidates = [candidates[k] for k in order]
        questions.append(
            FitbQuestion(
                o.outfit_id,
                o.shopper_id,
                tuple(partial),
                pos,
                correct,
                tuple(distractors),
                tuple(candidates),
                int(np.flatnonzero(order == 0)[0]),
                mode,
            )
        )
    return questions


def sample_history(
    ds: Dataset, shopper_id: str, target_outfit_id: str | None, max_history: int, rng: np.random.Generator, split="train"
) -> list[Outfit]:
    """The shopper's outfits (minus the target), uniformly subsampled to ``max_history``."""
    if max_history < 0:
        raise ValueError("max_history must be >= 0")
    pool = [o for o in ds.outfits_of(shopper_id, split) if o.outfit_id != target_outfit_id]
    if max_history == 0:
        return []
    if len(pool) <= max_history:
        return pool
    keep = np.sort(rng.choice(len(pool), size=max_history, replace=False))
    return [pool[k] for k in keep]


def epoch_order(ds: Dataset, epoch: int, seed: int, split: str = "train") -> list[str]:
    """Permutation of training positives for one epoch; pure in (epoch, seed)."""
    ids = sorted(o.outfit_id for o in ds.outfits_in(split))
    perm = substream(seed, "epoch", epoch).permutation(len(ids))
    return [ids[k] for k in perm]


def assemble_batch(ds: Dataset, target_ids, max_history: int, rng: np.random.Generator, split="train") -> TrainBatch:
    """One example per target positive: its random negative, weak negative and a shared history."""
    batch = TrainBatch()
    for oid in target_ids:
        pos = ds.outfits[oid]
        try:
            weak = make_weak_negative(pos, ds, rng).outfit
            neg = make_random_negative(pos, ds, rng)
            hist = sample_history(ds, pos.shopper_id, oid, max_history, rng, split)
        except SamplingError as e:
            log.warning("dropping example %s: %s", oid, e)
            batch.dropped.append(oid)
            continue
        batch.examples.append(Example(pos.shopper_id, pos, neg, weak, hist))
    return batch


# -------------------------------------------------------------- export/import


def save_pairs(pairs, path, seed: int | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s, o in pairs:
            fh.write(json.dumps({"shopper_id": s, "outfit_id": o, "seed": seed}) + "\n")


def load_pairs(path) -> list[tuple[str, str]]:
    with open(path, encoding="utf-8") as fh:
        return [(r["shopper_id"], r["outfit_id"]) for r in map(json.loads, filter(str.strip, fh))]


def save_questions(questions, path, seed: int | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for q in questions:
            rec = asdict(q)
            rec["seed"] = seed
            fh.write(json.dumps(rec) + "\n")


def load_questions(path) -> list[FitbQuestion]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in filter(str.strip, fh):
            r = json.loads(line)
            r.pop("seed", None)
            for k in ("partial_item_ids", "distractor_item_ids", "candidate_item_ids"):
                r[k] = tuple(r[k])
            out.append(FitbQuestion(**r))
    return out
