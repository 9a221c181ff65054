"""CP / FITB evaluation, bootstrap intervals and embedding export."""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .model import HatModel, outfit_features
from .numerics import Tensor
from .sampling import build_cp_hard_pairs, build_fitb_questions, make_random_negative, sample_history
from .seeding import substream

log = logging.getLogger(__name__)

TASKS = ("cp_random", "cp_hard", "fitb_random", "fitb_hard")


@dataclass
class EvalReport:
    task: str
    metric: float
    ci_lower: float
    ci_upper: float
    n: int
    seed: int
    n_resamples: int
    level: float = 0.95
    extra: dict = field(default_factory=dict)

    @property
    def contains_point(self) -> bool:
        return self.ci_lower <= self.metric <= self.ci_upper

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


# ------------------------------------------------------------------ metrics


def auc(pos_scores, neg_scores) -> float:
    """Mann-Whitney AUC: P(pos > neg) with ties counted as one half."""
    pos = np.asarray(pos_scores, dtype=np.float64).ravel()
    neg = np.asarray(neg_scores, dtype=np.float64).ravel()
    if pos.size == 0 or neg.size == 0:
        raise ValueError("auc needs at least one positive and one negative score")
    return kernels.pair_count(pos, neg) / (2.0 * pos.size * neg.size)


def _percentiles(values, level):
    lo = (1.0 - level) / 2.0
    return float(np.quantile(values, lo)), float(np.quantile(values, 1.0 - lo))


def bootstrap_ci(outcomes, statistic: str = "accuracy", n_resamples: int = 10_000, level: float = 0.95, seed: int = 0):
    """Percentile bootstrap interval.

    ``statistic="accuracy"``: ``outcomes`` is a 1-d array of per-question
    results, resampled with replacement. ``statistic="auc"``: ``outcomes`` is
    ``(pos_scores, neg_scores)`` and each side is resampled separately, so no
    resample can lose a class.

    Returns ``(lower, upper, resampled_statistics)``.
    """
    if n_resamples < 1:
        raise ValueError("n_resamples must be >= 1")
    rng = substream(seed, "bootstrap")
    chunk = 512
    if statistic == "accuracy":
        x = np.asarray(outcomes, dtype=np.float64)
        if x.size == 0:
            raise ValueError("bootstrap_ci: no outcomes")
        stats = np.empty(n_resamples)
        for s in range(0, n_resamples, chunk):
            r = min(chunk, n_resamples - s)
            idx = rng.integers(0, x.size, size=(r, x.size))
            stats[s : s + r] = x[idx].mean(axis=1)
    elif statistic == "auc":
        pos, neg = (np.asarray(v, dtype=np.float64) for v in outcomes)
        if pos.size == 0 or neg.size == 0:
            raise ValueError("bootstrap_ci: AUC needs both classes")
        stats = np.empty(n_resamples)
        for s in range(0, n_resamples, chunk):
            r = min(chunk, n_resamples - s)
            pi = rng.integers(0, pos.size, size=(r, pos.size))
            ni = rng.integers(0, neg.size, size=(r, neg.size))
            stats[s : s + r] = kernels.bootstrap_pair_counts(pos, neg, pi, ni) / (2.0 * pos.size * neg.size)
    else:
        raise ValueError(f"unknown statistic {statistic!r}")
    lo, hi = _percentiles(stats, level)
    return lo, hi, stats


def cosine_gap(E: np.ndarray, shoppers) -> float:
    """Mean intra-shopper minus mean inter-shopper cosine similarity (self-pairs excluded)."""
    E = np.asarray(E, dtype=np.float64)
    En = E / np.maximum(np.linalg.norm(E, axis=1, keepdims=True), 1e-12)
    C = En @ En.T
    lab = np.asarray(shoppers)
    same = lab[:, None] == lab[None, :]
    off = ~np.eye(len(lab), dtype=bool)
    if not (same & off).any() or same.all():
        return math.nan  # needs both intra- and inter-shopper pairs
    return float(C[same & off].mean() - C[~same].mean())


# ------------------------------------------------------------------ scoring


class Scorer:
    """Encodes each distinct item tuple once and scores (target, history) pairs in chunks."""

    def __init__(self, model: HatModel, ds, chunk: int = 512):
        self.model = model
        self.ds = ds
        self.chunk = chunk
        self._rows: dict[tuple, int] = {}
        self._E: list[np.ndarray] = []

    def rows(self, item_tuples) -> list[int]:
        new = [t for t in dict.fromkeys(map(tuple, item_tuples)) if t not in self._rows]
        for s in range(0, len(new), self.chunk):
            part = new[s : s + self.chunk]
            enc = self.model.encode_outfits([outfit_features(self.ds, t) for t in part])
            for k, t in enumerate(part):
                self._rows[t] = len(self._E)
                self._E.append(enc.E.data[k])
        return [self._rows[tuple(t)] for t in item_tuples]

    def embeddings(self, item_tuples) -> np.ndarray:
        return np.array([self._E[r] for r in self.rows(item_tuples)])

    def score(self, targets, histories) -> np.ndarray:
        """``targets``: item tuples; ``histories``: list of lists of item tuples."""
        t_rows = self.rows(targets)
        h_rows = [self.rows(h) for h in histories]
        E_all = Tensor(np.array(self._E))
        out = np.empty(len(t_rows))
        for s in range(0, len(t_rows), self.chunk):
            out[s : s + self.chunk] = self.model.score(E_all, t_rows[s : s + self.chunk], h_rows[s : s + self.chunk]).data
        return out


def frozen_histories(ds, max_history: int, seed: int, split: str = "train") -> dict[str, list]:
    """One history per shopper, fixed for a given seed."""
    out = {}
    for k, sid in enumerate(sorted(ds.shoppers)):
        out[sid] = [o.item_ids for o in sample_history(ds, sid, None, max_history, substream(seed, "history", k), split)]
    return out


def _empty_history_count(hist, shoppers) -> int:
    return sum(1 for s in set(shoppers) if not hist[s])


def eval_cp(
    model: HatModel,
    ds,
    mode: str = "cp_random",
    max_history: int | None = None,
    seed: int = 0,
    split: str = "test",
    n_resamples: int = 10_000,
    level: float = 0.95,
    pairs=None,
    scorer: Scorer | None = None,
) -> EvalReport:
    """AUC of positives vs CP-Random or CP-Hard negatives, each scored under its shopper's frozen history."""
    if mode not in ("cp_random", "cp_hard"):
        raise ValueError(f"unknown CP mode {mode!r}")
    max_history = model.cfg.max_history if max_history is None else max_history
    hist = frozen_histories(ds, max_history, seed)
    scorer = scorer or Scorer(model, ds)
    positives = sorted(ds.outfits_in(split), key=lambda o: o.outfit_id)
    if not positives:
        raise ValueError(f"no outfits in split {split!r}")
    p_scores = scorer.score([o.item_ids for o in positives], [hist[o.shopper_id] for o in positives])
    if mode == "cp_random":
        rng = substream(seed, "cp_random")
        stats = Counter()
        negs = [(o.shopper_id, make_random_negative(o, ds, rng, stats).item_ids) for o in positives]
    else:
        pairs = build_cp_hard_pairs(ds, split) if pairs is None else pairs
        if not pairs:
            raise ValueError("cp_hard: empty pair list")
        negs = [(s, ds.outfits[o].item_ids) for s, o in pairs]
    n_scores = scorer.score([t for _, t in negs], [hist[s] for s, _ in negs])
    point = auc(p_scores, n_scores)
    lo, hi, _ = bootstrap_ci((p_scores, n_scores), "auc", n_resamples, level, seed)
    empty = _empty_history_count(hist, [o.shopper_id for o in positives] + [s for s, _ in negs])
    if empty and max_history > 0:
        log.info("%d shoppers scored without history", empty)
    return EvalReport(
        mode,
        point,
        lo,
        hi,
        len(p_scores) + len(n_scores),
        seed,
        n_resamples,
        level,
        {"n_pos": len(p_scores), "n_neg": len(n_scores), "empty_history_shoppers": empty, "max_history": max_history},
    )


def eval_fitb(
    model: HatModel,
    ds,
    mode: str = "fitb_hard",
    seed: int = 0,
    max_history: int | None = None,
    split: str = "test",
    n_resamples: int = 10_000,
    level: float = 0.95,
    questions=None,
    scorer: Scorer | None = None,
) -> EvalReport:
    """Accuracy of picking the true item among four candidates by compatibility score."""
    kind = {"fitb_random": "random", "fitb_hard": "hard", "random": "random", "hard": "hard"}.get(mode)
    if kind is None:
        raise ValueError(f"unknown FITB mode {mode!r}")
    max_history = model.cfg.max_history if max_history is None else max_history
    hist = frozen_histories(ds, max_history, seed)
    scorer = scorer or Scorer(model, ds)
    if questions is None:
        questions = build_fitb_questions(ds, split, kind, substream(seed, "fitb", 0 if kind == "random" else 1))
    if not questions:
        raise ValueError(f"no FITB questions for split {split!r}")
    targets, hists = [], []
    for q in questions:
        for cand in q.candidate_outfits():
            targets.append(cand)
            hists.append(hist[q.shopper_id])
    scores = scorer.score(targets, hists).reshape(len(questions), 4)
    pred = np.argmax(scores, axis=1)
    ties = int(np.sum((scores == scores.max(axis=1, keepdims=True)).sum(axis=1) > 1))
    correct = (pred == np.array([q.answer_index for q in questions])).astype(np.float64)
    lo, hi, _ = bootstrap_ci(correct, "accuracy", n_resamples, level, seed)
    return EvalReport(
        f"fitb_{kind}",
        float(correct.mean()),
        lo,
        hi,
        len(questions),
        seed,
        n_resamples,
        level,
        {"ties": ties, "max_history": max_history},
    )


def evaluate_task(model, ds, task: str, seed: int = 0, **kw) -> EvalReport:
    if task in ("cp_random", "cp_hard"):
        return eval_cp(model, ds, task, seed=seed, **kw)
    if task in ("fitb_random", "fitb_hard"):
        return eval_fitb(model, ds, task, seed=seed, **kw)
    raise ValueError(f"unknown task {task!r}; expected one of {', '.join(TASKS)}")


# ------------------------------------------------------------------ export


def export_embeddings(model: HatModel, ds, split: str | None, path, seed: int | None = None) -> int:
    """Write one JSON line per outfit with its pooled embedding; first line is a header."""
    outfits = sorted(ds.outfits_in(split), key=lambda o: o.outfit_id)
    scorer = Scorer(model, ds)
    E = scorer.embeddings([o.item_ids for o in outfits]) if outfits else np.zeros((0, model.cfg.d))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"format": "hat-embeddings", "dim": model.cfg.d, "split": split, "seed": seed}) + "\n")
        for o, e in zip(outfits, E):
            fh.write(json.dumps({"outfit_id": o.outfit_id, "shopper_id": o.shopper_id, "embedding": e.tolist()}) + "\n")
    return len(outfits)


def load_embeddings(path) -> tuple[dict, list[dict]]:
    with open(path, encoding="utf-8") as fh:
        lines = [json.loads(l) for l in fh if l.strip()]
    return lines[0], lines[1:]
