"""Items, outfits, shoppers; JSONL ingestion and a synthetic style-cluster generator."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

log = logging.getLogger(__name__)

MAX_OUTFIT_ITEMS = 20
LABELS = ("positive", "negative", "weak_negative")
SPLITS = ("train", "val", "test")


class DatasetError(ValueError):
    """Raised with every validation problem found, one per line."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("\n".join(self.problems))


@dataclass(frozen=True)
class Item:
    item_id: str
    category_id: str
    image_embedding: np.ndarray = field(repr=False, compare=False)
    title_embedding: np.ndarray = field(repr=False, compare=False)


@dataclass(frozen=True)
class Outfit:
    outfit_id: str
    item_ids: tuple[str, ...]
    shopper_id: str
    label: str = "positive"
    swapped_index: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "item_ids", tuple(self.item_ids))
        if not self.item_ids:
            raise DatasetError(f"outfit {self.outfit_id}: empty item list")
        if len(set(self.item_ids)) != len(self.item_ids):
            raise DatasetError(f"outfit {self.outfit_id}: duplicate item ids")
        if self.label not in LABELS:
            raise DatasetError(f"outfit {self.outfit_id}: unknown label {self.label!r}")
        if (self.label == "weak_negative") != (self.swapped_index is not None):
            raise DatasetError(f"outfit {self.outfit_id}: swapped_index must be set iff label is weak_negative")
        if self.swapped_index is not None and not 0 <= self.swapped_index < len(self.item_ids):
            raise DatasetError(f"outfit {self.outfit_id}: swapped_index {self.swapped_index} out of range")


@dataclass(frozen=True)
class ShopperHistory:
    shopper_id: str
    outfit_ids: tuple[str, ...]
    ordered: bool = False


class Dataset:
    """Cross-referenced, read-only view over items, outfits and shoppers."""

    def __init__(self, items, outfits, shoppers, split=None, max_items=MAX_OUTFIT_ITEMS, meta=None):
        self.items: dict[str, Item] = {it.item_id: it for it in items}
        self.outfits: dict[str, Outfit] = {o.outfit_id: o for o in outfits}
        self.shoppers: dict[str, ShopperHistory] = {s.shopper_id: s for s in shoppers}
        self.split: dict[str, str] = dict(split or {})
        self.max_items = max_items
        self.meta = meta or {}
        self._validate(items, outfits, shoppers)

        self.item_ids = list(self.items)
        self.item_index = {iid: k for k, iid in enumerate(self.item_ids)}
        self.category_index: dict[str, list[str]] = {}
        for it in self.items.values():
            self.category_index.setdefault(it.category_id, []).append(it.item_id)
        img = np.array([it.image_embedding for it in self.items.values()], dtype=np.float64)
        txt = np.array([it.title_embedding for it in self.items.values()], dtype=np.float64)
        self.features = np.concatenate([img, txt], axis=1)
        self.image_dim = img.shape[1]
        self.title_dim = txt.shape[1]

    def _validate(self, items, outfits, shoppers):
        problems = []
        if not outfits:
            problems.append("no outfits")
        for kind, recs, key in (("item", items, "item_id"), ("outfit", outfits, "outfit_id"), ("shopper", shoppers, "shopper_id")):
            seen = set()
            for r in recs:
                k = getattr(r, key)
                if k in seen:
                    problems.append(f"duplicate {kind} id {k}")
                seen.add(k)
        if items:
            di = {len(it.image_embedding) for it in items}
            dt = {len(it.title_embedding) for it in items}
            if len(di) > 1 or len(dt) > 1:
                problems.append(f"embedding length mismatch: image {sorted(di)}, title {sorted(dt)}")
        dangling = []
        for o in outfits:
            missing = [i for i in o.item_ids if i not in self.items]
            if missing:
                dangling.append((o.outfit_id, missing))
            if not 2 <= len(o.item_ids) <= self.max_items:
                problems.append(f"outfit {o.outfit_id}: {len(o.item_ids)} items, expected 2..{self.max_items}")
            if o.shopper_id not in self.shoppers:
                problems.append(f"outfit {o.outfit_id}: unknown shopper {o.shopper_id}")
        if dangling:
            detail = "; ".join(f"{oid}: {', '.join(m)}" for oid, m in dangling)
            problems.append(f"dangling item references in outfits {sorted({oid for oid, _ in dangling})} ({detail})")
        for s in shoppers:
            for oid in s.outfit_ids:
                if oid not in self.outfits:
                    problems.append(f"shopper {s.shopper_id}: unknown outfit {oid}")
                elif self.outfits[oid].shopper_id != s.shopper_id:
                    problems.append(f"shopper {s.shopper_id}: outfit {oid} belongs to {self.outfits[oid].shopper_id}")
        for oid, sp in self.split.items():
            if sp not in SPLITS:
                problems.append(f"outfit {oid}: unknown split {sp!r}")
        if problems:
            raise DatasetError(problems)

    # -- lookups ---------------------------------------------------------

    def category_of(self, item_id: str) -> str:
        return self.items[item_id].category_id

    def rows(self, item_ids) -> list[int]:
        return [self.item_index[i] for i in item_ids]

    def outfits_of(self, shopper_id: str, split: str | None = None) -> list[Outfit]:
        ids = self.shoppers[shopper_id].outfit_ids
        return [self.outfits[o] for o in ids if split is None or self.split.get(o, "train") == split]

    def outfits_in(self, split: str | None) -> list[Outfit]:
        if split is None:
            return list(self.outfits.values())
        return [o for oid, o in self.outfits.items() if self.split.get(oid, "train") == split]

    def with_split(self, split: dict[str, str]) -> "Dataset":
        return Dataset(
            self.items.values(), self.outfits.values(), self.shoppers.values(), split, self.max_items, self.meta
        )

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for line in _records(self):
            h.update(line.encode("utf-8"))
        return h.hexdigest()[:16]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.items.keys() == other.items.keys()
            and all(self.items[k].category_id == other.items[k].category_id for k in self.items)
            and np.array_equal(self.features, other.features)
            and self.outfits == other.outfits
            and self.shoppers == other.shoppers
            and self.split == other.split
        )

    __hash__ = None

    def __repr__(self):
        return f"Dataset(items={len(self.items)}, outfits={len(self.outfits)}, shoppers={len(self.shoppers)})"


# ---------------------------------------------------------------------- I/O


def _read_jsonl(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise DatasetError(f"{path}:{n}: {e.msg}") from None
    return out


def load_dataset(items_path, outfits_path, shoppers_path) -> Dataset:
    items = [
        Item(r["item_id"], r["category_id"], np.asarray(r["image_embedding"], float), np.asarray(r["title_embedding"], float))
        for r in _read_jsonl(items_path)
    ]
    orecs = _read_jsonl(outfits_path)
    if not orecs:
        raise DatasetError("no outfits")
    outfits = [Outfit(r["outfit_id"], r["item_ids"], r["shopper_id"]) for r in orecs]
    split = {r["outfit_id"]: r["split"] for r in orecs if "split" in r}
    shoppers = [ShopperHistory(r["shopper_id"], tuple(r["outfit_ids"])) for r in _read_jsonl(shoppers_path)]
    known = {s.shopper_id for s in shoppers}
    # shoppers file may omit shoppers that only appear in outfits
    implicit: dict[str, list[str]] = {}
    for o in outfits:
        if o.shopper_id not in known:
            implicit.setdefault(o.shopper_id, []).append(o.outfit_id)
    shoppers += [ShopperHistory(s, tuple(ids)) for s, ids in implicit.items()]
    return Dataset(items, outfits, shoppers, split)


def load_dir(data_dir) -> Dataset:
    d = Path(data_dir)
    return load_dataset(d / "items.jsonl", d / "outfits.jsonl", d / "shoppers.jsonl")


def _records(ds: Dataset):
    for it in ds.items.values():
        yield json.dumps(
            {
                "item_id": it.item_id,
                "category_id": it.category_id,
                "image_embedding": [float(x) for x in it.image_embedding],
                "title_embedding": [float(x) for x in it.title_embedding],
            }
        ) + "\n"
    for o in ds.outfits.values():
        rec = {"outfit_id": o.outfit_id, "shopper_id": o.shopper_id, "item_ids": list(o.item_ids)}
        if o.outfit_id in ds.split:
            rec["split"] = ds.split[o.outfit_id]
        yield json.dumps(rec) + "\n"
    for s in ds.shoppers.values():
        yield json.dumps({"shopper_id": s.shopper_id, "outfit_ids": list(s.outfit_ids)}) + "\n"


def save_dataset(ds: Dataset, out_dir) -> dict[str, Path]:
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    paths = {k: d / f"{k}.jsonl" for k in ("items", "outfits", "shoppers")}
    n_items, n_outfits = len(ds.items), len(ds.outfits)
    lines = list(_records(ds))
    chunks = {"items": lines[:n_items], "outfits": lines[n_items : n_items + n_outfits], "shoppers": lines[n_items + n_outfits :]}
    for k, p in paths.items():
        with open(p, "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(chunks[k])
    return paths


# ---------------------------------------------------------------- synthetic


@dataclass(frozen=True)
class SynthConfig:
    n_shoppers: int
    n_style_clusters: int
    n_categories: int
    items_per_category: int
    outfit_size_min: int
    outfit_size_max: int
    outfits_per_shopper: int
    embedding_dim: int
    style_noise: float
    style_strength: float
    anchor_scale: float
    shared_item_fraction: float
    shared_item_rate: float
    taste_spread: float
    taste_sharpness: float

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        names = [f.name for f in fields(cls)]
        missing = [n for n in names if n not in d]
        if missing:
            raise KeyError(f"synthetic config missing required key(s): {', '.join(missing)}")
        unknown = sorted(set(d) - set(names))
        if unknown:
            raise KeyError(f"synthetic config has unknown key(s): {', '.join(unknown)}")
        return cls(**{n: type_of(cls, n)(d[n]) for n in names})

    @classmethod
    def from_file(cls, path) -> "SynthConfig":
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
        return cls.from_dict(raw.get("synth", raw))

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def type_of(cls, name):
    t = {f.name: f.type for f in fields(cls)}[name]
    return {"int": int, "float": float, "bool": bool, "str": str}.get(t, lambda x: x)


def _check_feasible(cfg: SynthConfig):
    problems = []
    if cfg.outfit_size_min < 2 or cfg.outfit_size_max < cfg.outfit_size_min:
        problems.append(f"outfit size range [{cfg.outfit_size_min}, {cfg.outfit_size_max}] invalid (need 2 <= min <= max)")
    if cfg.outfit_size_max > cfg.n_categories:
        problems.append(
            f"outfit_size_max={cfg.outfit_size_max} exceeds n_categories={cfg.n_categories} (one item per category)"
        )
    if cfg.outfit_size_max > MAX_OUTFIT_ITEMS:
        problems.append(f"outfit_size_max exceeds {MAX_OUTFIT_ITEMS}")
    n_shared = int(round(cfg.shared_item_fraction * cfg.items_per_category))
    n_styled = cfg.items_per_category - n_shared
    if n_styled < 2 * cfg.n_style_clusters:
        problems.append("items_per_category too small: need >= 2 styled items per cluster per category")
    if cfg.n_style_clusters < 1 or cfg.n_style_clusters > cfg.embedding_dim:
        problems.append("n_style_clusters must be in [1, embedding_dim]")
    if cfg.n_shoppers < 1 or cfg.outfits_per_shopper < 1:
        problems.append("need at least one shopper with one outfit")
    if not 0.0 <= cfg.shared_item_rate <= 1.0 or not 0.0 <= cfg.shared_item_fraction < 1.0:
        problems.append("shared_item_rate must be in [0,1] and shared_item_fraction in [0,1)")
    if cfg.shared_item_rate > 0 and n_shared == 0:
        problems.append("shared_item_rate > 0 but shared_item_fraction leaves no shared items")
    if cfg.style_noise < 0:
        problems.append("style_noise must be >= 0")
    if problems:
        raise DatasetError(problems)
    return n_shared, n_styled


def _unit(v, axis=-1):
    return v / np.linalg.norm(v, axis=axis, keepdims=True)


def generate_synthetic(cfg: SynthConfig, seed: int) -> Dataset:
    """Style-clustered shoppers over category-anchored items.

    Each item embedding is ``category anchor + style_strength * style + noise``.
    Styled items lean towards one cluster's unit vector; shared items carry no
    style at all (think plain watches) and can appear in anyone's outfits,
    which is what gives cross-cluster shoppers overlapping items. Shoppers pick
    styled items from their own cluster, weighted by a personal taste vector.
    """
    n_shared, n_styled = _check_feasible(cfg)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    D, C = cfg.embedding_dim, cfg.n_style_clusters

    clusters, _ = np.linalg.qr(rng.standard_normal((D, C)))
    clusters = clusters.T  # (C, D) orthonormal style directions
    anchors = rng.standard_normal((cfg.n_categories, D)) * (cfg.anchor_scale / np.sqrt(D))
    rotation, _ = np.linalg.qr(rng.standard_normal((D, D)))

    items, item_cluster, item_style = [], [], []
    by_cat_cluster: dict[tuple[int, int], list[int]] = {}
    by_cat_shared: dict[int, list[int]] = {}
    for c in range(cfg.n_categories):
        for k in range(cfg.items_per_category):
            idx = len(items)
            if k < n_shared:
                cl, style = -1, np.zeros(D)
                by_cat_shared.setdefault(c, []).append(idx)
            else:
                cl = (k - n_shared) % C
                style = _unit(clusters[cl] + cfg.taste_spread * rng.standard_normal(D) / np.sqrt(D))
                by_cat_cluster.setdefault((c, cl), []).append(idx)
            img = anchors[c] + cfg.style_strength * style + cfg.style_noise * rng.standard_normal(D) / np.sqrt(D)
            items.append(Item(f"i{idx:05d}", f"c{c:02d}", img, rotation @ img))
            item_cluster.append(cl)
            item_style.append(style)
    item_style = np.array(item_style)

    shopper_cluster = np.arange(cfg.n_shoppers) % C
    tastes = _unit(clusters[shopper_cluster] + cfg.taste_spread * rng.standard_normal((cfg.n_shoppers, D)) / np.sqrt(D))

    outfit_items: list[list[int]] = []
    owner: list[int] = []
    for u in range(cfg.n_shoppers):
        cl = shopper_cluster[u]
        for _ in range(cfg.outfits_per_shopper):
            size = int(rng.integers(cfg.outfit_size_min, cfg.outfit_size_max + 1))
            cats = np.sort(rng.choice(cfg.n_categories, size=size, replace=False))
            chosen = []
            for c in cats:
                if n_shared and rng.random() < cfg.shared_item_rate:
                    chosen.append(int(rng.choice(by_cat_shared[c])))
                else:
                    pool = np.array(by_cat_cluster[(c, cl)])
                    logits = cfg.taste_sharpness * (item_style[pool] @ tastes[u])
                    w = np.exp(logits - logits.max())
                    chosen.append(int(rng.choice(pool, p=w / w.sum())))
            outfit_items.append(chosen)
            owner.append(u)

    _ensure_same_cluster_overlap(outfit_items, owner, shopper_cluster, items, rng)

    outfits, shoppers = [], []
    per_shopper: dict[int, list[str]] = {}
    for k, (its, u) in enumerate(zip(outfit_items, owner)):
        oid = f"o{k:05d}"
        outfits.append(Outfit(oid, [items[i].item_id for i in its], f"u{u:03d}"))
        per_shopper.setdefault(u, []).append(oid)
    shoppers = [ShopperHistory(f"u{u:03d}", tuple(per_shopper[u])) for u in range(cfg.n_shoppers)]
    meta = {
        "item_cluster": {items[i].item_id: item_cluster[i] for i in range(len(items))},
        "item_style": item_style,
        "shopper_cluster": {f"u{u:03d}": int(shopper_cluster[u]) for u in range(cfg.n_shoppers)},
        "cluster_vectors": clusters,
    }
    return Dataset(items, outfits, shoppers, meta=meta)


def _ensure_same_cluster_overlap(outfit_items, owner, shopper_cluster, items, rng):
    """Patch outfits so every same-cluster shopper pair shares at least one item."""
    n_shoppers = len(shopper_cluster)
    by_shopper: dict[int, list[int]] = {}
    for k, u in enumerate(owner):
        by_shopper.setdefault(u, []).append(k)
    cat = [it.category_id for it in items]
    for u in range(n_shoppers):
        for v in range(u + 1, n_shoppers):
            if shopper_cluster[u] != shopper_cluster[v]:
                continue
            su = {i for k in by_shopper[u] for i in outfit_items[k]}
            sv = {i for k in by_shopper[v] for i in outfit_items[k]}
            if su & sv:
                continue
            # copy one of u's items into a v outfit that has the same category slot
            donors = sorted(su)
            rng.shuffle(donors)
            for x in donors:
                slot = next(
                    ((k, p) for k in by_shopper[v] for p, i in enumerate(outfit_items[k]) if cat[i] == cat[x]), None
                )
                if slot is not None:
                    k, p = slot
                    outfit_items[k][p] = x
                    break


# ---------------------------------------------------------------- splitting


def _largest_remainder(n: int, fractions) -> list[int]:
    raw = [f * n for f in fractions]
    counts = [int(np.floor(r + 1e-9)) for r in raw]
    rem = n - sum(counts)
    order = sorted(range(len(raw)), key=lambda k: (-(raw[k] - counts[k]), k))
    for k in order[:rem]:
        counts[k] += 1
    return counts


def _rank_key(seed: int, outfit_id: str) -> str:
    return hashlib.sha256(f"{seed}:{outfit_id}".encode()).hexdigest()


def split_dataset(ds: Dataset, fractions=(0.8, 0.1, 0.1), seed: int = 0) -> Dataset:
    """Per-shopper stratified train/val/test split.

    Within a shopper, outfits are ranked by a seeded hash of their id and cut
    by largest-remainder counts. Shoppers with fewer than 3 outfits go wholly
    to train.
    """
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ValueError(f"split fractions must be three nonnegative numbers summing to 1, got {fractions}")
    assign = {}
    for sid, sh in ds.shoppers.items():
        ids = sorted(sh.outfit_ids, key=lambda o: _rank_key(seed, o))
        if len(ids) < 3:
            if fractions[0] < 1.0:
                log.warning("shopper %s has %d outfits; all assigned to train", sid, len(ids))
            assign.update({o: "train" for o in ids})
            continue
        n_tr, n_va, n_te = _largest_remainder(len(ids), fractions)
        if n_tr == 0:
            n_tr, n_te = 1, n_te - 1 if n_te > 0 else n_te
            if n_tr + n_va + n_te > len(ids):
                n_va -= 1
        for k, o in enumerate(ids):
            assign[o] = "train" if k < n_tr else ("val" if k < n_tr + n_va else "test")
    return ds.with_split(assign)
