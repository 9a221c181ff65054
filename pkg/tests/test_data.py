import json
import logging

import numpy as np
import pytest

from hat.data import (
    Dataset,
    DatasetError,
    Item,
    Outfit,
    ShopperHistory,
    SynthConfig,
    generate_synthetic,
    load_dir,
    save_dataset,
    split_dataset,
)
from hat.sampling import build_cp_hard_pairs

from .conftest import DEFAULT_CONFIG, SMALL_SYNTH


def _write(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")


def _item(iid, cat="c0", dim=2):
    return {"item_id": iid, "category_id": cat, "image_embedding": [0.0] * dim, "title_embedding": [1.0] * dim}


def test_empty_outfits_file(tmp_path):
    _write(tmp_path / "items.jsonl", [_item("a"), _item("b")])
    _write(tmp_path / "outfits.jsonl", [])
    _write(tmp_path / "shoppers.jsonl", [])
    with pytest.raises(DatasetError, match="no outfits"):
        load_dir(tmp_path)


def test_minimal_dataset(tmp_path):
    _write(tmp_path / "items.jsonl", [_item("a", "top"), _item("b", "shoe")])
    _write(tmp_path / "outfits.jsonl", [{"outfit_id": "o1", "shopper_id": "u1", "item_ids": ["a", "b"]}])
    _write(tmp_path / "shoppers.jsonl", [{"shopper_id": "u1", "outfit_ids": ["o1"]}])
    ds = load_dir(tmp_path)
    assert len(ds.shoppers) == 1
    assert sum(len(v) for v in ds.category_index.values()) == 2
    assert ds.category_index == {"top": ["a"], "shoe": ["b"]}


def test_dangling_item_named(tmp_path):
    _write(tmp_path / "items.jsonl", [_item("a"), _item("b")])
    _write(tmp_path / "outfits.jsonl", [{"outfit_id": "o7", "shopper_id": "u1", "item_ids": ["a", "b", "ghost"]}])
    _write(tmp_path / "shoppers.jsonl", [{"shopper_id": "u1", "outfit_ids": ["o7"]}])
    with pytest.raises(DatasetError) as e:
        load_dir(tmp_path)
    assert "ghost" in str(e.value) and "o7" in str(e.value)


def test_problems_are_aggregated():
    items = [Item("a", "c", np.zeros(2), np.zeros(2)), Item("a", "c", np.zeros(3), np.zeros(2))]
    outfits = [Outfit("o1", ["a", "zz"], "u1"), Outfit("o1", ["a", "b"], "u2")]
    with pytest.raises(DatasetError) as e:
        Dataset(items, outfits, [ShopperHistory("u1", ("o1",))])
    text = str(e.value)
    for needle in ("duplicate item id a", "duplicate outfit id o1", "embedding length mismatch", "zz", "unknown shopper u2"):
        assert needle in text


def test_outfit_invariants():
    with pytest.raises(DatasetError):
        Outfit("o", ["a", "a"], "u")
    with pytest.raises(DatasetError):
        Outfit("o", ["a", "b"], "u", label="weak_negative")
    with pytest.raises(DatasetError):
        Outfit("o", ["a", "b"], "u", label="weak_negative", swapped_index=2)
    with pytest.raises(DatasetError):
        Outfit("o", ["a", "b"], "u", swapped_index=0)
    assert Outfit("o", ["a", "b"], "u", label="weak_negative", swapped_index=1).swapped_index == 1


def test_item_count_bounds():
    items = [Item(f"i{k}", "c", np.zeros(1), np.zeros(1)) for k in range(22)]
    with pytest.raises(DatasetError, match="expected 2..20"):
        Dataset(items, [Outfit("o", ["i0"], "u")], [ShopperHistory("u", ("o",))])
    with pytest.raises(DatasetError, match="expected 2..20"):
        Dataset(items, [Outfit("o", [f"i{k}" for k in range(21)], "u")], [ShopperHistory("u", ("o",))])


def test_round_trip(tmp_path, small_ds):
    save_dataset(small_ds, tmp_path)
    again = load_dir(tmp_path)
    assert again == small_ds
    assert again.fingerprint() == small_ds.fingerprint()
    save_dataset(again, tmp_path / "b")
    for name in ("items", "outfits", "shoppers"):
        assert (tmp_path / f"{name}.jsonl").read_bytes() == (tmp_path / "b" / f"{name}.jsonl").read_bytes()


def test_synthetic_is_deterministic():
    cfg = SynthConfig(**dict(SMALL_SYNTH, n_shoppers=2, n_style_clusters=1))
    a, b = generate_synthetic(cfg, 5), generate_synthetic(cfg, 5)
    assert a == b and a.fingerprint() == b.fingerprint()
    assert generate_synthetic(cfg, 6).fingerprint() != a.fingerprint()


@pytest.mark.parametrize("spread", [0.0, 1.0])
def test_style_separation_without_noise(spread):
    cfg = SynthConfig(
        **dict(SMALL_SYNTH, style_noise=0.0, shared_item_fraction=0.0, shared_item_rate=0.0, taste_spread=spread)
    )
    ds = generate_synthetic(cfg, 0)
    S = ds.meta["item_style"]
    cl = np.array([ds.meta["item_cluster"][i] for i in ds.item_ids])
    C = S @ S.T
    same = (cl[:, None] == cl[None, :]) & ~np.eye(len(cl), dtype=bool)
    cross = cl[:, None] != cl[None, :]
    assert C[same].mean() > C[cross].mean()
    if spread == 0.0:
        # no per-item spread: every within-cluster pair beats every cross pair
        assert C[same].min() > C[cross].max()


def test_shoppers_pick_own_cluster(small_ds):
    meta = small_ds.meta
    for o in small_ds.outfits.values():
        for i in o.item_ids:
            c = meta["item_cluster"][i]
            assert c in (-1, meta["shopper_cluster"][o.shopper_id])


def test_same_cluster_shoppers_share_items():
    ds = generate_synthetic(SynthConfig.from_file(DEFAULT_CONFIG), 0)
    sc = ds.meta["shopper_cluster"]
    used = {s: {i for o in ds.outfits_of(s) for i in o.item_ids} for s in ds.shoppers}
    for u in ds.shoppers:
        for v in ds.shoppers:
            if u < v and sc[u] == sc[v]:
                assert used[u] & used[v], (u, v)


def test_default_config_has_cp_hard_pairs():
    cfg = SynthConfig.from_file(DEFAULT_CONFIG)
    assert (cfg.n_shoppers, cfg.n_style_clusters, cfg.n_categories, cfg.items_per_category, cfg.outfits_per_shopper) == (
        40,
        2,
        5,
        30,
        20,
    )
    ds = split_dataset(generate_synthetic(cfg, 0), (0.8, 0.1, 0.1), 0)
    pairs = build_cp_hard_pairs(ds, "test")
    # count by plain scan over all (shopper, other-shopper test outfit) combinations
    used = {s: {i for o in ds.outfits_of(s) for i in o.item_ids} for s in ds.shoppers}
    n = sum(
        1
        for s in ds.shoppers
        for o in ds.outfits_in("test")
        if o.shopper_id != s and used[s] & set(o.item_ids)
    )
    assert len(pairs) == n > 0


def test_infeasible_config():
    with pytest.raises(DatasetError, match="n_categories"):
        generate_synthetic(SynthConfig(**dict(SMALL_SYNTH, outfit_size_max=9)), 0)


def test_missing_key_named():
    d = dict(SMALL_SYNTH)
    del d["style_noise"]
    with pytest.raises(KeyError, match="style_noise"):
        SynthConfig.from_dict(d)
    with pytest.raises(KeyError, match="colour"):
        SynthConfig.from_dict(dict(SMALL_SYNTH, colour=1))


def test_split_counts_default():
    ds = split_dataset(generate_synthetic(SynthConfig.from_file(DEFAULT_CONFIG), 0), (0.8, 0.1, 0.1), 3)
    for sid in ds.shoppers:
        counts = [len(ds.outfits_of(sid, s)) for s in ("train", "val", "test")]
        assert counts == [16, 2, 2]


def test_split_all_train_and_determinism(small_ds):
    ds = split_dataset(small_ds, (1, 0, 0), 0)
    assert set(ds.split.values()) == {"train"}
    a = split_dataset(small_ds, (0.5, 0.25, 0.25), 9)
    b = split_dataset(small_ds, (0.5, 0.25, 0.25), 9)
    assert a.split == b.split
    assert split_dataset(small_ds, (0.5, 0.25, 0.25), 10).split != a.split


def test_split_assignment_depends_only_on_id_and_seed(small_ds):
    a = split_dataset(small_ds, (0.5, 0.25, 0.25), 4)
    # rebuilding the dataset with outfits listed in reverse order changes nothing
    rev = Dataset(
        small_ds.items.values(),
        list(small_ds.outfits.values())[::-1],
        [ShopperHistory(s.shopper_id, s.outfit_ids[::-1]) for s in small_ds.shoppers.values()],
    )
    assert split_dataset(rev, (0.5, 0.25, 0.25), 4).split == a.split


def test_small_shoppers_go_to_train(caplog):
    items = [Item(f"i{k}", f"c{k}", np.zeros(1), np.zeros(1)) for k in range(2)]
    ds = Dataset(items, [Outfit("o1", ["i0", "i1"], "u")], [ShopperHistory("u", ("o1",))])
    with caplog.at_level(logging.WARNING):
        out = split_dataset(ds, (0.8, 0.1, 0.1), 0)
    assert out.split == {"o1": "train"}
    assert "all assigned to train" in caplog.text


def test_bad_fractions(small_ds):
    with pytest.raises(ValueError):
        split_dataset(small_ds, (0.5, 0.5, 0.5), 0)
