import dataclasses
import math

import pytest

from hat.losses import LossWeights
from hat.model import HatModel
from hat.seeding import substream
from hat.training import (
    RESULT_COLUMNS,
    VARIANTS,
    TrainConfig,
    read_results_table,
    run_ablation_suite,
    train,
    write_results_table,
)

FAST = TrainConfig(epochs=2, batch_size=4, max_history=2, seed=1)

def test_zero_epochs_returns_initial_weights(small_ds, tiny_cfg):
    res = train(small_ds, tiny_cfg, dataclasses.replace(FAST, epochs=0))
    cfg = res.model.cfg
    init = HatModel.create(cfg, substream(FAST.seed, "init"), seed=FAST.seed)
    assert res.model.params.equal(init.params)
    assert res.steps == 0 and res.log == [] and res.best_epoch == -1

def test_training_is_deterministic(small_ds, tiny_cfg):
    a = train(small_ds, tiny_cfg, FAST)
    b = train(small_ds, tiny_cfg, FAST)
    assert a.model.params.equal(b.model.params)
    assert a.log_lines() == b.log_lines()
    c = train(small_ds, tiny_cfg, dataclasses.replace(FAST, seed=2))
    assert not a.model.params.equal(c.model.params)

def test_step_records_and_epoch_log(small_ds, tiny_cfg):
    seen = []
    res = train(small_ds, tiny_cfg, FAST, on_step=seen.append)
    assert seen and seen[-1]["step"] == res.steps
    for r in seen:
        assert {"step", "epoch", "L_FL", "L_CL", "L_AM", "total"} <= set(r)
        assert all(math.isfinite(r[k]) for k in ("L_FL", "L_CL", "L_AM", "total"))
    assert [r["epoch"] for r in res.log] == [1, 2]
    assert res.best_epoch in (1, 2)
    assert res.best_val_auc == max(r["val_auc"] for r in res.log)

def test_disabled_contrastive_term_is_zero(small_ds, tiny_cfg):
    seen = []
    train(small_ds, tiny_cfg, dataclasses.replace(FAST, epochs=1, disable_cl=True), on_step=seen.append)
    w = LossWeights()
    for r in seen:
        assert r["L_CL"] == 0.0
        assert r["total"] == pytest.approx(w.c_fl * r["L_FL"] + w.c_am * r["L_AM"], rel=1e-12)

def test_history_cap_reaches_model(small_ds, tiny_cfg):
    res = train(small_ds, tiny_cfg, dataclasses.replace(FAST, epochs=0, history_cap=0))
    assert res.model.cfg.max_history == 0

def test_no_validation_split_keeps_last_epoch(small_ds, tiny_cfg):
    res = train(small_ds, tiny_cfg, dataclasses.replace(FAST, val_split="nowhere"))
    assert res.best_epoch == 2 and math.isnan(res.best_val_auc)

def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=1)
    with pytest.raises(ValueError):
        TrainConfig(lr=0)
    with pytest.raises(KeyError, match="momentum"):
        TrainConfig.from_dict({"momentum": 0.9})
    cfg = TrainConfig.from_dict({"loss": {"margin": 2.0}, "epochs": 3})
    assert cfg.loss.margin == 2.0 and TrainConfig.from_dict(cfg.to_dict()) == cfg

def test_variant_table():
    assert set(VARIANTS) == {"full", "no_cl", "no_am", "fixed_margin", "history_0", "history_20", "history_30"}
    for name, over in VARIANTS.items():
        cfg = dataclasses.replace(TrainConfig(), **over)
        expect = int(name.split("_")[1]) if name.startswith("history") else 10
        assert cfg.history == expect

def test_ablation_rows_and_table(tmp_path, small_ds, tiny_cfg):
    cfg = dataclasses.replace(FAST, epochs=1)
    rows = run_ablation_suite(small_ds, tiny_cfg, cfg, ["full", "no_cl", "history_0"], n_resamples=50)
    assert [r["variant"] for r in rows] == ["full", "no_cl", "history_0"]
    assert len({r["dataset"] for r in rows}) == 1
    assert all(r["error"] == "" for r in rows)
    assert [r["max_history"] for r in rows] == [2, 2, 0]
    write_results_table(rows, tmp_path / "r.tsv")
    back = read_results_table(tmp_path / "r.tsv")
    assert list(back[0]) == list(RESULT_COLUMNS)
    for r, b in zip(rows, back):
        assert float(b["cp_hard"]) == pytest.approx(r["cp_hard"], abs=1e-6)
        assert 0.0 <= float(b["fitb_hard"]) <= 1.0

def test_failed_variant_is_recorded(small_ds, tiny_cfg, monkeypatch):
    import hat.training as T

    def boom(*a, **k):
        raise RuntimeError("synthetic failure")

    monkeypatch.setattr(T, "train", boom)
    rows = run_ablation_suite(small_ds, tiny_cfg, FAST, ["full", "no_am"], n_resamples=10)
    assert all("synthetic failure" in r["error"] for r in rows)
