import numpy as np
import pytest

from hat.losses import LossWeights, total_loss
from hat.model import HatConfig, HatModel, forward_full, outfit_features
from hat.numerics import ShapeError, finite_difference_check
from hat.sampling import assemble_batch, epoch_order


def _model(cfg, seed=0):
    return HatModel.create(cfg, np.random.default_rng(seed))


def _feats(rng, n, din=16):
    return rng.standard_normal((n, din))


def test_parameter_names(tiny_cfg):
    m = _model(tiny_cfg)
    names = set(m.params.names())
    for n in ("adapter.w1", "bottom.0.attn.wq", "bottom.lnf.g", "pool.query", "top.marker", "top.0.ff.w2", "head.w2"):
        assert n in names
    assert set(m.params.groups()) == {"adapter", "bottom", "pool", "top", "head"}


def test_item_permutation_invariance(tiny_cfg):
    m = _model(tiny_cfg)
    rng = np.random.default_rng(1)
    for _ in range(20):
        x = _feats(rng, int(rng.integers(2, 7)))
        perm = rng.permutation(len(x))
        a, b = m.encode_outfit(x), m.encode_outfit(x[perm])
        np.testing.assert_allclose(a.E.data, b.E.data, rtol=0, atol=1e-12)
        np.testing.assert_allclose(a.A.data[perm], b.A.data, rtol=0, atol=1e-12)


def test_attention_is_a_simplex(tiny_cfg):
    m = _model(tiny_cfg)
    rng = np.random.default_rng(2)
    enc = m.encode_outfits([_feats(rng, n) for n in (2, 5, 3)])
    A = enc.A.data
    assert np.all(A >= 0)
    np.testing.assert_allclose(A.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(A[~enc.mask] == 0)


def test_padding_does_not_leak(tiny_cfg):
    m = _model(tiny_cfg)
    rng = np.random.default_rng(3)
    x = _feats(rng, 2)
    alone = m.encode_outfit(x)
    batched = m.encode_outfits([x, _feats(rng, 6)]).single(0)
    np.testing.assert_allclose(alone.E.data, batched.E.data, rtol=0, atol=1e-12)


def test_history_permutation_invariance_and_sensitivity(tiny_cfg):
    m = _model(tiny_cfg)
    rng = np.random.default_rng(4)
    t = m.encode_outfit(_feats(rng, 3))
    hist = [m.encode_outfit(_feats(rng, int(rng.integers(2, 5)))) for _ in range(4)]
    base = float(m.score_outfit(t, hist).data)
    for _ in range(5):
        perm = rng.permutation(4)
        assert float(m.score_outfit(t, [hist[k] for k in perm]).data) == pytest.approx(base, abs=1e-12)
    # a different history must be able to change the score
    other = [m.encode_outfit(_feats(rng, 3) * 3.0) for _ in range(4)]
    assert abs(float(m.score_outfit(t, other).data) - base) > 1e-6


def test_empty_history_and_limits(tiny_cfg):
    m = _model(tiny_cfg)
    rng = np.random.default_rng(5)
    t = m.encode_outfit(_feats(rng, 3))
    p = float(m.score_outfit(t, []).data)
    assert 0.0 < p < 1.0
    with pytest.raises(ValueError, match="max_history"):
        m.score_outfit(t, [t] * (tiny_cfg.max_history + 1))


def test_shape_errors(tiny_cfg):
    m = _model(tiny_cfg)
    with pytest.raises(ShapeError, match="expected"):
        m.encode_outfit(np.zeros((3, 5)))
    with pytest.raises(ValueError):
        HatConfig(d=10, bottom_heads=4)
    with pytest.raises(ValueError):
        HatConfig(attention_scale="cube")


def test_pool_scale_switch():
    assert HatConfig(d=64).pool_scale == 64.0
    assert HatConfig(d=64, attention_scale="sqrt_d").pool_scale == 8.0


def test_init_is_seeded(tiny_cfg):
    assert _model(tiny_cfg, 3).params.equal(_model(tiny_cfg, 3).params)
    assert not _model(tiny_cfg, 3).params.equal(_model(tiny_cfg, 4).params)


def test_forward_full_layout(small_ds, tiny_cfg):
    m = _model(tiny_cfg)
    ids = epoch_order(small_ds, 0, 0)[:3]
    batch = assemble_batch(small_ds, ids, 2, np.random.default_rng(0))
    out = forward_full(m, small_ds, batch)
    assert out.p_pos.shape == out.p_neg.shape == out.p_weak.shape == (3,)
    # positive scores equal a direct one-off computation
    ex = batch.examples[0]
    direct = m.score_outfit(
        m.encode_outfit(outfit_features(small_ds, ex.positive.item_ids)),
        [m.encode_outfit(outfit_features(small_ds, h.item_ids)) for h in ex.history],
    )
    assert float(direct.data) == pytest.approx(float(out.p_pos.data[0]), abs=1e-12)
    # swapped-slot attention comes from the positive outfit
    r = out.outfit_rows[ex.positive.outfit_id]
    assert float(out.A_swapped.data[0]) == float(out.enc.A.data[r, ex.swapped_index])
    assert len(out.hist_shoppers) == out.hist_E.shape[0]


def test_full_loss_gradcheck(small_ds, tiny_cfg):
    cfg = HatConfig(**{**tiny_cfg.to_dict(), "max_history": 2})
    m = _model(cfg, 7)
    ids = epoch_order(small_ds, 0, 0)[:2]
    batch = assemble_batch(small_ds, ids, 2, np.random.default_rng(1))
    w = LossWeights(margin=0.5)  # keep the hinge active so its gradient is exercised

    def f(store):
        return total_loss(forward_full(m, small_ds, batch), w).total

    rep = finite_difference_check(f, m.params)
    assert rep.passed, str(rep)
