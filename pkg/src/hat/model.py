"""History-aware two-level transformer scorer.

Bottom level: item features -> adapter MLP -> transformer encoder -> one
learnable query attends over the items to give an outfit vector and per-item
weights. Top level: the target outfit vector (plus a learned marker) followed
by the shopper's history outfit vectors -> transformer encoder -> MLP head on
the target position -> sigmoid. No positional encodings anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .numerics import F, ParamStore, Tensor
from .numerics.tensor import ShapeError


@dataclass(frozen=True)
class HatConfig:
    d: int = 64
    bottom_layers: int = 2
    bottom_heads: int = 4
    top_layers: int = 2
    top_heads: int = 4
    ff_mult: int = 4
    adapter_hidden: int = 64
    max_history: int = 10
    attention_scale: str = "d"  # "d" divides pooling logits by d, "sqrt_d" by sqrt(d)
    image_dim: int = 32
    title_dim: int = 32

    def __post_init__(self):
        if self.d % self.bottom_heads or self.d % self.top_heads:
            raise ValueError(f"d={self.d} must be divisible by head counts {self.bottom_heads}, {self.top_heads}")
        if self.max_history < 0:
            raise ValueError("max_history must be >= 0")
        if self.attention_scale not in ("d", "sqrt_d"):
            raise ValueError("attention_scale must be 'd' or 'sqrt_d'")

    @classmethod
    def from_dict(cls, d: dict) -> "HatConfig":
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise KeyError(f"model config has unknown key(s): {', '.join(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @property
    def pool_scale(self) -> float:
        return float(self.d) if self.attention_scale == "d" else float(np.sqrt(self.d))


@dataclass
class OutfitEncoding:
    """Outfit vector ``E`` (d,), item weights ``A`` (n,), item encodings ``Z`` (n, d)."""

    E: Tensor
    A: Tensor
    Z: Tensor


@dataclass
class BatchEncoding:
    E: Tensor  # (B, d)
    A: Tensor  # (B, N) zero on padding
    Z: Tensor  # (B, N, d)
    mask: np.ndarray  # (B, N) bool
    lengths: np.ndarray

    def single(self, k: int) -> OutfitEncoding:
        n = int(self.lengths[k])
        return OutfitEncoding(self.E[k], self.A[k, :n], self.Z[k, :n])


def _uniform(rng, fan_in, shape):
    b = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-b, b, size=shape)


def _init_encoder(store: ParamStore, rng, prefix: str, n_layers: int, d: int, ff: int):
    for l in range(n_layers):
        p = f"{prefix}.{l}"
        store.add(f"{p}.ln1.g", np.ones(d))
        store.add(f"{p}.ln1.b", np.zeros(d))
        for w in ("wq", "wk", "wv", "wo"):
            store.add(f"{p}.attn.{w}", _uniform(rng, d, (d, d)))
        store.add(f"{p}.attn.bo", np.zeros(d))
        store.add(f"{p}.ln2.g", np.ones(d))
        store.add(f"{p}.ln2.b", np.zeros(d))
        store.add(f"{p}.ff.w1", _uniform(rng, d, (d, ff)))
        store.add(f"{p}.ff.b1", _uniform(rng, d, (ff,)))
        store.add(f"{p}.ff.w2", _uniform(rng, ff, (ff, d)))
        store.add(f"{p}.ff.b2", _uniform(rng, ff, (d,)))
    store.add(f"{prefix}.lnf.g", np.ones(d))
    store.add(f"{prefix}.lnf.b", np.zeros(d))


def init_params(cfg: HatConfig, rng: np.random.Generator, seed: int | None = None) -> ParamStore:
    """Fan-in uniform init everywhere; pooling query and target marker from N(0, 1/d)."""
    d, ff = cfg.d, cfg.ff_mult * cfg.d
    din = cfg.image_dim + cfg.title_dim
    s = ParamStore(seed)
    s.add("adapter.w1", _uniform(rng, din, (din, cfg.adapter_hidden)))
    s.add("adapter.b1", _uniform(rng, din, (cfg.adapter_hidden,)))
    s.add("adapter.w2", _uniform(rng, cfg.adapter_hidden, (cfg.adapter_hidden, d)))
    s.add("adapter.b2", _uniform(rng, cfg.adapter_hidden, (d,)))
    _init_encoder(s, rng, "bottom", cfg.bottom_layers, d, ff)
    s.add("pool.query", rng.normal(0.0, 1.0 / np.sqrt(d), size=d))
    s.add("top.marker", rng.normal(0.0, 1.0 / np.sqrt(d), size=d))
    _init_encoder(s, rng, "top", cfg.top_layers, d, ff)
    s.add("head.w1", _uniform(rng, d, (d, d)))
    s.add("head.b1", _uniform(rng, d, (d,)))
    s.add("head.w2", _uniform(rng, d, (d, 1)))
    s.add("head.b2", _uniform(rng, d, (1,)))
    return s


class HatModel:
    def __init__(self, cfg: HatConfig, params: ParamStore):
        self.cfg = cfg
        self.params = params

    @classmethod
    def create(cls, cfg: HatConfig, rng: np.random.Generator, seed: int | None = None) -> "HatModel":
        return cls(cfg, init_params(cfg, rng, seed))

    def __getitem__(self, name) -> Tensor:
        return self.params[name]

    # ------------------------------------------------------------ pieces

    def adapt(self, feats) -> Tensor:
        """Concatenated image+title features (..., Din) -> (..., d)."""
        feats = F.as_tensor(feats)
        din = self.cfg.image_dim + self.cfg.title_dim
        if feats.shape[-1] != din:
            raise ShapeError(f"adapt: expected feature width {din}, got {feats.shape[-1]}")
        h = F.gelu(feats @ self["adapter.w1"] + self["adapter.b1"])
        return h @ self["adapter.w2"] + self["adapter.b2"]

    def _attention(self, x: Tensor, mask: np.ndarray, prefix: str, heads: int) -> Tensor:
        B, L, d = x.shape
        dh = d // heads

        def split(t):
            return F.swapaxes(F.reshape(t, (B, L, heads, dh)), 1, 2)

        q = split(x @ self[f"{prefix}.wq"])
        k = split(x @ self[f"{prefix}.wk"])
        v = split(x @ self[f"{prefix}.wv"])
        scores = F.matmul(q, F.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(dh))
        probs = F.softmax(scores, axis=-1, mask=mask[:, None, None, :])
        ctx = F.reshape(F.swapaxes(F.matmul(probs, v), 1, 2), (B, L, d))
        return ctx @ self[f"{prefix}.wo"] + self[f"{prefix}.bo"]

    def encoder(self, x: Tensor, mask: np.ndarray, prefix: str, n_layers: int, heads: int) -> Tensor:
        """Pre-norm transformer encoder with a final layer norm. ``mask``: (B, L) True for real tokens."""
        for l in range(n_layers):
            p = f"{prefix}.{l}"
            h = F.layer_norm(x, self[f"{p}.ln1.g"], self[f"{p}.ln1.b"])
            x = x + self._attention(h, mask, f"{p}.attn", heads)
            h = F.layer_norm(x, self[f"{p}.ln2.g"], self[f"{p}.ln2.b"])
            h = F.gelu(h @ self[f"{p}.ff.w1"] + self[f"{p}.ff.b1"])
            x = x + (h @ self[f"{p}.ff.w2"] + self[f"{p}.ff.b2"])
        return F.layer_norm(x, self[f"{prefix}.lnf.g"], self[f"{prefix}.lnf.b"])

    # ------------------------------------------------------------ outfits

    def encode_outfits(self, feats_list) -> BatchEncoding:
        """Encode a list of (n_i, Din) item feature arrays as one padded batch."""
        lengths = np.array([len(f) for f in feats_list], dtype=np.int64)
        if len(lengths) == 0 or lengths.min() < 1:
            raise ValueError("encode_outfits: every outfit needs at least one item")
        B, N = len(feats_list), int(lengths.max())
        din = self.cfg.image_dim + self.cfg.title_dim
        X = np.zeros((B, N, din))
        mask = np.zeros((B, N), dtype=bool)
        for k, f in enumerate(feats_list):
            f = np.asarray(f, dtype=np.float64)
            if f.ndim != 2 or f.shape[1] != din:
                raise ShapeError(f"encode_outfits: outfit {k} features have shape {f.shape}, expected (n, {din})")
            X[k, : len(f)] = f
            mask[k, : len(f)] = True
        cfg = self.cfg
        Z = self.encoder(self.adapt(X), mask, "bottom", cfg.bottom_layers, cfg.bottom_heads)
        logits = F.reshape(Z @ F.reshape(self["pool.query"], (cfg.d, 1)), (B, N)) * (1.0 / cfg.pool_scale)
        A = F.softmax(logits, axis=-1, mask=mask)
        E = F.reshape(F.matmul(F.reshape(A, (B, 1, N)), Z), (B, cfg.d))
        return BatchEncoding(E, A, Z, mask, lengths)

    def encode_outfit(self, feats) -> OutfitEncoding:
        return self.encode_outfits([feats]).single(0)

    # ------------------------------------------------------------ scoring

    def score_logits(self, E_all: Tensor, targets, histories) -> Tensor:
        """Logits for ``targets[t]`` scored against ``histories[t]``; both index rows of ``E_all``."""
        cfg = self.cfg
        T = len(targets)
        M = max((len(h) for h in histories), default=0)
        for h in histories:
            if len(h) > cfg.max_history:
                raise ValueError(f"history of length {len(h)} exceeds max_history={cfg.max_history}")
        idx = np.zeros((T, 1 + M), dtype=np.int64)
        mask = np.zeros((T, 1 + M), dtype=bool)
        idx[:, 0] = targets
        mask[:, 0] = True
        for t, h in enumerate(histories):
            idx[t, 1 : 1 + len(h)] = h
            mask[t, 1 : 1 + len(h)] = True
        tokens = E_all[idx]
        first = np.zeros((1, 1 + M, 1))
        first[0, 0, 0] = 1.0
        tokens = tokens + first * self["top.marker"]
        out = self.encoder(tokens, mask, "top", cfg.top_layers, cfg.top_heads)
        h = out[:, 0, :]
        h = F.gelu(h @ self["head.w1"] + self["head.b1"])
        return F.reshape(h @ self["head.w2"] + self["head.b2"], (T,))

    def score(self, E_all: Tensor, targets, histories) -> Tensor:
        return F.sigmoid(self.score_logits(E_all, targets, histories))

    def score_outfit(self, target: OutfitEncoding, history: list[OutfitEncoding]) -> Tensor:
        """Probability that ``target`` fits the shopper described by ``history``."""
        rows = [F.reshape(target.E, (1, self.cfg.d))] + [F.reshape(h.E, (1, self.cfg.d)) for h in history]
        E_all = F.concat(rows, axis=0)
        return self.score(E_all, [0], [list(range(1, len(rows)))])[0]


def outfit_features(ds, item_ids) -> np.ndarray:
    return ds.features[ds.rows(item_ids)]


@dataclass
class ForwardOutput:
    p_pos: Tensor
    p_neg: Tensor
    p_weak: Tensor
    A_swapped: Tensor  # positive outfit's weight at the weak negative's swapped slot, (K,)
    hist_E: Tensor  # unique history outfit embeddings, (H, d)
    hist_shoppers: list[str]
    enc: BatchEncoding
    outfit_rows: dict[str, int]


def forward_full(model: HatModel, ds, batch) -> ForwardOutput:
    """Score every positive / negative / weak negative of a batch against its example's history."""
    rows: dict[str, int] = {}
    feats = []

    def row(o):
        if o.outfit_id not in rows:
            rows[o.outfit_id] = len(feats)
            feats.append(outfit_features(ds, o.item_ids))
        return rows[o.outfit_id]

    K = len(batch.examples)
    if K == 0:
        raise ValueError("forward_full: empty batch")
    tp, tn, tw, hists, hist_rows = [], [], [], [], {}
    for ex in batch.examples:
        tp.append(row(ex.positive))
        tn.append(row(ex.negative))
        tw.append(row(ex.weak))
        h = [row(o) for o in ex.history]
        for o in ex.history:
            hist_rows.setdefault(o.outfit_id, (rows[o.outfit_id], o.shopper_id))
        hists.append(h)
    enc = model.encode_outfits(feats)
    p = model.score(enc.E, tp + tn + tw, hists * 3)
    swapped = np.array([ex.swapped_index for ex in batch.examples], dtype=np.int64)
    A_sw = enc.A[np.array(tp), swapped]
    hr = [r for r, _ in hist_rows.values()]
    hist_E = enc.E[np.array(hr, dtype=np.int64)] if hr else None
    return ForwardOutput(
        p[:K], p[K : 2 * K], p[2 * K :], A_sw, hist_E, [s for _, s in hist_rows.values()], enc, rows
    )
