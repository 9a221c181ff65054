"""Focal, supervised contrastive and adaptive margin losses, and their weighted sum."""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .numerics import F, Tensor

EPS = 1e-12


@dataclass(frozen=True)
class LossWeights:
    c_fl: float = 1.0
    c_cl: float = 1.0
    c_am: float = 0.5
    alpha: float = 0.5
    gamma: float = 2.0
    tau: float = 1.0
    margin: float = 5.0

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if self.margin < 0 or self.gamma < 0:
            raise ValueError("margin and gamma must be >= 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if min(self.c_fl, self.c_cl, self.c_am) < 0:
            raise ValueError("loss weights must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "LossWeights":
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise KeyError(f"loss config has unknown key(s): {', '.join(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def focal_loss(p, y, alpha: float = 0.5, gamma: float = 2.0) -> Tensor:
    """Summed binary focal loss; ``y`` holds 0/1 labels."""
    p = F.clip(F.as_tensor(p), EPS, 1.0 - EPS)
    y = np.asarray(y, dtype=np.float64)
    if y.shape != p.shape:
        raise ValueError(f"focal_loss: scores {p.shape} vs labels {y.shape}")
    pos = F.power(1.0 - p, gamma) * F.log(p) * (-alpha)
    neg = F.power(p, gamma) * F.log(1.0 - p) * (-(1.0 - alpha))
    return F.tsum(pos * y + neg * (1.0 - y))


def supervised_contrastive_loss(E, labels, tau: float = 1.0) -> Tensor:
    """Summed supervised contrastive loss over L2-normalised rows of ``E``.

    Anchors with no same-label partner contribute nothing.
    """
    labels = np.asarray(labels)
    if E is None or len(labels) < 2:
        return F.as_tensor(0.0)
    B = len(labels)
    En = F.l2_normalize(F.as_tensor(E), axis=-1)
    S = F.matmul(En, F.swapaxes(En, 0, 1)) * (1.0 / tau)
    off_diag = ~np.eye(B, dtype=bool)
    same = (labels[:, None] == labels[None, :]) & off_diag
    n_pos = same.sum(axis=1)
    has_pos = n_pos > 0
    if not has_pos.any():
        return F.as_tensor(0.0)
    lse = F.logsumexp(S, axis=1, mask=off_diag)
    pos_w = same / np.maximum(n_pos, 1)[:, None]
    pos_mean = F.tsum(S * pos_w, axis=1)
    return F.tsum((lse - pos_mean) * has_pos.astype(np.float64))


def adaptive_margin_loss(p_pos, p_weak, attn_swapped, margin: float = 5.0) -> Tensor:
    """Summed hinge max(0, p_weak - p_pos + margin * attn_swapped)."""
    if attn_swapped is None:
        raise ValueError("adaptive_margin_loss: swapped-item attention missing (batch has no swapped index)")
    return F.tsum(F.relu(F.as_tensor(p_weak) - p_pos + F.as_tensor(attn_swapped) * margin))


@dataclass
class LossBreakdown:
    total: Tensor
    focal: float
    contrastive: float
    margin: float

    def as_record(self) -> dict:
        return {"L_FL": self.focal, "L_CL": self.contrastive, "L_AM": self.margin, "total": float(self.total.data)}


def total_loss(out, w: LossWeights, use_cl: bool = True, use_am: bool = True, fixed_margin: bool = False) -> LossBreakdown:
    """Weighted sum of the three losses on one batch's forward output.

    Weak negatives are left out of the focal term. ``fixed_margin`` replaces
    the attention weight of the swapped item by 1.
    """
    K = out.p_pos.shape[0]
    scores = F.concat([out.p_pos, out.p_neg], axis=0)
    labels = np.concatenate([np.ones(K), np.zeros(K)])
    l_fl = focal_loss(scores, labels, w.alpha, w.gamma)
    total = l_fl * w.c_fl
    l_cl = l_am = None
    if use_cl and w.c_cl > 0:
        l_cl = supervised_contrastive_loss(out.hist_E, out.hist_shoppers, w.tau)
        total = total + l_cl * w.c_cl
    if use_am and w.c_am > 0:
        attn = np.ones(K) if fixed_margin else out.A_swapped
        l_am = adaptive_margin_loss(out.p_pos, out.p_weak, attn, w.margin)
        total = total + l_am * w.c_am

    def val(t):
        return 0.0 if t is None else float(t.data)

    return LossBreakdown(total, val(l_fl), val(l_cl), val(l_am))
