"""Disentanglement, reconstruction and classification losses."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .numerics import autograd as ag
from .numerics.autograd import Tensor
from .numerics.layers import Linear, MLP, Module

log = logging.getLogger(__name__)


def _fmask(mask: np.ndarray) -> np.ndarray:
    return mask[..., None].astype(ag.DTYPE)


def _full_mask(x: Tensor, mask: np.ndarray | None) -> np.ndarray:
    if mask is None:
        return np.ones(x.shape[:-1], dtype=bool)
    return mask


def pearson(f_u: Tensor, f_s: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Per-video Pearson correlation over all unmasked entries -> (B,).

    Videos where either input has zero variance get rho = 0.
    """
    if f_u.shape != f_s.shape:
        raise ag.ShapeError(f"pearson: shapes {f_u.shape} and {f_s.shape} differ")
    mask = _full_mask(f_u, mask)
    fm = _fmask(mask)
    axes = tuple(range(1, f_u.ndim))
    counts = mask.reshape(mask.shape[0], -1).sum(axis=1) * f_u.shape[-1]
    if np.any(counts < 2):
        raise ValueError("pearson: need at least 2 unmasked samples per video")
    shape = (-1,) + (1,) * (f_u.ndim - 1)
    inv = (1.0 / counts).reshape(shape)
    cu = (f_u - ag.sum_(f_u * fm, axis=axes, keepdims=True) * inv) * fm
    cs = (f_s - ag.sum_(f_s * fm, axis=axes, keepdims=True) * inv) * fm
    cov = ag.sum_(cu * cs, axis=axes)
    vprod = ag.sum_(cu * cu, axis=axes) * ag.sum_(cs * cs, axis=axes)
    degenerate = vprod.data <= 0.0
    if degenerate.any():
        log.info("pearson: zero variance in %d video(s); rho set to 0", int(degenerate.sum()))
    rho = cov / ag.sqrt(vprod + degenerate.astype(ag.DTYPE))
    return rho * (~degenerate).astype(ag.DTYPE)


def disentangle_loss(f_u: Tensor, f_s: Tensor, m1: float, mask: np.ndarray | None = None) -> Tensor:
    """mean_b ReLU(|rho_b| - m1)."""
    return ag.mean(ag.relu(ag.abs_(pearson(f_u, f_s, mask)) - m1))


def masked_mse(a: Tensor, b: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Per-video mean squared error over unmasked entries -> (B,)."""
    if a.shape != b.shape:
        raise ag.ShapeError(f"masked_mse: shapes {a.shape} and {b.shape} differ")
    mask = _full_mask(a, mask)
    counts = mask.reshape(mask.shape[0], -1).sum(axis=1) * a.shape[-1]
    d = (a - b) * _fmask(mask)
    return ag.sum_(d * d, axis=tuple(range(1, a.ndim))) * (1.0 / counts)


def reconstruction_loss(f_o: Tensor, f_r: Tensor, m2: float, mask: np.ndarray | None = None) -> Tensor:
    """mean_b ReLU(MSE_b(F_o, F_r) - m2)."""
    return ag.mean(ag.relu(masked_mse(f_o, f_r, mask) - m2))


class FusionNets(Module):
    """Net2 picks a per-position mixing weight, Net1 maps the mix back to F_o space.

    Net1 is a residual MLP whose ReLU branch starts at zero, so it begins as
    the identity map.
    """

    def __init__(self, dim: int, rng: np.random.Generator):
        super().__init__()
        self.net1_hidden = Linear(dim, dim, rng)
        self.net1_out = Linear(dim, dim, rng, zero=True)
        self.net2 = MLP([2 * dim, dim, 1], rng)

    def mix_weight(self, f_u: Tensor, f_s: Tensor) -> Tensor:
        return ag.sigmoid(self.net2(ag.concat([f_u, f_s], axis=-1)))

    def net1(self, x: Tensor) -> Tensor:
        return x + self.net1_out(ag.relu(self.net1_hidden(x)))


def reconstruct(f_u: Tensor, f_s: Tensor, nets: FusionNets,
                mask: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    if f_u.shape != f_s.shape:
        raise ag.ShapeError(f"reconstruct: shapes {f_u.shape} and {f_s.shape} differ")
    delta = nets.mix_weight(f_u, f_s)
    f_r = nets.net1(delta * f_u + (1.0 - delta) * f_s)
    if mask is not None:
        f_r = f_r * _fmask(mask)
    return f_r, delta


@dataclass
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    lambda4: float = 0.5
    m1: float = 0.1
    m2: float = 0.01


@dataclass
class LossBreakdown:
    total: Tensor
    l_bce_u: float
    l_bce_s: float
    l_bce_t: float
    l_dis: float
    l_rec: float
    weights: LossWeights

    def as_dict(self) -> dict[str, float]:
        return {"total": self.total.item(), "l_bce_u": self.l_bce_u, "l_bce_s": self.l_bce_s,
                "l_bce_t": self.l_bce_t, "l_dis": self.l_dis, "l_rec": self.l_rec}


def bce_loss(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Binary cross-entropy with logits, averaged over classes and batch."""
    targets = np.asarray(targets, dtype=ag.DTYPE)
    if not np.isin(targets, (0.0, 1.0)).all():
        raise ValueError("BCE targets must be 0 or 1")
    return ag.mean(ag.bce_with_logits(logits, targets))


def combine(l_bce_u: Tensor, l_bce_s: Tensor, l_bce_t: Tensor, l_dis: Tensor, l_rec: Tensor,
            weights: LossWeights) -> LossBreakdown:
    w = weights
    total = (w.lambda1 * l_bce_u + w.lambda2 * l_bce_s + w.lambda3 * l_bce_t
             + w.lambda4 * (l_dis + l_rec))
    return LossBreakdown(total, l_bce_u.item(), l_bce_s.item(), l_bce_t.item(),
                         l_dis.item(), l_rec.item(), w)


def total_loss(a_u: Tensor, a_s: Tensor, a_t: Tensor, y_u, y_s, y_t,
               f_u: Tensor, f_s: Tensor, f_o: Tensor, f_r: Tensor,
               weights: LossWeights, mask: np.ndarray | None = None) -> LossBreakdown:
    l_dis = disentangle_loss(f_u, f_s, weights.m1, mask)
    l_rec = reconstruction_loss(f_o, f_r, weights.m2, mask)
    return combine(bce_loss(a_u, y_u), bce_loss(a_s, y_s), bce_loss(a_t, y_t), l_dis, l_rec, weights)


def pad_video_targets(labels: np.ndarray) -> np.ndarray:
    """Video labels (..., C) -> (..., C+1) with the no-action entry at 0."""
    labels = np.asarray(labels)
    pad = np.zeros(labels.shape[:-1] + (1,), dtype=labels.dtype)
    return np.concatenate([labels, pad], axis=-1)
