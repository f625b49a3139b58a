"""Dynamic prompts: node-adaptive mixtures of spec-conditioned candidate prompts."""
from __future__ import annotations

import numpy as np

from .numerics import autograd as ag
from .numerics.autograd import Tensor
from .numerics.layers import Linear, Module
from .ssg import NodeFeatures


def _as_spec_tensor(v) -> Tensor:
    v = ag.as_tensor(v)
    return v if v.ndim == 2 else ag.reshape(v, (1,) + v.shape)


class PromptBank(Module):
    """T candidate prompts generated from a spec vector, mixed per node.

    Candidates come from one affine map of the spec, ``q = reshape(W_q v + b_q)``.
    Mixing weights use ``W_w (W_y v + f)`` squashed by a softmax over the T
    candidates (``weight_fn="sigmoid"`` switches to independent sigmoids).
    """

    def __init__(self, num_classes: int, dim: int, num_prompts: int, rng: np.random.Generator,
                 weight_fn: str = "softmax"):
        super().__init__()
        if num_prompts < 1:
            raise ValueError("num_prompts must be >= 1")
        if weight_fn not in ("softmax", "sigmoid"):
            raise ValueError(f"unknown weight_fn {weight_fn!r}")
        self.num_classes, self.dim, self.num_prompts = num_classes, dim, num_prompts
        self.weight_fn = weight_fn
        self.candidate_generator = Linear(num_classes, num_prompts * dim, rng)
        self.spec_projector = Linear(num_classes, dim, rng, bias=False)
        self.weight_head = Linear(dim, num_prompts, rng, bias=False)

    def candidates(self, v) -> Tensor:
        """(C,) -> (T, D), or batched (B, C) -> (B, T, D)."""
        v = ag.as_tensor(v)
        q = self.candidate_generator(_as_spec_tensor(v))
        q = ag.reshape(q, (q.shape[0], self.num_prompts, self.dim))
        return q if v.ndim == 2 else ag.reshape(q, q.shape[1:])

    def prompt_weights(self, v, f) -> Tensor:
        """Mixing weights for node features ``f`` of shape (..., D).

        With a batched spec (B, C), ``f`` must lead with B.
        """
        v = ag.as_tensor(v)
        f = ag.as_tensor(f)
        proj = self.spec_projector(_as_spec_tensor(v))          # (B, D)
        if v.ndim == 1:
            proj = ag.reshape(proj, (self.dim,))
        else:
            proj = ag.reshape(proj, (proj.shape[0],) + (1,) * (f.ndim - 2) + (self.dim,))
        logits = self.weight_head(f + proj)
        if self.weight_fn == "softmax":
            return ag.softmax(logits, axis=-1)
        return ag.sigmoid(logits)

    def prompts(self, features: NodeFeatures, v) -> Tensor:
        """Per-node prompt p = sum_t alpha_t q_t; zero on padding."""
        f = features.values
        batched = f.ndim == 4
        v = ag.as_tensor(v)
        if batched and v.ndim == 1:
            v = ag.reshape(v, (1, -1)) * np.ones((f.shape[0], 1))
        alpha = self.prompt_weights(v, f)                       # (B?, N, M, T)
        q = self.candidates(v)                                   # (B?, T, D)
        lead = f.shape[:-1]
        if batched:
            b = f.shape[0]
            p = ag.matmul(ag.reshape(alpha, (b, -1, self.num_prompts)), q)
        else:
            p = ag.matmul(ag.reshape(alpha, (-1, self.num_prompts)), q)
        p = ag.reshape(p, lead + (self.dim,))
        return p * features.mask[..., None].astype(ag.DTYPE)

    def apply(self, features: NodeFeatures, v) -> NodeFeatures:
        return NodeFeatures(features.values + self.prompts(features, v), features.mask)

    forward = apply


class SimplePrompt(Module):
    """Baseline: one linearly projected spec vector added to every node."""

    def __init__(self, num_classes: int, dim: int, rng: np.random.Generator):
        super().__init__()
        self.projector = Linear(num_classes, dim, rng)

    def apply(self, features: NodeFeatures, v) -> NodeFeatures:
        f = features.values
        p = self.projector(_as_spec_tensor(v))                  # (B, D)
        if f.ndim == 4:
            p = ag.reshape(p, (p.shape[0], 1, 1, p.shape[-1]))
        else:
            p = ag.reshape(p, (p.shape[-1],))
        return NodeFeatures(f + p * features.mask[..., None].astype(ag.DTYPE), features.mask)

    forward = apply
