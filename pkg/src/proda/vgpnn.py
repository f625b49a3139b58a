"""Video graph parsing network: link / message / update layers, VGNorm, readout.

Shapes used throughout (B = batch, N = frames, M = node slots, P = M*M
ordered pairs):

    nodes      (B, N, M, D)   node_mask (B, N, M)
    edges      (B, N, P, De)  pair_mask (B, N, P)

Pair ``p = j * M + k`` is the directed edge j -> k. Every step re-applies the
masks so padded slots are exactly zero on output.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import autograd as ag
from .numerics.autograd import Tensor
from .numerics.layers import MLP, Linear, Module, Parameter, SelfAttention


def _fmask(mask: np.ndarray) -> np.ndarray:
    return mask[..., None].astype(ag.DTYPE)


@dataclass
class EdgeFeatures:
    values: Tensor          # (B, N, P, De)
    pair_mask: np.ndarray   # (B, N, P)

    @property
    def num_nodes(self) -> int:
        return int(round(np.sqrt(self.values.shape[2])))


def pair_mask_from(relations: np.ndarray, node_mask: np.ndarray) -> np.ndarray:
    """True where a relation exists between two unmasked, distinct nodes."""
    b, n, m = node_mask.shape
    both = node_mask[:, :, :, None] & node_mask[:, :, None, :]
    off_diag = ~np.eye(m, dtype=bool)
    present = relations.any(axis=-1) & both & off_diag
    return present.reshape(b, n, m * m)


class RelationEmbedding(Module):
    """Edge feature = sum of the embeddings of the relation types present."""

    def __init__(self, num_relation_types: int, dim: int, rng: np.random.Generator):
        super().__init__()
        self.table = Parameter(rng.normal(0.0, 1.0, size=(num_relation_types, dim)))

    def forward(self, relations: np.ndarray, node_mask: np.ndarray) -> EdgeFeatures:
        b, n, m, _, r = relations.shape
        pmask = pair_mask_from(relations, node_mask)
        rel = relations.reshape(b, n, m * m, r) * pmask[..., None]
        return EdgeFeatures(ag.matmul(Tensor(rel), self.table), pmask)


class Link(Module):
    """Temporal self-attention over each ordered pair's edge sequence.

    With ``identity_init`` the value projection starts at zero, so the residual
    attention block is the identity at initialisation and each edge first keeps
    its own relation before borrowing context from other frames.
    """

    def __init__(self, edge_dim: int, rng: np.random.Generator, identity_init: bool = False):
        super().__init__()
        self.attention = SelfAttention(edge_dim, rng, zero_value=identity_init)

    def forward(self, edges: EdgeFeatures) -> EdgeFeatures:
        x = ag.swapaxes(edges.values, 1, 2)                   # (B, P, N, De)
        mask = np.swapaxes(edges.pair_mask, 1, 2)              # (B, P, N)
        y = self.attention(x, mask)
        return EdgeFeatures(ag.swapaxes(y, 1, 2), edges.pair_mask)


class Message(Module):
    """Edge-gated messages summed over incoming edges j -> k."""

    def __init__(self, dim: int, edge_dim: int, rng: np.random.Generator):
        super().__init__()
        self.dim, self.edge_dim = dim, edge_dim
        self.project = Linear(dim + edge_dim, dim, rng)
        self.gate = MLP([edge_dim, dim, dim], rng)

    def forward(self, nodes: Tensor, edges: EdgeFeatures) -> Tensor:
        """``nodes`` may hold several prompted copies of the edge batch, stacked on axis 0."""
        bn, n, m, d = nodes.shape
        be = edges.values.shape[0]
        if bn % be:
            raise ag.ShapeError(f"Message: node batch {bn} is not a multiple of edge batch {be}")
        r = bn // be
        e = ag.reshape(edges.values, (be, n, m, m, self.edge_dim))
        pmask = _fmask(edges.pair_mask.reshape(be, n, m, m))
        # Linear(concat(f_j, e_jk)) split into its node and edge blocks
        w = self.project.weight
        from_node = ag.reshape(ag.matmul(nodes, w[:d]), (r, be, n, m, 1, d))
        from_edge = ag.matmul(e, w[d:]) + self.project.bias      # (Be, N, M, M, D)
        gate = ag.sigmoid(self.gate(e)) * pmask
        contrib = (from_node + from_edge) * gate                  # (r, Be, N, M, M, D)
        return ag.reshape(ag.sum_(contrib, axis=3), (bn, n, m, d))   # sum over sources j


class Update(Module):
    """f' = fuse([f + msg, f]); starts as the identity on ``f + msg``.

    The fuse MLP has a linear skip path initialized to pass the first
    argument through and a ReLU branch whose output layer starts at zero.
    """

    def __init__(self, dim: int, rng: np.random.Generator):
        super().__init__()
        self.skip = Linear(2 * dim, dim, rng, bias=False)
        self.skip.weight.data = np.vstack([np.eye(dim), np.zeros((dim, dim))])
        self.hidden = Linear(2 * dim, dim, rng)
        self.out = Linear(dim, dim, rng, zero=True)

    def forward(self, nodes: Tensor, messages: Tensor, node_mask: np.ndarray) -> Tensor:
        x = ag.concat([nodes + messages, nodes], axis=-1)
        y = self.skip(x) + self.out(ag.relu(self.hidden(x)))
        return y * _fmask(node_mask)


class VGNorm(Module):
    """Per-frame normalization around a momentum-tracked global frame mean.

    Training mode computes the masked batch mean per frame, folds it into
    ``mu_g`` with momentum ``alpha_m`` and normalizes every (video, frame)
    slab by ``x - alpha * mu_g`` over its Bessel-corrected spread. Eval mode
    uses the stored ``mu_g`` unchanged. Set ``track=False`` to compute the
    training-mode output without writing ``mu_g`` back.
    """

    def __init__(self, num_frames: int, momentum: float = 0.9, eps: float = 1e-5):
        super().__init__()
        self.num_frames, self.momentum, self.eps = num_frames, momentum, eps
        self.register_buffer("mu_g", np.zeros(num_frames))
        self.alpha = Parameter(np.ones(num_frames))
        self.gamma = Parameter(np.ones(num_frames))
        self.beta = Parameter(np.zeros(num_frames))
        self.track = True

    def batch_mean(self, x: Tensor, node_mask: np.ndarray) -> Tensor:
        d = x.shape[-1]
        counts = node_mask.sum(axis=(0, 2)) * d                 # (N,)
        if np.any(counts == 0):
            raise ValueError("VGNorm: a frame has no unmasked node across the batch")
        return ag.sum_(x * _fmask(node_mask), axis=(0, 2, 3)) * (1.0 / counts)

    def forward(self, x: Tensor, node_mask: np.ndarray, training: bool | None = None) -> Tensor:
        training = self.training if training is None else training
        b, n, m, d = x.shape
        if n != self.num_frames:
            raise ag.ShapeError(f"VGNorm built for N={self.num_frames}, got input {x.shape}")
        counts = node_mask.sum(axis=2) * d                       # (B, N)
        if np.any(counts < 2):
            raise ValueError("VGNorm: fewer than 2 unmasked samples in a (video, frame)")
        fm = _fmask(node_mask)
        if training:
            mu = self.batch_mean(x, node_mask)
            mu_g = self.momentum * Tensor(self.mu_g) + (1.0 - self.momentum) * mu
            if self.track:
                self.mu_g = mu_g.data.copy()
        else:
            mu_g = Tensor(self.mu_g)
        center = ag.reshape(self.alpha * mu_g, (1, n, 1, 1))
        centered = (x - center) * fm
        var = ag.sum_(centered * centered, axis=(2, 3)) * (1.0 / (counts - 1))   # (B, N)
        scale = ag.reshape(self.gamma, (1, n)) / ag.sqrt(var + self.eps)
        out = centered * ag.reshape(scale, (b, n, 1, 1)) + ag.reshape(self.beta, (1, n, 1, 1))
        return out * fm


@dataclass
class ReadoutOutput:
    global_: Tensor         # (B, D)
    frame_weights: Tensor   # (B, N) in [0, 1]
    node_weights: Tensor    # (B, N, M), rows sum to 1 over unmasked nodes
    frame_features: Tensor  # (B, N, D)


class Readout(Module):
    def __init__(self, dim: int, rng: np.random.Generator, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        # softmax over nodes ignores a shared offset, so the score needs no output bias
        self.node_score = MLP([dim, dim, 1], rng, last_bias=False)
        self.frame_score = MLP([dim, dim, 1], rng)

    def forward(self, x: Tensor, node_mask: np.ndarray) -> ReadoutOutput:
        b, n, m, d = x.shape
        logits = ag.reshape(self.node_score(x), (b, n, m))
        w = ag.softmax(logits, axis=-1, mask=node_mask)
        h = ag.matmul(ag.reshape(w, (b, n, 1, m)), x)          # (B, N, 1, D)
        h = ag.reshape(h, (b, n, d))
        s = ag.sigmoid(ag.reshape(self.frame_score(h), (b, n)))
        num = ag.sum_(h * ag.reshape(s, (b, n, 1)), axis=1)
        den = ag.sum_(s, axis=1, keepdims=True) + self.eps
        return ReadoutOutput(num / den, s, w, h)


class VGPNNLayer(Module):
    def __init__(self, dim: int, edge_dim: int, num_frames: int, rng: np.random.Generator,
                 momentum: float = 0.9, eps: float = 1e-5, link_identity_init: bool = True):
        super().__init__()
        self.link = Link(edge_dim, rng, link_identity_init)
        self.message = Message(dim, edge_dim, rng)
        self.update = Update(dim, rng)
        self.norm = VGNorm(num_frames, momentum, eps)

    def forward(self, nodes: Tensor, node_mask: np.ndarray, edges: EdgeFeatures,
                training: bool | None = None) -> tuple[Tensor, EdgeFeatures]:
        edges = self.link(edges)
        msg = self.message(nodes, edges)
        nodes = self.update(nodes, msg, node_mask)
        nodes = self.norm(nodes, node_mask, training)
        return nodes, edges


class VGPNN(Module):
    """Stack of link -> message -> update -> VGNorm layers.

    ``nodes`` may stack several prompted copies of the same videos along the
    batch axis; the edge features, which do not depend on the prompt, are then
    computed once and broadcast across the copies. ``node_mask`` must match
    ``nodes``.
    """

    def __init__(self, dim: int, edge_dim: int, num_frames: int, num_relation_types: int,
                 num_layers: int, rng: np.random.Generator, momentum: float = 0.9,
                 eps: float = 1e-5, link_identity_init: bool = True):
        super().__init__()
        if num_layers < 1:
            raise ValueError("VGPNN needs at least one layer")
        self.relation_embedding = RelationEmbedding(num_relation_types, edge_dim, rng)
        self.layers = [VGPNNLayer(dim, edge_dim, num_frames, rng, momentum, eps, link_identity_init)
                       for _ in range(num_layers)]

    def embed_edges(self, relations: np.ndarray, node_mask: np.ndarray) -> EdgeFeatures:
        return self.relation_embedding(relations, node_mask)

    def forward(self, nodes: Tensor, node_mask: np.ndarray, edges: EdgeFeatures,
                training: bool | None = None) -> Tensor:
        for layer in self.layers:
            nodes, edges = layer(nodes, node_mask, edges, training)
        return nodes
