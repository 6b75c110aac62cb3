"""Degree-debiased edge augmentation.

Context pairs are nodes in the same community within ``k`` hops. They get a
degree-bias score ``1/sqrt(d_i d_j)``, which is blended with the adjacency into
per-pair edge probabilities. A binary-concrete (two-class Gumbel-Softmax)
relaxation then samples a new adjacency that stays differentiable.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, Tensor
from .community import ClusterAssignment
from .graph import Graph, TransitionMatrix, degrees, khop_set, reachability


@dataclass(frozen=True, eq=False)
class DegreeBiasMatrix:
    D: np.ndarray


@dataclass(frozen=True, eq=False)
class BlendedMatrix:
    A_tilde: np.ndarray
    xi: float
    zeta: float


@dataclass(frozen=True, eq=False)
class AugmentedAdjacency:
    soft: np.ndarray
    hard: np.ndarray
    tau: float
    seed: int


def context_nodes(g: Graph, c: ClusterAssignment, P: TransitionMatrix | None, v: int, k: int) -> set[int]:
    """Nodes other than ``v`` within ``k`` hops of ``v`` and in its cluster.

    ``P`` is accepted for interface symmetry; hop reachability is computed by
    BFS, which has the same support as ``P^k > 0`` on the walk graph.
    """
    if k < 1:
        raise ContractError(f"context_nodes: k must be >= 1, got {k}")
    return {u for u in khop_set(g, v, k, include_self=False) if c.assign[u] == c.assign[v]}


def context_mask(g: Graph, c: ClusterAssignment, k: int) -> np.ndarray:
    """Boolean n x n matrix of context membership (symmetric, zero diagonal)."""
    if k < 1:
        raise ContractError(f"context_mask: k must be >= 1, got {k}")
    same = c.assign[:, None] == c.assign[None, :]
    mask = reachability(g, k) & same
    np.fill_diagonal(mask, False)
    return mask


def degree_bias_matrix(g: Graph, contexts) -> DegreeBiasMatrix:
    """``D_ij = 1/sqrt(d_i d_j)`` on mutual context pairs, 0 elsewhere.

    ``contexts`` is either a boolean n x n mask or a sequence of per-node sets.
    """
    if isinstance(contexts, np.ndarray):
        mask = contexts.astype(bool)
    else:
        mask = np.zeros((g.n, g.n), dtype=bool)
        for v, ctx in enumerate(contexts):
            if ctx:
                mask[v, list(ctx)] = True
    mask = mask & mask.T
    np.fill_diagonal(mask, False)
    deg = degrees(g).astype(np.float64)
    prod = np.outer(deg, deg)
    mask &= prod > 0
    D = np.zeros((g.n, g.n))
    D[mask] = 1.0 / np.sqrt(prod[mask])
    return DegreeBiasMatrix(D)


def blend(A: np.ndarray, D: DegreeBiasMatrix, xi: float, zeta: float) -> BlendedMatrix:
    if xi < 0 or zeta < 0:
        raise ContractError(f"blend: xi and zeta must be non-negative, got xi={xi}, zeta={zeta}")
    At = np.clip(xi * np.asarray(A, dtype=np.float64) + zeta * D.D, 0.0, 1.0)
    np.fill_diagonal(At, 0.0)
    return BlendedMatrix(At, float(xi), float(zeta))


def _logit(p: np.ndarray) -> np.ndarray:
    return np.log(p) - np.log1p(-p)


def logistic_noise(size, rng: np.random.Generator) -> np.ndarray:
    """Difference of two independent standard Gumbel draws."""
    return ad.gumbel_noise(size, rng) - ad.gumbel_noise(size, rng)


def relaxed_bernoulli(logits, noise: np.ndarray, tau: float) -> Tensor:
    """``sigmoid((logits + noise) / tau)``, differentiable in ``logits``."""
    if tau <= 0:
        raise ContractError(f"relaxed_bernoulli: tau must be positive, got {tau}")
    return ad.sigmoid(ad.scale(ad.add(logits, noise), 1.0 / tau))


def probability_logits(probs) -> Tensor:
    """Differentiable ``log p - log(1 - p)`` for p strictly inside (0, 1)."""
    probs = ad.as_tensor(probs)
    return ad.sub(ad.log(probs, eps=0.0), ad.log(ad.sub(1.0, probs), eps=0.0))


def sample_edges(A_tilde: BlendedMatrix, tau: float, seed: int) -> AugmentedAdjacency:
    """Draw one relaxed + hard adjacency from the blended probabilities.

    Pairs with probability exactly 0 or 1 are fixed; every other unordered
    pair gets its own logistic noise and is mirrored.
    """
    if tau <= 0:
        raise ContractError(f"sample_edges: tau must be positive, got {tau}")
    At = A_tilde.A_tilde
    n = At.shape[0]
    iu, ju = np.triu_indices(n, 1)
    p = At[iu, ju]
    free = (p > 0) & (p < 1)
    rng = np.random.default_rng(seed)
    soft_vals = (p >= 1).astype(np.float64)
    noise = logistic_noise(int(free.sum()), rng)
    z = (_logit(p[free]) + noise) / tau
    soft_vals[free] = 0.5 * (1.0 + np.tanh(0.5 * z))
    soft = np.zeros((n, n))
    soft[iu, ju] = soft_vals
    soft = soft + soft.T
    hard = (soft > 0.5).astype(np.float64)
    return AugmentedAdjacency(soft, hard, float(tau), int(seed))


@dataclass
class PairSample:
    soft: Tensor
    hard: np.ndarray
    weights: Tensor


class EdgeSampler:
    """Trainable pair-level version of :func:`sample_edges`.

    Holds the candidate pairs (every unordered pair with positive blended
    probability) and a per-pair logit offset ``theta`` that is added on
    context pairs. ``theta`` starts at zero, so the initial inclusion
    probabilities equal the blended matrix.
    """

    def __init__(self, g: Graph, blended: BlendedMatrix, learnable: np.ndarray | None = None):
        At = blended.A_tilde
        iu, ju = np.triu_indices(g.n, 1)
        keep = At[iu, ju] > 0
        self.n = g.n
        self.pairs = np.stack([iu[keep], ju[keep]], axis=1)
        self.prob = At[iu[keep], ju[keep]]
        self.fixed = self.prob >= 1.0
        self.free = ~self.fixed
        A = g.adjacency()
        self.target = A[self.pairs[:, 0], self.pairs[:, 1]] if len(self.pairs) else np.zeros(0)
        if learnable is None:
            learnable = np.ones(len(self.pairs), dtype=bool)
        self.learnable = (np.asarray(learnable, dtype=bool) & self.free).astype(np.float64)
        base = np.zeros(len(self.pairs))
        base[self.free] = _logit(self.prob[self.free])
        self.base_logit = base
        self.theta = Tensor(np.zeros(len(self.pairs)), requires_grad=True, name="aug.theta")

    @classmethod
    def from_matrices(cls, g: Graph, blended: BlendedMatrix, context: np.ndarray) -> EdgeSampler:
        iu, ju = np.triu_indices(g.n, 1)
        keep = blended.A_tilde[iu, ju] > 0
        return cls(g, blended, context[iu[keep], ju[keep]])

    def __len__(self):
        return len(self.pairs)

    def logits(self) -> Tensor:
        return ad.add(self.base_logit, ad.mul(self.theta, self.learnable))

    def probabilities(self) -> np.ndarray:
        z = self.base_logit + self.theta.data * self.learnable
        p = 1.0 / (1.0 + np.exp(-z))
        return np.where(self.fixed, 1.0, p)

    def sample(self, tau: float, rng: np.random.Generator, straight_through: bool = True,
               noise: np.ndarray | None = None) -> PairSample:
        if noise is None:
            noise = logistic_noise(len(self.pairs), rng)
        relaxed = relaxed_bernoulli(self.logits(), noise, tau)
        soft = ad.add(ad.mul(relaxed, self.free.astype(np.float64)), self.fixed.astype(np.float64))
        hard = (soft.data > 0.5).astype(np.float64)
        weights = ad.straight_through(hard, soft) if straight_through else soft
        return PairSample(soft, hard, weights)

    def mode(self) -> np.ndarray:
        """Most likely hard adjacency over the candidate pairs (no noise)."""
        return (self.probabilities() > 0.5).astype(np.float64)

    def dense(self, values: np.ndarray) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        if len(self.pairs):
            out[self.pairs[:, 0], self.pairs[:, 1]] = values
            out[self.pairs[:, 1], self.pairs[:, 0]] = values
        return out
