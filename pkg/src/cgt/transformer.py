"""Community-aware graph transformer.

Attention is evaluated on a directed pair list (both directions of every
candidate pair plus self loops) rather than a dense n x n score matrix. A pair
whose augmentation weight is 0 gets exactly zero attention, so this is the
masked softmax over ``N(i) + {i}`` without the quadratic memory.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor
from .graph import Graph, reachability


@dataclass(frozen=True, eq=False)
class ProximityTensor:
    sim: np.ndarray  # n x n x K


@dataclass(frozen=True)
class TransformerConfig:
    d: int = 64
    heads: int = 4
    layers: int = 2
    K: int = 3
    ffn_residual: bool = False
    community_attention: bool = True

    def __post_init__(self):
        if self.d % self.heads:
            raise ValueError(f"d={self.d} is not divisible by heads={self.heads}")


@dataclass(eq=False)
class ModelParams:
    d0: int
    config: TransformerConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)

    @property
    def d_k(self) -> int:
        return self.config.d // self.config.heads

    def __getitem__(self, key: str) -> Tensor:
        return self.tensors[key]

    def parameters(self) -> list[Tensor]:
        return list(self.tensors.values())

    def state(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.tensors.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, v in state.items():
            self.tensors[k].data = v.copy()


def _uniform(rng, fan_in, shape, name):
    bound = np.sqrt(1.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


def init_params(d0: int, config: TransformerConfig, rng: np.random.Generator) -> ModelParams:
    """Uniform(+-sqrt(1/fan_in)) weights; layer norms start at (1, 0), role bias at (1, 0).

    Weights are stored input-major, so a row-vector state ``h`` maps as
    ``h @ W``.
    """
    d, H, K = config.d, config.heads, config.K
    t: dict[str, Tensor] = {
        "W0": _uniform(rng, d0, (d0, d), "W0"),
        "b0": _uniform(rng, d0, (d,), "b0"),
    }
    for l in range(config.layers):
        p = f"l{l}."
        for name in ("WnQ", "WsQ", "WnK", "WsK", "V", "O"):
            t[p + name] = _uniform(rng, d, (d, d), p + name)
        t[p + "F"] = _uniform(rng, K, (K, d), p + "F")
        t[p + "c"] = _uniform(rng, K, (d,), p + "c")
        t[p + "w_phi"] = Tensor(np.ones(H), requires_grad=True, name=p + "w_phi")
        t[p + "b_phi"] = Tensor(np.zeros(H), requires_grad=True, name=p + "b_phi")
        t[p + "W1"] = _uniform(rng, d, (d, 2 * d), p + "W1")
        t[p + "W2"] = _uniform(rng, 2 * d, (2 * d, d), p + "W2")
        for ln in ("ln1", "ln2"):
            t[p + ln + ".g"] = Tensor(np.ones(d), requires_grad=True, name=p + ln + ".g")
            t[p + ln + ".b"] = Tensor(np.zeros(d), requires_grad=True, name=p + ln + ".b")
    return ModelParams(d0, config, t)


# ---------------------------------------------------------------------------
# structural encodings

def _hop_indicator(g: Graph, k: int) -> np.ndarray:
    R = reachability(g, k).astype(np.float32)
    isolated = g.adjacency().sum(axis=1) == 0
    R[isolated] = 0.0
    return R


def multiscale_proximity(g: Graph, K: int) -> ProximityTensor:
    """Jaccard overlap of self-inclusive k-hop sets, k = 1..K, for every pair.

    Isolated nodes have no k-step transitions, so their hop set is empty and
    every pair involving them scores 0 (0/0 := 0).
    """
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    sim = np.zeros((g.n, g.n, K))
    for k in range(1, K + 1):
        R = _hop_indicator(g, k)
        inter = (R @ R.T).astype(np.float64)
        size = R.sum(axis=1).astype(np.float64)
        union = size[:, None] + size[None, :] - inter
        with np.errstate(divide="ignore", invalid="ignore"):
            sim[:, :, k - 1] = np.where(union > 0, inter / union, 0.0)
    return ProximityTensor(sim)


def pair_proximity(g: Graph, K: int, src: np.ndarray, dst: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Rows of :func:`multiscale_proximity` for selected pairs only (E x K)."""
    src, dst = np.asarray(src), np.asarray(dst)
    out = np.zeros((len(src), K))
    for k in range(1, K + 1):
        R = _hop_indicator(g, k)
        size = R.sum(axis=1).astype(np.float64)
        for start in range(0, len(src), chunk):
            s, t = src[start:start + chunk], dst[start:start + chunk]
            inter = np.einsum("ij,ij->i", R[s], R[t], dtype=np.float64)
            union = size[s] + size[t] - inter
            with np.errstate(divide="ignore", invalid="ignore"):
                out[start:start + chunk, k - 1] = np.where(union > 0, inter / union, 0.0)
    return out


def proximity_encode(sim_ij, params: ModelParams, layer: int) -> Tensor:
    """Affine map of a (batch of) length-K similarity vector(s) to d dims."""
    p = f"l{layer}."
    sim_ij = ad.as_tensor(sim_ij)
    single = sim_ij.ndim == 1
    x = ad.reshape(sim_ij, (1, -1)) if single else sim_ij
    out = ad.add(ad.matmul(x, params[p + "F"]), params[p + "c"])
    return ad.reshape(out, (params.config.d,)) if single else out


def degree_role_bias(D, head: int, params: ModelParams, layer: int) -> Tensor:
    """``w_phi[head] * D + b_phi[head]`` (any shape of D)."""
    p = f"l{layer}."
    D = ad.as_tensor(D)
    onehot = np.zeros(params.config.heads)
    onehot[head] = 1.0
    w = ad.sum(ad.mul(params[p + "w_phi"], onehot))
    b = ad.sum(ad.mul(params[p + "b_phi"], onehot))
    return ad.add(ad.mul(D, w), b)


def input_projection(X, params: ModelParams) -> Tensor:
    X = ad.as_tensor(X)
    if X.ndim != 2 or X.shape[1] != params.d0:
        raise DimensionError(f"input_projection: features {X.shape} do not match d0={params.d0}")
    return ad.add(ad.matmul(X, params["W0"]), params["b0"])


# ---------------------------------------------------------------------------
# attention structure

@dataclass(eq=False)
class AttentionGraph:
    """Directed attention pairs for one forward pass.

    ``src`` is the attending node (softmax segment), ``dst`` the attended one.
    ``weights`` holds each pair's augmentation weight (None means all 1).
    """

    n: int
    src: np.ndarray
    dst: np.ndarray
    sim: np.ndarray
    dbias: np.ndarray
    weights: Tensor | None = None

    @property
    def num_pairs(self) -> int:
        return len(self.src)


def build_attention_graph(n: int, pairs: np.ndarray, pair_sim: np.ndarray, pair_dbias: np.ndarray,
                          self_sim: np.ndarray, pair_weights=None) -> AttentionGraph:
    """Expand unordered pairs into both directions and append self loops.

    Self loops always carry weight 1 and a degree-bias score of 0.
    """
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    nodes = np.arange(n)
    src = np.concatenate([pairs[:, 0], pairs[:, 1], nodes])
    dst = np.concatenate([pairs[:, 1], pairs[:, 0], nodes])
    sim = np.concatenate([pair_sim, pair_sim, self_sim]).reshape(len(src), -1)
    dbias = np.concatenate([pair_dbias, pair_dbias, np.zeros(n)])
    weights = None
    if pair_weights is not None:
        pw = ad.as_tensor(pair_weights)
        weights = ad.concat_last_dim([pw, pw, np.ones(n)])
    return AttentionGraph(n, src, dst, sim, dbias, weights)


def attention_graph_from_adjacency(g: Graph, hard: np.ndarray, K: int, D: np.ndarray | None = None) -> AttentionGraph:
    """Attention pairs from a dense 0/1 adjacency (small graphs, tests)."""
    iu, ju = np.nonzero(np.triu(hard, 1))
    pairs = np.stack([iu, ju], axis=1)
    sim = pair_proximity(g, K, iu, ju)
    nodes = np.arange(g.n)
    self_sim = pair_proximity(g, K, nodes, nodes)
    dbias = np.zeros(len(iu)) if D is None else D[iu, ju]
    return build_attention_graph(g.n, pairs, sim, dbias, self_sim)


def _head_blocks(d: int, H: int) -> np.ndarray:
    dk = d // H
    B = np.zeros((d, H))
    for h in range(H):
        B[h * dk:(h + 1) * dk, h] = 1.0
    return B


def attention_scores(h: Tensor, ag: AttentionGraph, params: ModelParams, layer: int) -> Tensor:
    """Pre-softmax logits, one column per head (num_pairs x H)."""
    cfg = params.config
    p = f"l{layer}."
    q = ad.gather_rows(ad.matmul(h, params[p + "WnQ"]), ag.src)
    k = ad.gather_rows(ad.matmul(h, params[p + "WnK"]), ag.dst)
    if cfg.community_attention:
        # s_ij @ Ws == sim_ij @ (F @ Ws) + c @ Ws; avoids materializing the E x d pair encodings
        F, c = params[p + "F"], ad.reshape(params[p + "c"], (1, cfg.d))
        for name in ("WsQ", "WsK"):
            W = params[p + name]
            proj = ad.add(ad.matmul(ag.sim, ad.matmul(F, W)), ad.matmul(c, W))
            if name == "WsQ":
                q = ad.add(q, proj)
            else:
                k = ad.add(k, proj)
    blocks = _head_blocks(cfg.d, cfg.heads)
    logits = ad.scale(ad.matmul(ad.mul(q, k), blocks), 1.0 / np.sqrt(params.d_k))
    if cfg.community_attention:
        phi = ad.add(ad.mul(ag.dbias[:, None], params[p + "w_phi"]), params[p + "b_phi"])
        logits = ad.add(logits, phi)
    return logits


def attention_probabilities(logits: Tensor, ag: AttentionGraph, heads: int) -> Tensor:
    """Softmax of each head's logits over every node's attention pairs."""
    E = ag.num_pairs
    flat = ad.reshape(logits, (E * heads,))
    segments = (ag.src[:, None] * heads + np.arange(heads)[None, :]).reshape(-1)
    weights = None
    if ag.weights is not None:
        weights = ad.reshape(ad.matmul(ad.reshape(ag.weights, (E, 1)), np.ones((1, heads))), (E * heads,))
    probs = ad.segment_softmax(flat, segments, ag.n * heads, weights)
    return ad.reshape(probs, (E, heads))


def attention_layer(h: Tensor, ag: AttentionGraph, params: ModelParams, layer: int,
                    return_attention: bool = False):
    cfg = params.config
    p = f"l{layer}."
    alpha = attention_probabilities(attention_scores(h, ag, params, layer), ag, cfg.heads)
    values = ad.gather_rows(ad.matmul(h, params[p + "V"]), ag.dst)
    spread = ad.matmul(alpha, _head_blocks(cfg.d, cfg.heads).T)
    heads_out = ad.segment_sum(ad.mul(spread, values), ag.src, ag.n)
    mixed = ad.matmul(heads_out, params[p + "O"])
    h_hat = ad.layer_norm(ad.add(h, mixed), params[p + "ln1.g"], params[p + "ln1.b"])
    ffn = ad.matmul(ad.relu(ad.matmul(h_hat, params[p + "W1"])), params[p + "W2"])
    if cfg.ffn_residual:
        out = ad.layer_norm(ad.add(h_hat, ffn), params[p + "ln2.g"], params[p + "ln2.b"])
    else:
        out = ffn
    return (out, alpha) if return_attention else out


def encode(X, ag: AttentionGraph, params: ModelParams) -> Tensor:
    h = input_projection(X, params)
    for l in range(params.config.layers):
        h = attention_layer(h, ag, params, l)
    return h


def dense_attention(alpha: np.ndarray, ag: AttentionGraph) -> np.ndarray:
    """Scatter pair attention (E x H) into H dense n x n matrices."""
    alpha = np.asarray(alpha)
    out = np.zeros((alpha.shape[1], ag.n, ag.n))
    for h in range(alpha.shape[1]):
        np.add.at(out[h], (ag.src, ag.dst), alpha[:, h])
    return out
