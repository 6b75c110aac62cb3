"""Self-supervised losses, downstream heads and their losses."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, DimensionError, Tensor
from .graph import LogTransitionSet

BCE_EPS = 1e-7


@dataclass
class LossBreakdown:
    l1_transition: float
    l1_feature: float
    l2_bce: float
    total: float
    beta1: float
    beta2: float
    alpha1: float
    alpha2: float
    tensor: Tensor | None = field(default=None, repr=False, compare=False)

    def as_dict(self) -> dict[str, float]:
        return {
            "l1_transition": self.l1_transition,
            "l1_feature": self.l1_feature,
            "l2_bce": self.l2_bce,
            "total": self.total,
        }


# ---------------------------------------------------------------------------
# heads

def init_heads(d: int, d0: int, num_classes: int, cluster_count: int, rng: np.random.Generator,
               hidden: int | None = None) -> dict[str, Tensor]:
    hidden = hidden or d

    def u(fan_in, shape, name):
        b = np.sqrt(1.0 / fan_in)
        return Tensor(rng.uniform(-b, b, size=shape), requires_grad=True, name=name)

    heads = {"rec.W": u(d, (d, d0), "rec.W"), "rec.b": u(d, (d0,), "rec.b")}
    if num_classes:
        heads.update({
            "cls.W1": u(d, (d, hidden), "cls.W1"), "cls.b1": u(d, (hidden,), "cls.b1"),
            "cls.W2": u(hidden, (hidden, num_classes), "cls.W2"), "cls.b2": u(hidden, (num_classes,), "cls.b2"),
        })
    if cluster_count:
        heads.update({"clu.W": u(d, (d, cluster_count), "clu.W"), "clu.b": u(d, (cluster_count,), "clu.b")})
    return heads


def reconstruct(Z: Tensor, heads: dict[str, Tensor]) -> Tensor:
    return ad.add(ad.matmul(Z, heads["rec.W"]), heads["rec.b"])


def classify(Z: Tensor, heads: dict[str, Tensor]) -> Tensor:
    hidden = ad.relu(ad.add(ad.matmul(Z, heads["cls.W1"]), heads["cls.b1"]))
    return ad.add(ad.matmul(hidden, heads["cls.W2"]), heads["cls.b2"])


def soft_clusters(Z: Tensor, heads: dict[str, Tensor]) -> Tensor:
    return ad.row_softmax(ad.add(ad.matmul(Z, heads["clu.W"]), heads["clu.b"]))


# ---------------------------------------------------------------------------
# losses

def cosine_similarity_matrix(Z) -> Tensor:
    return ad.cosine_rows(Z, eps=1e-12)


def transition_preservation_loss(Ms: LogTransitionSet, Zstar) -> Tensor:
    """``sum_p ||M_p - Z*||_F^2 / n^2``."""
    Zstar = ad.as_tensor(Zstar)
    n = Zstar.shape[0]
    total = None
    for M in Ms.matrices:
        if M.shape != Zstar.shape:
            raise DimensionError(f"transition_preservation_loss: M {M.shape} vs Z* {Zstar.shape}")
        term = ad.frobenius_sq(ad.sub(Zstar, M))
        total = term if total is None else ad.add(total, term)
    return ad.scale(total, 1.0 / (n * n))


def feature_reconstruction_loss(X, Xhat) -> Tensor:
    """``||X - Xhat||_F / n``."""
    X, Xhat = ad.as_tensor(X), ad.as_tensor(Xhat)
    if X.shape != Xhat.shape:
        raise DimensionError(f"feature_reconstruction_loss: X {X.shape} vs Xhat {Xhat.shape}")
    return ad.scale(ad.sqrt(ad.frobenius_sq(ad.sub(X, Xhat))), 1.0 / X.shape[0])


def _bce_terms(target, soft: Tensor, eps: float) -> Tensor:
    # log((x + eps) / (1 + eps)) keeps every term <= 0, so the loss is exactly 0 at soft == target
    norm = np.log1p(eps)
    pos = ad.sub(ad.log(soft, eps=eps), norm)
    neg = ad.sub(ad.log(ad.sub(1.0, soft), eps=eps), norm)
    return ad.add(ad.mul(pos, target), ad.mul(neg, 1.0 - np.asarray(target, dtype=np.float64)))


def augmentation_bce(A, Asoft, eps: float = BCE_EPS) -> Tensor:
    """Mean binary cross-entropy of the relaxed adjacency against ``A`` over all n^2 ordered pairs."""
    A = np.asarray(A, dtype=np.float64)
    Asoft = ad.as_tensor(Asoft)
    if A.shape != Asoft.shape:
        raise DimensionError(f"augmentation_bce: A {A.shape} vs A' {Asoft.shape}")
    if np.any(Asoft.data < 0) or np.any(Asoft.data > 1):
        raise ContractError("augmentation_bce: relaxed adjacency must lie in [0, 1]")
    return ad.scale(ad.sum(_bce_terms(A, Asoft, eps)), -1.0 / A.size)


def augmentation_bce_pairs(target: np.ndarray, soft: Tensor, n: int, eps: float = BCE_EPS) -> Tensor:
    """:func:`augmentation_bce` when ``soft`` lists the unordered candidate pairs.

    Pairs outside the candidate list have soft value 0 and target 0 and
    contribute exactly 0, as does the diagonal.
    """
    return ad.scale(ad.sum(_bce_terms(target, soft, eps)), -2.0 / (n * n))


def total_ssl_loss(l1_transition, l1_feature, l2_bce, alpha1: float = 1.0, alpha2: float = 0.5,
                   beta1: float = 1.0, beta2: float = 0.5) -> LossBreakdown:
    """``alpha1 * (beta1 * transition + beta2 * feature) + alpha2 * bce``."""
    if min(alpha1, alpha2, beta1, beta2) < 0:
        raise ContractError("total_ssl_loss: weights must be non-negative")
    parts = [ad.as_tensor(x) for x in (l1_transition, l1_feature, l2_bce)]
    l1 = ad.add(ad.scale(parts[0], beta1), ad.scale(parts[1], beta2))
    total = ad.add(ad.scale(l1, alpha1), ad.scale(parts[2], alpha2))
    return LossBreakdown(parts[0].item(), parts[1].item(), parts[2].item(), total.item(),
                         beta1, beta2, alpha1, alpha2, tensor=total)


def modularity_term(C, A: np.ndarray) -> Tensor:
    """``-(1/2m) tr(C^T (A - d d^T / 2m) C)``."""
    C = ad.as_tensor(C)
    A = np.asarray(A, dtype=np.float64)
    d = A.sum(axis=1)
    two_m = d.sum()
    if two_m <= 0:
        raise ContractError("modularity_loss: graph has no edges")
    B = A - np.outer(d, d) / two_m
    return ad.scale(ad.sum(ad.mul(C, ad.matmul(B, C))), -1.0 / two_m)


def collapse_regularizer(C) -> Tensor:
    """``sqrt(M)/n * ||sum_i C_i|| - 1``."""
    C = ad.as_tensor(C)
    n, M = C.shape
    sizes = ad.sum(C, axis=0)
    return ad.sub(ad.scale(ad.sqrt(ad.frobenius_sq(sizes)), np.sqrt(M) / n), 1.0)


def modularity_loss(C, A: np.ndarray, collapse_weight: float = 1.0) -> Tensor:
    return ad.add(modularity_term(C, A), ad.scale(collapse_regularizer(C), collapse_weight))


def classification_loss(logits, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy."""
    logits = ad.as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"classification_loss: logits {logits.shape} vs labels {labels.shape}")
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(labels)), labels] = 1.0
    return ad.scale(ad.sum(ad.mul(ad.log_softmax(logits), onehot)), -1.0 / len(labels))
