"""Training pipelines: SSL pretraining, supervised fine-tuning and clustering."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autodiff as ad
from . import objectives as obj
from .augmentation import EdgeSampler, blend, context_mask, degree_bias_matrix, logistic_noise
from .community import ClusterAssignment, default_cluster_count, kmeans
from .graph import Graph, degrees, k_step, log_transitions, transition_matrix
from .metrics import FairnessReport, accuracy, conductance, fairness_report, modularity_score
from .transformer import (
    AttentionGraph,
    ModelParams,
    TransformerConfig,
    build_attention_graph,
    encode,
    init_params,
    pair_proximity,
)

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    seed: int = 0
    epochs_pretrain: int = 100
    epochs_finetune: int = 200
    epochs_cluster: int = 200
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 5e-4
    patience: int = 50
    freeze_backbone: bool = False
    train_frac: float = 0.6
    val_frac: float = 0.2
    test_frac: float = 0.2
    tau_start: float = 1.0
    tau_end: float = 0.1
    resample_every: int = 1
    straight_through: bool = True
    xi: float = 0.9
    zeta: float = 0.3
    k: int = 3
    K: int = 3
    P_max: int = 3
    log_eps: float = 1e-6
    communities: int = 0
    cluster_space: str = "features"
    kmeans_max_iter: int = 100
    kmeans_tol: float = 1e-6
    d: int = 64
    heads: int = 4
    layers: int = 2
    ffn_residual: bool = False
    classifier_hidden: int = 0
    cluster_heads: int = 0
    collapse_weight: float = 1.0
    alpha1: float = 1.0
    alpha2: float = 0.5
    beta1: float = 1.0
    beta2: float = 0.5
    use_pretrain: bool = True
    use_augmentation: bool = True
    use_community_attention: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        fracs = (self.train_frac, self.val_frac, self.test_frac)
        if min(fracs) < 0 or not math.isclose(sum(fracs), 1.0, abs_tol=1e-9):
            raise ValueError(f"split fractions must be non-negative and sum to 1, got {fracs}")
        if min(self.epochs_pretrain, self.epochs_finetune, self.epochs_cluster) < 1:
            raise ValueError("epoch counts must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.tau_start <= 0 or self.tau_end <= 0:
            raise ValueError("temperatures must be positive")
        if self.cluster_space not in ("features", "features+walk"):
            raise ValueError(f"cluster_space must be 'features' or 'features+walk', got {self.cluster_space!r}")
        if self.d % self.heads:
            raise ValueError(f"d={self.d} is not divisible by heads={self.heads}")
        if min(self.xi, self.zeta, self.alpha1, self.alpha2, self.beta1, self.beta2) < 0:
            raise ValueError("xi, zeta, alpha and beta weights must be non-negative")
        if min(self.k, self.K, self.P_max, self.resample_every) < 1:
            raise ValueError("k, K, P_max and resample_every must be >= 1")

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **changes) -> TrainConfig:
        data = self.to_dict()
        data.update(changes)
        return TrainConfig(**data)

    def transformer(self) -> TransformerConfig:
        return TransformerConfig(self.d, self.heads, self.layers, self.K, self.ffn_residual,
                                 self.use_community_attention)

    def tau(self, epoch: int, total: int) -> float:
        if total <= 1:
            return self.tau_end
        frac = min(epoch / (total - 1), 1.0)
        return self.tau_start + (self.tau_end - self.tau_start) * frac


class DivergenceError(RuntimeError):
    """Loss became non-finite; ``checkpoint`` holds the last finite state."""

    def __init__(self, message: str, checkpoint: dict, history: list):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.history = history


# ---------------------------------------------------------------------------
# splits

@dataclass(frozen=True, eq=False)
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


def _split_sizes(n: int, fractions) -> list[int]:
    raw = [f * n for f in fractions]
    sizes = [int(math.floor(r)) for r in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[: n - sum(sizes)]:
        sizes[i] += 1
    return sizes


def split(n: int, labels, fractions=(0.6, 0.2, 0.2), seed: int = 0) -> Split:
    """Random train/val/test partition, stratified by label.

    Split sizes come from largest-remainder rounding of ``fractions * n``.
    Nodes are ordered by their fractional rank within their own class, so
    each class is spread over the three parts in proportion. Falls back to an
    unstratified shuffle (with a warning) when some class has fewer than 3 nodes.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or min(fractions) < 0 or not math.isclose(sum(fractions), 1.0, abs_tol=1e-9):
        raise ValueError(f"fractions must be three non-negative numbers summing to 1, got {fractions}")
    rng = np.random.default_rng(seed)
    sizes = _split_sizes(n, fractions)
    stratify = labels is not None
    if stratify:
        labels = np.asarray(labels)
        counts = np.bincount(labels)
        if np.any((counts > 0) & (counts < 3)):
            warnings.warn("a class has fewer than 3 nodes; falling back to an unstratified split", stacklevel=2)
            stratify = False
    if stratify:
        key = np.empty(n)
        for c in np.unique(labels):
            members = np.flatnonzero(labels == c)
            members = members[rng.permutation(len(members))]
            key[members] = (np.arange(len(members)) + 0.5) / len(members)
        tie = rng.permutation(n)
        order = np.lexsort((tie, key))
    else:
        order = rng.permutation(n)
    a, b = sizes[0], sizes[0] + sizes[1]
    return Split(np.sort(order[:a]), np.sort(order[a:b]), np.sort(order[b:]))


# ---------------------------------------------------------------------------
# optimizer

class Adam:
    """Adaptive moment estimation with L2 weight decay folded into the gradient."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.lr, self.eps, self.weight_decay = lr, eps, weight_decay
        self.b1, self.b2 = betas
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = np.zeros_like(p.data) if p.grad is None else p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ---------------------------------------------------------------------------
# model bundle

class CGTModel:
    """Structural preprocessing plus every learnable tensor for one graph."""

    def __init__(self, g: Graph, cfg: TrainConfig, num_classes: int = 0, cluster_heads: int = 0):
        self.g, self.cfg = g, cfg
        self.rng = np.random.default_rng([cfg.seed, 1])
        self.noise_rng = np.random.default_rng([cfg.seed, 2])
        self.degrees = degrees(g)
        self.A = g.adjacency()

        self.clusters = self._communities()
        ctx = context_mask(g, self.clusters, cfg.k)
        self.D = degree_bias_matrix(g, ctx)
        self.sampler: EdgeSampler | None = None
        if cfg.use_augmentation:
            self.blended = blend(self.A, self.D, cfg.xi, cfg.zeta)
            self.sampler = EdgeSampler.from_matrices(g, self.blended, ctx)
            pairs = self.sampler.pairs
        else:
            self.blended = None
            pairs = g.edges
        self.pairs = pairs
        self.pair_sim = pair_proximity(g, cfg.K, pairs[:, 0], pairs[:, 1])
        nodes = np.arange(g.n)
        self.self_sim = pair_proximity(g, cfg.K, nodes, nodes)
        self.pair_dbias = self.D.D[pairs[:, 0], pairs[:, 1]] if len(pairs) else np.zeros(0)

        self.params: ModelParams = init_params(g.X.shape[1], cfg.transformer(), self.rng)
        self.heads = obj.init_heads(cfg.d, g.X.shape[1], num_classes, cluster_heads, self.rng,
                                    cfg.classifier_hidden or None)
        self._log_T = None
        self._noise = None

    def _communities(self) -> ClusterAssignment:
        cfg, g = self.cfg, self.g
        M = cfg.communities or default_cluster_count(g.n, g.num_classes)
        M = min(M, g.n)
        points = g.X
        if cfg.cluster_space == "features+walk":
            points = np.concatenate([g.X, k_step(transition_matrix(g), cfg.k).P], axis=1)
        return kmeans(points, M, seed=cfg.seed, max_iter=cfg.kmeans_max_iter, tol=cfg.kmeans_tol)

    @property
    def log_T(self):
        if self._log_T is None:
            self._log_T = log_transitions(transition_matrix(self.g), self.cfg.P_max, self.cfg.log_eps)
        return self._log_T

    def backbone_parameters(self) -> list[ad.Tensor]:
        params = self.params.parameters()
        if self.sampler is not None:
            params.append(self.sampler.theta)
        return params

    def head_parameters(self, prefix: str) -> list[ad.Tensor]:
        return [t for k, t in self.heads.items() if k.startswith(prefix)]

    def state(self) -> dict[str, np.ndarray]:
        st = {"params." + k: v for k, v in self.params.state().items()}
        st.update({"heads." + k: t.data.copy() for k, t in self.heads.items()})
        if self.sampler is not None:
            st["aug.theta"] = self.sampler.theta.data.copy()
        return st

    def load_state(self, st: dict[str, np.ndarray]) -> None:
        for key, value in st.items():
            if key.startswith("params."):
                self.params.tensors[key[7:]].data = value.copy()
            elif key.startswith("heads."):
                self.heads[key[6:]].data = value.copy()
            elif key == "aug.theta" and self.sampler is not None:
                self.sampler.theta.data = value.copy()

    def attention_graph(self, tau: float | None = None, resample: bool = True):
        """Training graph (relaxed sample) when ``tau`` is given, else the noise-free mode graph."""
        if self.sampler is None:
            return build_attention_graph(self.g.n, self.pairs, self.pair_sim, self.pair_dbias, self.self_sim), None
        if tau is None:
            weights = self.sampler.mode()
            return build_attention_graph(self.g.n, self.pairs, self.pair_sim, self.pair_dbias, self.self_sim,
                                         weights), None
        if resample or self._noise is None:
            self._noise = logistic_noise(len(self.sampler), self.noise_rng)
        sample = self.sampler.sample(tau, self.noise_rng, self.cfg.straight_through, noise=self._noise)
        ag = build_attention_graph(self.g.n, self.pairs, self.pair_sim, self.pair_dbias, self.self_sim,
                                   sample.weights)
        return ag, sample

    def embed(self, ag: AttentionGraph) -> ad.Tensor:
        return encode(self.g.X, ag, self.params)

    def ssl_loss(self, Z: ad.Tensor, sample) -> obj.LossBreakdown:
        cfg = self.cfg
        l_t = obj.transition_preservation_loss(self.log_T, obj.cosine_similarity_matrix(Z))
        l_f = obj.feature_reconstruction_loss(self.g.X, obj.reconstruct(Z, self.heads))
        if sample is not None:
            l_b = obj.augmentation_bce_pairs(self.sampler.target, sample.soft, self.g.n)
        else:
            l_b = ad.Tensor(0.0)
        return obj.total_ssl_loss(l_t, l_f, l_b, cfg.alpha1, cfg.alpha2, cfg.beta1, cfg.beta2)


# ---------------------------------------------------------------------------
# pipelines

@dataclass
class PretrainResult:
    model: CGTModel
    history: list[dict] = field(default_factory=list)


def _check_finite(value: float, model: CGTModel, last_good: dict, history: list, epoch: int):
    if not np.isfinite(value):
        model.load_state(last_good)
        raise DivergenceError(f"loss became non-finite at epoch {epoch}", last_good, history)


def pretrain(g: Graph, cfg: TrainConfig, model: CGTModel | None = None) -> PretrainResult:
    """Minimize the combined SSL loss with Adam; one fresh augmentation per ``resample_every`` epochs."""
    model = model or CGTModel(g, cfg)
    params = model.backbone_parameters() + model.head_parameters("rec.")
    opt = Adam(params, cfg.learning_rate, (cfg.adam_beta1, cfg.adam_beta2), cfg.adam_eps, cfg.weight_decay)
    history: list[dict] = []
    last_good = model.state()
    for epoch in range(cfg.epochs_pretrain):
        tau = cfg.tau(epoch, cfg.epochs_pretrain)
        ag, sample = model.attention_graph(tau, resample=epoch % cfg.resample_every == 0)
        bd = model.ssl_loss(model.embed(ag), sample)
        _check_finite(bd.total, model, last_good, history, epoch)
        history.append({"epoch": epoch, "tau": tau, **bd.as_dict()})
        last_good = model.state()
        opt.zero_grad()
        ad.backward(bd.tensor)
        opt.step()
    return PretrainResult(model, history)


@dataclass
class ClassificationResult:
    accuracy: float
    val_accuracy: float
    fairness: FairnessReport
    predictions: np.ndarray
    split: Split
    history: list[dict]
    best_epoch: int
    model: CGTModel = field(repr=False)


def predict(model: CGTModel) -> np.ndarray:
    with ad.no_grad():
        ag, _ = model.attention_graph(None)
        return obj.classify(model.embed(ag), model.heads).data.argmax(axis=1)


def finetune_classify(g: Graph, cfg: TrainConfig, model: CGTModel | None = None,
                      data_split: Split | None = None) -> ClassificationResult:
    """Cross-entropy training on the train split, early-stopped on validation accuracy."""
    if g.labels is None:
        raise ValueError("finetune_classify needs node labels")
    model = model or CGTModel(g, cfg, num_classes=g.num_classes)
    if "cls.W2" not in model.heads:
        model.heads.update({k: v for k, v in obj.init_heads(cfg.d, g.X.shape[1], g.num_classes, 0, model.rng,
                                                              cfg.classifier_hidden or None).items()
                            if k.startswith("cls.")})
    sp = data_split or split(g.n, g.labels, (cfg.train_frac, cfg.val_frac, cfg.test_frac), cfg.seed)
    params = model.head_parameters("cls.")
    if not cfg.freeze_backbone:
        params = model.backbone_parameters() + params
    opt = Adam(params, cfg.learning_rate, (cfg.adam_beta1, cfg.adam_beta2), cfg.adam_eps, cfg.weight_decay)
    y = g.labels
    best_val, best_epoch, best_state, waited = -1.0, -1, model.state(), 0
    history: list[dict] = []
    last_good = model.state()
    for epoch in range(cfg.epochs_finetune):
        ag, _ = model.attention_graph(cfg.tau_end, resample=epoch % cfg.resample_every == 0)
        Z = model.embed(ag)
        logits = obj.classify(Z, model.heads)
        loss = obj.classification_loss(ad.gather_rows(logits, sp.train), y[sp.train])
        _check_finite(loss.item(), model, last_good, history, epoch)
        last_good = model.state()
        opt.zero_grad()
        ad.backward(loss)
        opt.step()
        pred = predict(model)
        val_acc = accuracy(pred[sp.val], y[sp.val]) if len(sp.val) else accuracy(pred[sp.train], y[sp.train])
        history.append({"epoch": epoch, "loss": loss.item(), "val_accuracy": val_acc})
        if val_acc > best_val:
            best_val, best_epoch, best_state, waited = val_acc, epoch, model.state(), 0
        else:
            waited += 1
            if waited >= cfg.patience:
                break
    model.load_state(best_state)
    pred = predict(model)
    test = sp.test
    report = fairness_report(pred[test], y[test], model.degrees[test])
    return ClassificationResult(accuracy(pred[test], y[test]), best_val, report, pred, sp, history, best_epoch, model)


def run_classification(g: Graph, cfg: TrainConfig, data_split: Split | None = None) -> tuple[ClassificationResult, list]:
    """Optional SSL pretraining followed by fine-tuning; returns the result and the pretrain history."""
    model = CGTModel(g, cfg, num_classes=g.num_classes)
    pre_history: list = []
    if cfg.use_pretrain:
        pre_history = pretrain(g, cfg, model).history
    return finetune_classify(g, cfg, model, data_split), pre_history


@dataclass
class ClusteringResult:
    conductance: float
    modularity: float
    assign: np.ndarray
    history: list[dict]
    notes: list[str]
    model: CGTModel = field(repr=False)


def train_cluster(g: Graph, cfg: TrainConfig) -> ClusteringResult:
    """Joint SSL + modularity training; metrics on the argmax partition (percent)."""
    if g.m == 0:
        raise ValueError("clustering needs at least one edge")
    M_head = cfg.cluster_heads or default_cluster_count(g.n, g.num_classes)
    model = CGTModel(g, cfg, cluster_heads=M_head)
    params = model.backbone_parameters() + model.head_parameters("rec.") + model.head_parameters("clu.")
    opt = Adam(params, cfg.learning_rate, (cfg.adam_beta1, cfg.adam_beta2), cfg.adam_eps, cfg.weight_decay)
    history: list[dict] = []
    last_good = model.state()
    for epoch in range(cfg.epochs_cluster):
        tau = cfg.tau(epoch, cfg.epochs_cluster)
        ag, sample = model.attention_graph(tau, resample=epoch % cfg.resample_every == 0)
        Z = model.embed(ag)
        terms = []
        if cfg.use_pretrain:
            terms.append(model.ssl_loss(Z, sample).tensor)
        terms.append(obj.modularity_loss(obj.soft_clusters(Z, model.heads), model.A, cfg.collapse_weight))
        loss = terms[0] if len(terms) == 1 else ad.add(terms[0], terms[1])
        _check_finite(loss.item(), model, last_good, history, epoch)
        last_good = model.state()
        history.append({"epoch": epoch, "loss": loss.item()})
        opt.zero_grad()
        ad.backward(loss)
        opt.step()
    with ad.no_grad():
        ag, _ = model.attention_graph(None)
        assign = obj.soft_clusters(model.embed(ag), model.heads).data.argmax(axis=1)
    cond, notes = conductance(assign, model.A, M_head)
    return ClusteringResult(100.0 * cond, 100.0 * modularity_score(assign, model.A), assign, history, notes, model)


ABLATION_GRID = [
    {"use_pretrain": p, "use_augmentation": a, "use_community_attention": t}
    for p in (False, True) for a in (False, True) for t in (False, True)
]
