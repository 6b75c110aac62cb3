"""Dataset ingestion (plain-text bundles) and synthetic benchmark graphs."""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import Graph


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetBundle:
    edges: Path
    features: Path
    labels: Path | None = None
    name: str = "dataset"

    @classmethod
    def from_dir(cls, directory, name: str | None = None) -> DatasetBundle:
        directory = Path(directory)
        labels = directory / "labels.tsv"
        return cls(directory / "edges.tsv", directory / "features.tsv",
                   labels if labels.exists() else None, name or directory.name)


@dataclass
class ParseReport:
    nodes: int
    edges: int
    duplicates_dropped: int = 0
    self_loops_dropped: int = 0
    notes: list[str] = field(default_factory=list)


def _data_lines(path: Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if line and not line.startswith("#"):
                yield lineno, line.split()


def load_dataset(bundle: DatasetBundle) -> tuple[Graph, ParseReport]:
    """Read a bundle; node ids are 0-based row indices of the feature file."""
    for path in (bundle.edges, bundle.features):
        if not Path(path).exists():
            raise DatasetError(f"missing file: {path}")
    rows = []
    for lineno, parts in _data_lines(bundle.features):
        try:
            rows.append([float(x) for x in parts])
        except ValueError:
            raise DatasetError(f"{bundle.features}:{lineno}: non-numeric feature value") from None
    if not rows:
        raise DatasetError(f"{bundle.features}: no feature rows")
    width = len(rows[0])
    for i, r in enumerate(rows):
        if len(r) != width:
            raise DatasetError(f"{bundle.features}: row {i} has {len(r)} values, expected {width}")
    X = np.array(rows)
    n = len(X)

    labels = None
    if bundle.labels is not None:
        vals = []
        for lineno, parts in _data_lines(bundle.labels):
            if len(parts) != 1:
                raise DatasetError(f"{bundle.labels}:{lineno}: expected one integer label")
            try:
                vals.append(int(parts[0]))
            except ValueError:
                raise DatasetError(f"{bundle.labels}:{lineno}: label is not an integer") from None
        if len(vals) != n:
            raise DatasetError(f"label count {len(vals)} != node count {n}")
        labels = np.array(vals)

    pairs = []
    self_loops = 0
    for lineno, parts in _data_lines(bundle.edges):
        if len(parts) < 2:
            raise DatasetError(f"{bundle.edges}:{lineno}: expected two node ids")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise DatasetError(f"{bundle.edges}:{lineno}: node ids must be integers") from None
        if not (0 <= u < n and 0 <= v < n):
            raise DatasetError(f"{bundle.edges}:{lineno}: dangling endpoint ({u}, {v}) for {n} nodes")
        if u == v:
            self_loops += 1
            continue
        pairs.append((min(u, v), max(u, v)))
    unique = sorted(set(pairs))
    report = ParseReport(n, len(unique), len(pairs) - len(unique), self_loops)
    return Graph(n, np.array(unique, dtype=np.int64).reshape(-1, 2), X, labels, bundle.name), report


def write_bundle(g: Graph, directory) -> DatasetBundle:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "edges.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{u}\t{v}\n" for u, v in g.edges)
    with open(directory / "features.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines("\t".join(repr(float(x)) for x in row) + "\n" for row in g.X)
    if g.labels is not None:
        with open(directory / "labels.tsv", "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(f"{int(y)}\n" for y in g.labels)
    return DatasetBundle.from_dir(directory, g.name)


def convert_linqs(content, cites, out_dir, name: str | None = None) -> tuple[DatasetBundle, ParseReport]:
    """Convert a LINQS ``.content`` / ``.cites`` pair (Cora, Citeseer) into a bundle.

    Papers are numbered in ``.content`` order and classes in sorted name
    order. Citations naming unknown papers are dropped and counted.
    """
    ids: dict[str, int] = {}
    feats, names = [], []
    for _, parts in _data_lines(content):
        ids[parts[0]] = len(ids)
        feats.append([float(x) for x in parts[1:-1]])
        names.append(parts[-1])
    classes = {c: i for i, c in enumerate(sorted(set(names)))}
    pairs, missing = [], 0
    for _, parts in _data_lines(cites):
        a, b = ids.get(parts[0]), ids.get(parts[1])
        if a is None or b is None:
            missing += 1
            continue
        pairs.append((a, b))
    g = Graph.from_edge_list(len(ids), pairs, np.array(feats), np.array([classes[c] for c in names]),
                             name or Path(content).stem)
    bundle = write_bundle(g, out_dir)
    graph, report = load_dataset(bundle)
    report.notes.append(f"dropped {missing} citations with unknown endpoints")
    return bundle, report


def find_dataset(name: str, data_dir=None) -> DatasetBundle | None:
    """Locate ``<data_dir>/<name>/edges.tsv``; ``data_dir`` defaults to ``$CGT_DATA_DIR`` or ``./data``."""
    root = Path(data_dir or os.environ.get("CGT_DATA_DIR", "data"))
    directory = root / name
    if (directory / "edges.tsv").exists() and (directory / "features.tsv").exists():
        return DatasetBundle.from_dir(directory, name)
    return None


# ---------------------------------------------------------------------------
# synthetic graphs

def two_triangles(features: str = "community") -> Graph:
    """Two disjoint triangles {0,1,2} and {3,4,5}, labelled by triangle."""
    labels = np.array([0, 0, 0, 1, 1, 1])
    X = labels[:, None].astype(np.float64) if features == "community" else np.eye(6)
    return Graph(6, [(0, 1), (0, 2), (1, 2), (3, 4), (3, 5), (4, 5)], X, labels, "two_triangles")


def path_graph(n: int = 3) -> Graph:
    return Graph(n, [(i, i + 1) for i in range(n - 1)], np.eye(n), None, f"path{n}")


def complete_graph(n: int) -> Graph:
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    return Graph(n, pairs, np.eye(n), None, f"K{n}")


def erdos_renyi(n: int, p: float, seed: int = 0, d0: int = 8) -> Graph:
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(len(iu)) < p
    return Graph(n, np.stack([iu[keep], ju[keep]], 1), rng.normal(size=(n, d0)), None, f"er{n}")


def degree_corrected_sbm(n: int = 300, classes: int = 3, avg_degree: float = 5.0, mixing: float = 0.15,
                         exponent: float = 2.5, d0: int = 32, signal: float = 0.6, seed: int = 0) -> Graph:
    """Planted-partition graph with power-law degree propensities and noisy class features.

    ``mixing`` is the expected fraction of inter-class edges. Features are
    Bernoulli bag-of-words vectors whose per-class word rates differ by ``signal``.
    """
    rng = np.random.default_rng(seed)
    labels = rng.integers(classes, size=n)
    theta = (1.0 - rng.random(n)) ** (-1.0 / (exponent - 1.0))
    theta = np.minimum(theta, np.sqrt(n))
    theta /= theta.mean()
    same = labels[:, None] == labels[None, :]
    frac_same = same.mean()
    base = np.where(same, (1 - mixing) / frac_same, mixing / (1 - frac_same))
    P = np.clip(np.outer(theta, theta) * base * avg_degree / n, 0.0, 1.0)
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(len(iu)) < P[iu, ju]
    rates = np.full((classes, d0), 0.5 * (1 - signal) * 0.2)
    for c in range(classes):
        words = rng.choice(d0, size=max(1, d0 // classes), replace=False)
        rates[c, words] += signal * 0.5
    X = (rng.random((n, d0)) < rates[labels]).astype(np.float64)
    return Graph(n, np.stack([iu[keep], ju[keep]], 1), X, labels, f"dcsbm{n}")
