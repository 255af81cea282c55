"""
Observability Module
Residual-graph connectivity of the vignette problem and the random bipartite graph bound
P(connected) = exp(-2 exp(-c)) for |E| = floor(n (ln n + c)) edges
"""
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from itertools import repeat

import numpy as np

import config
from errors import DimensionMismatchError

logger = logging.getLogger(__name__)


class UnionFind:
    """Disjoint sets with path compression and union by size"""

    def __init__(self, n):
        self.parent = list(range(n))
        self.size = [1] * n
        self.count = n

    def find(self, i):
        root = i
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[i] != root:
            self.parent[i], i = root, self.parent[i]
        return root

    def union(self, i, j):
        ri, rj = self.find(i), self.find(j)
        if ri == rj:
            return False
        if self.size[ri] < self.size[rj]:
            ri, rj = rj, ri
        self.parent[rj] = ri
        self.size[ri] += self.size[rj]
        self.count -= 1
        return True

    def labels(self):
        """Component label per node: the smallest node id contained in the component"""
        roots = np.array([self.find(i) for i in range(len(self.parent))], dtype=np.int64)
        smallest = {}
        for node, root in enumerate(roots.tolist()):
            if root not in smallest:
                smallest[root] = node
        return np.array([smallest[r] for r in roots.tolist()], dtype=np.int64)


@dataclass(frozen=True)
class BipartiteResidualGraph:
    """Plane cells (side A) and vignette pixels (side B); one edge per residual term"""
    n_a: int
    n_b: int
    edges: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if edges.size and (edges[:, 0].min() < 0 or edges[:, 0].max() >= self.n_a
                           or edges[:, 1].min() < 0 or edges[:, 1].max() >= self.n_b):
            raise DimensionMismatchError("edge references a node outside the graph")
        object.__setattr__(self, 'edges', edges)

    @property
    def n_nodes(self):
        return self.n_a + self.n_b

    @classmethod
    def from_samples(cls, cells, pixels, n_cells, n_pixels, observed_only=True):
        """
        Build the residual graph of calibration samples, duplicates removed.
        With observed_only, nodes without any residual are dropped and the
        returned index maps give the original ids of the kept nodes.
        """
        cells = np.asarray(cells, dtype=np.int64)
        pixels = np.asarray(pixels, dtype=np.int64)
        keys = np.unique(cells * n_pixels + pixels)
        edges = np.stack([keys // n_pixels, keys % n_pixels], axis=1)
        if not observed_only:
            return cls(n_cells, n_pixels, edges), np.arange(n_cells), np.arange(n_pixels)

        cell_ids, a = np.unique(edges[:, 0], return_inverse=True)
        pixel_ids, b = np.unique(edges[:, 1], return_inverse=True)
        graph = cls(cell_ids.size, pixel_ids.size, np.stack([a.reshape(-1), b.reshape(-1)], axis=1))
        return graph, cell_ids, pixel_ids


@dataclass(frozen=True)
class ConnectivityReport:
    n_components: int
    largest: int
    largest_fraction: float
    labels: np.ndarray

    @property
    def connected(self):
        return self.n_components == 1


def connectivity(graph):
    """Exact connected components; B nodes are numbered after the A nodes"""
    uf = UnionFind(graph.n_nodes)
    offset = graph.n_a
    for a, b in graph.edges.tolist():
        uf.union(a, offset + b)

    labels = uf.labels()
    if labels.size == 0:
        return ConnectivityReport(0, 0, 0.0, labels)
    _, sizes = np.unique(labels, return_counts=True)
    largest = int(sizes.max())
    return ConnectivityReport(
        n_components=int(uf.count), largest=largest,
        largest_fraction=largest / graph.n_nodes, labels=labels)


def connectivity_probability(c):
    """Asymptotic probability that the random bipartite graph is connected"""
    if c == math.inf:
        return 1.0
    exponent = -c
    if exponent > 700:
        return 0.0
    return math.exp(-2.0 * math.exp(exponent))


def edges_for_offset(n, c):
    return int(math.floor(n * (math.log(n) + c)))


def offset_for_edges(n, m):
    return m / n - math.log(n)


def _random_graph_connected(n, m, seed_seq):
    rng = np.random.default_rng(seed_seq)
    edges = np.stack([rng.integers(0, n, size=m), rng.integers(0, n, size=m)], axis=1)
    return connectivity(BipartiteResidualGraph(n, n, edges)).connected


def monte_carlo_connectivity(n, c, trials, seed=0, workers=None):
    """Fraction of connected random bipartite multigraphs (edges drawn with replacement)"""
    if n < 2 or trials < 1:
        raise ValueError("need n >= 2 and at least one trial")
    m = edges_for_offset(n, c)
    seeds = np.random.SeedSequence(seed).spawn(trials)
    workers = workers or config.WORKERS

    logger.info(f"Monte-Carlo connectivity: n={n}, c={c}, {m} edges, {trials} trials")
    if workers == 1:
        outcomes = [_random_graph_connected(n, m, s) for s in seeds]
    else:
        chunksize = max(1, trials // (4 * workers))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_random_graph_connected, repeat(n), repeat(m), seeds, chunksize=chunksize))
    fraction = float(np.mean(outcomes))
    logger.info(f"Connected fraction {fraction:.4f} (asymptotic {connectivity_probability(c):.4f})")
    return fraction
