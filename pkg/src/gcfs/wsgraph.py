"""Watts-Strogatz small-world graphs and their renormalized aggregator.

Graphs are generated once from ``(n, k, rho, seed)`` and reused for the
lifetime of a model, so generation must be bit-for-bit reproducible. All
randomness comes from :class:`SplitMix64`, a self-contained 64-bit generator,
never from a global RNG.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "SplitMix64",
    "Graph",
    "Aggregator",
    "DegreeStats",
    "GraphFormatError",
    "ws_generate",
    "aggregator_matrix",
    "degree_stats",
    "concentration_experiment",
    "format_concentration_report",
    "relabel",
    "save_graph",
    "load_graph",
    "spectral_radius",
    "spectral_gap_summary",
    "parse_graph",
]

_MASK64 = (1 << 64) - 1


class SplitMix64:
    """SplitMix64 (Steele, Lea & Flood 2014); period 2**64."""

    def __init__(self, seed: int):
        self.state = int(seed) & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def random(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def randbelow(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection (no modulo bias)."""
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            r = self.next_u64()
            if r < limit:
                return r % n


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph; edges stored as sorted ``(i, j)`` with ``i < j``."""

    n: int
    edges: frozenset
    k: int = 0
    rho: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for e in self.edges:
            i, j = e
            if not (0 <= i < j < self.n):
                raise ValueError(f"invalid edge {e} for n={self.n}")

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n), dtype=np.float64)
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1.0
        return a

    def degrees(self) -> list[int]:
        deg = [0] * self.n
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg


class Aggregator:
    """Dense symmetric matrix ``D^-1/2 (A + I) D^-1/2`` stored in float64."""

    def __init__(self, t: np.ndarray):
        t = np.asarray(t, dtype=np.float64)
        t.setflags(write=False)
        self.t = t
        self._cast: dict = {}

    @property
    def n(self) -> int:
        return self.t.shape[0]

    def as_tensor(self, dtype=np.float32):
        """Constant :class:`~gcfs.tensor.Tensor` in the requested precision (cached)."""
        from .tensor import Tensor

        key = np.dtype(dtype).str
        if key not in self._cast:
            self._cast[key] = Tensor(self.t.astype(dtype))
        return self._cast[key]


@dataclass
class DegreeStats:
    degrees: list
    mean: float
    variance: float
    histogram: dict = field(default_factory=dict)


class GraphFormatError(ValueError):
    """Malformed edge-list file."""

    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


def ws_generate(n: int, k: int, rho: float, seed: int) -> Graph:
    """Watts-Strogatz graph on ``n`` nodes with even mean degree ``k``.

    Starts from the ring lattice where node ``i`` links to ``i +- 1 .. k/2``.
    Lanes ``j = 1..k/2`` are scanned in order and, inside each lane, nodes
    ``i = 0..n-1``; with probability ``rho`` the edge ``(i, i+j mod n)`` is
    replaced by ``(i, u)`` with ``u`` uniform, redrawn while ``u`` would make a
    self-loop or a duplicate. Nodes already linked to every other node are
    skipped. The number of edges is always ``n*k/2``.
    """
    if k % 2:
        raise ValueError(f"mean degree k={k} must be even")
    if k < 2 or n <= k:
        raise ValueError(f"need n > k >= 2, got n={n}, k={k}")
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho={rho} outside [0, 1]")

    adj: list[set[int]] = [set() for _ in range(n)]
    for i in range(n):
        for j in range(1, k // 2 + 1):
            v = (i + j) % n
            adj[i].add(v)
            adj[v].add(i)

    rng = SplitMix64(seed)
    for j in range(1, k // 2 + 1):
        for i in range(n):
            v = (i + j) % n
            if rng.random() >= rho:
                continue
            if len(adj[i]) >= n - 1:
                continue
            u = rng.randbelow(n)
            while u == i or u in adj[i]:
                u = rng.randbelow(n)
            adj[i].discard(v)
            adj[v].discard(i)
            adj[i].add(u)
            adj[u].add(i)

    edges = frozenset((min(i, v), max(i, v)) for i in range(n) for v in adj[i] if i < v)
    return Graph(n=n, edges=edges, k=k, rho=float(rho), seed=int(seed))


def aggregator_matrix(g: Graph) -> Aggregator:
    a_tilde = g.adjacency() + np.eye(g.n)
    d = a_tilde.sum(axis=1)
    # d_i * d_j is commutative in floating point, so the result is exactly symmetric
    return Aggregator(a_tilde / np.sqrt(d[:, None] * d[None, :]))


def degree_stats(g: Graph) -> DegreeStats:
    deg = g.degrees()
    arr = np.asarray(deg, dtype=np.float64)
    mean = sum(deg) / g.n
    hist: dict[int, int] = {}
    for d in deg:
        hist[d] = hist.get(d, 0) + 1
    return DegreeStats(degrees=deg, mean=mean, variance=float(np.mean((arr - mean) ** 2)),
                       histogram=dict(sorted(hist.items())))


def relabel(g: Graph, perm: Sequence[int]) -> Graph:
    """Graph with node ``i`` renamed ``perm[i]``."""
    perm = list(perm)
    if sorted(perm) != list(range(g.n)):
        raise ValueError("perm must be a permutation of range(n)")
    edges = frozenset((min(perm[i], perm[j]), max(perm[i], perm[j])) for i, j in g.edges)
    return Graph(n=g.n, edges=edges, k=g.k, rho=g.rho, seed=g.seed)


def spectral_radius(t: np.ndarray, tol: float = 1e-14, max_iter: int = 1_000_000,
                    seed: int = 0) -> tuple[float, np.ndarray]:
    """Largest-magnitude eigenvalue of a symmetric matrix by power iteration.

    Returns the Rayleigh quotient at convergence and the unit eigenvector.
    """
    rng = np.random.default_rng(seed)
    v = rng.random(t.shape[0]) + 0.5
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = t @ v
        lam_new = float(v @ w)
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0, v
        w /= nrm
        if abs(lam_new - lam) < tol and np.linalg.norm(w - v) < 1e-12:
            return abs(lam_new), w
        v, lam = w, lam_new
    return abs(lam), v


def _skewness(x: np.ndarray) -> float:
    m = x.mean()
    sd = x.std()
    if sd == 0:
        return 0.0
    return float(np.mean(((x - m) / sd) ** 3))


def concentration_experiment(n: int, k: int, rhos: Sequence[float], num_graphs: int,
                             seed: int) -> list[dict]:
    """Degree statistics pooled over ``num_graphs`` random graphs per ``rho``.

    Graph ``g`` of rewiring level ``r`` uses seed ``seed * 1_000_003 + g``; the
    same seeds are reused across ``rho`` values.
    """
    if num_graphs < 2:
        raise ValueError("num_graphs must be at least 2")
    rows = []
    for rho in rhos:
        means = []
        pooled: list[int] = []
        for gi in range(num_graphs):
            g = ws_generate(n, k, rho, seed * 1_000_003 + gi)
            st = degree_stats(g)
            means.append(st.mean)
            pooled.extend(st.degrees)
        arr = np.asarray(pooled, dtype=np.float64)
        hist: dict[int, int] = {}
        for d in pooled:
            hist[d] = hist.get(d, 0) + 1
        rows.append({
            "rho": float(rho),
            "n": n,
            "k": k,
            "graphs": num_graphs,
            "means": means,
            "all_means_equal_k": all(m == k for m in means),
            "pooled_variance": float(arr.var()),
            "skewness": _skewness(arr),
            "histogram": dict(sorted(hist.items())),
        })
    return rows


def format_concentration_report(rows: list[dict]) -> str:
    lines = ["rho\tgraphs\tmean_min\tmean_max\tpooled_var\tskewness\thistogram"]
    for r in rows:
        hist = " ".join(f"{d}:{c}" for d, c in r["histogram"].items())
        lines.append(
            f"{r['rho']:.3f}\t{r['graphs']}\t{min(r['means']):.6f}\t{max(r['means']):.6f}\t"
            f"{r['pooled_variance']:.6f}\t{r['skewness']:.4f}\t{hist}"
        )
    return "\n".join(lines) + "\n"


def save_graph(g: Graph, path) -> None:
    """Write ``ws n k rho seed`` then one ``i j`` line per edge, ascending."""
    lines = [f"ws {g.n} {g.k} {g.rho!r} {g.seed}"]
    lines.extend(f"{i} {j}" for i, j in g.sorted_edges())
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def parse_graph(text: str) -> Graph:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise GraphFormatError(1, "empty file")
    head = lines[0].split()
    if len(head) != 5 or head[0] != "ws":
        raise GraphFormatError(1, "expected header 'ws n k rho seed'")
    try:
        n, k, rho, seed = int(head[1]), int(head[2]), float(head[3]), int(head[4])
    except ValueError as exc:
        raise GraphFormatError(1, f"bad header value ({exc})") from None
    if n < 1:
        raise GraphFormatError(1, f"node count {n} must be positive")
    edges: set[tuple[int, int]] = set()
    prev: tuple[int, int] | None = None
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if len(parts) != 2:
            raise GraphFormatError(lineno, f"expected 'i j', got {line!r}")
        try:
            i, j = int(parts[0]), int(parts[1])
        except ValueError:
            raise GraphFormatError(lineno, f"non-integer node index in {line!r}") from None
        if i == j:
            raise GraphFormatError(lineno, f"self-loop ({i}, {j})")
        if not (0 <= i < n and 0 <= j < n):
            raise GraphFormatError(lineno, f"node index out of range [0, {n}) in ({i}, {j})")
        e = (min(i, j), max(i, j))
        if e in edges:
            raise GraphFormatError(lineno, f"duplicate edge {e}")
        if prev is not None and e < prev:
            raise GraphFormatError(lineno, f"edges not in ascending order at {e}")
        edges.add(e)
        prev = e
    return Graph(n=n, edges=frozenset(edges), k=k, rho=rho, seed=seed)


def load_graph(path) -> Graph:
    return parse_graph(Path(path).read_text(encoding="utf-8"))


def edge_count_ok(g: Graph) -> bool:
    return len(g.edges) * 2 == g.n * g.k


def spectral_gap_summary(agg: Aggregator) -> dict:
    """Symmetry error, eigenvector residual and spectral radius of ``agg``."""
    t = agg.t
    s = np.sqrt(_renorm_degrees(t))
    lam, _ = spectral_radius(t)
    return {
        "symmetry_error": float(np.max(np.abs(t - t.T))),
        "eigvec_residual": float(np.max(np.abs(t @ s - s))),
        "spectral_radius": lam,
    }


def _renorm_degrees(t: np.ndarray) -> np.ndarray:
    # diagonal of T is 1/d~_i
    return 1.0 / np.diag(t)

