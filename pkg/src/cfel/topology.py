"""Backhaul graphs, doubly stochastic mixing matrices and their spectra."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError, InvariantError

GRAPH_KINDS = ("ring", "complete", "torus2d", "erdos_renyi", "path")


@dataclass(frozen=True)
class BackhaulGraph:
    m: int
    edges: frozenset

    def __post_init__(self):
        norm = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if i == j:
                raise ConfigError(f"self-loop at server {i}")
            if not (0 <= i < self.m and 0 <= j < self.m):
                raise ConfigError(f"edge ({i}, {j}) references a server outside [0, {self.m})")
            norm.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(norm))
        if not self.is_connected():
            raise ConfigError("backhaul graph is not connected")

    def neighbors(self, i: int) -> list[int]:
        return sorted({b for a, b in self.edges if a == i} | {a for a, b in self.edges if b == i})

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.m, dtype=np.int64)
        for a, b in self.edges:
            deg[a] += 1
            deg[b] += 1
        return deg

    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.m, self.m), dtype=bool)
        for a, b in self.edges:
            adj[a, b] = adj[b, a] = True
        return adj

    def is_connected(self) -> bool:
        return _connected(self.m, self.edges)


def _connected(m, edges) -> bool:
    if m <= 1:
        return True
    nbrs = [[] for _ in range(m)]
    for a, b in edges:
        nbrs[a].append(b)
        nbrs[b].append(a)
    seen, queue = {0}, deque([0])
    while queue:
        for b in nbrs[queue.popleft()]:
            if b not in seen:
                seen.add(b)
                queue.append(b)
    return len(seen) == m


def _torus_shape(m):
    for a in range(int(np.sqrt(m)), 1, -1):
        if m % a == 0 and m // a >= 2:
            return a, m // a
    raise ConfigError(f"torus2d needs m = a*b with a, b >= 2; got m={m}")


def build_graph(kind: str, m: int, seed: int = 0, p_edge: float = 0.5, max_tries: int = 1000) -> BackhaulGraph:
    if m < 1:
        raise ConfigError("need at least one server")
    if kind == "ring":
        edges = {(i, (i + 1) % m) for i in range(m)} if m > 1 else set()
        edges = {e for e in edges if e[0] != e[1]}
    elif kind == "path":
        edges = {(i, i + 1) for i in range(m - 1)}
    elif kind == "complete":
        edges = {(i, j) for i in range(m) for j in range(i + 1, m)}
    elif kind == "torus2d":
        a, b = _torus_shape(m)
        edges = set()
        for r in range(a):
            for c in range(b):
                v = r * b + c
                for w in (r * b + (c + 1) % b, ((r + 1) % a) * b + c):
                    if w != v:
                        edges.add((min(v, w), max(v, w)))
    elif kind == "erdos_renyi":
        rng = np.random.default_rng(seed)
        pairs = [(i, j) for i in range(m) for j in range(i + 1, m)]
        for _ in range(max_tries):
            keep = rng.random(len(pairs)) < p_edge
            edges = {pr for pr, k in zip(pairs, keep) if k}
            if _connected(m, edges):
                break
        else:
            raise ConfigError(f"no connected Erdos-Renyi draw in {max_tries} tries")
    else:
        raise ConfigError(f"unknown graph kind {kind!r}")
    return BackhaulGraph(m, frozenset(edges))


def write_edge_list(graph: BackhaulGraph, path) -> None:
    lines = [f"{a} {b}" for a, b in sorted(graph.edges)]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_edge_list(path, m: int | None = None) -> BackhaulGraph:
    edges = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#")[0].strip()
        if line:
            a, b = line.split()
            edges.append((int(a), int(b)))
    if m is None:
        m = 1 + max((max(e) for e in edges), default=0)
    return BackhaulGraph(m, frozenset(edges))


# -- symmetric eigensolver ---------------------------------------------------

def jacobi_eigenvalues(a: np.ndarray, tol: float = 1e-15, max_sweeps: int = 100) -> np.ndarray:
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, sorted descending."""
    a = np.array(a, dtype=np.float64)
    m = a.shape[0]
    scale = max(np.abs(a).max(), 1e-300)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off <= tol * scale:
            break
        for p in range(m - 1):
            for q in range(p + 1, m):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta == 0:
                    t = 1.0
                elif abs(theta) > 1e150:
                    t = 0.5 / theta          # theta^2 would overflow
                else:
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rp, rq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                cp, cq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * cp - s * cq
                a[:, q] = s * cp + c * cq
    return np.sort(np.diag(a))[::-1]


def spectral_zeta(h: np.ndarray, sym_tol: float = 1e-12) -> float:
    """``max(|lambda_2|, |lambda_m|)`` of a symmetric mixing matrix."""
    h = np.asarray(h, dtype=np.float64)
    if h.shape[0] != h.shape[1]:
        raise InvariantError("mixing matrix must be square")
    if np.max(np.abs(h - h.T), initial=0.0) > sym_tol:
        raise InvariantError("mixing matrix is not symmetric")
    if h.shape[0] == 1:
        return 0.0
    lam = jacobi_eigenvalues(0.5 * (h + h.T))
    return float(max(abs(lam[1]), abs(lam[-1])))


# -- mixing matrices ---------------------------------------------------------

@dataclass(frozen=True)
class MixingMatrix:
    entries: np.ndarray
    zeta: float
    graph: BackhaulGraph | None = None
    pi_default: int = 10

    @property
    def m(self) -> int:
        return self.entries.shape[0]

    def power(self, pi: int) -> np.ndarray:
        return gossip_power(self.entries, pi)


def validate_mixing(h: np.ndarray, graph: BackhaulGraph | None = None, tol: float = 1e-12) -> float:
    """Check nonnegativity, symmetry, double stochasticity, sparsity and ``zeta < 1``.

    Returns zeta; raises ``InvariantError`` naming the first violated property.
    """
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise InvariantError("mixing matrix must be square")
    if np.any(h < 0) or np.any(h > 1 + tol):
        raise InvariantError("mixing weights must lie in [0, 1]")
    if np.max(np.abs(h - h.T)) > tol:
        raise InvariantError("mixing matrix is not symmetric")
    if np.max(np.abs(h.sum(axis=1) - 1)) > tol or np.max(np.abs(h.sum(axis=0) - 1)) > tol:
        raise InvariantError("mixing matrix is not doubly stochastic")
    if graph is not None:
        if graph.m != h.shape[0]:
            raise InvariantError("mixing matrix size does not match the graph")
        off = ~np.eye(graph.m, dtype=bool)
        adj = graph.adjacency()
        if np.any((h > 0) & off & ~adj):
            raise InvariantError("positive weight on a non-edge")
        if np.any((h <= 0) & adj):
            raise InvariantError("zero weight on a graph edge")
    zeta = spectral_zeta(h, sym_tol=tol)
    if not zeta < 1.0:
        raise InvariantError(f"zeta = {zeta} is not below 1")
    return zeta


def metropolis_weights(graph: BackhaulGraph) -> MixingMatrix:
    """``H_ij = 1 / (1 + max(deg_i, deg_j))`` on edges, remainder on the diagonal."""
    deg = graph.degrees()
    h = np.zeros((graph.m, graph.m))
    for a, b in graph.edges:
        h[a, b] = h[b, a] = 1.0 / (1.0 + max(deg[a], deg[b]))
    h[np.diag_indices(graph.m)] = 1.0 - h.sum(axis=1)
    return MixingMatrix(h, validate_mixing(h, graph), graph)


def uniform_weights(graph: BackhaulGraph) -> MixingMatrix:
    """Every edge weighted ``1 / (max_degree + 1)``."""
    w = 1.0 / (graph.degrees().max(initial=0) + 1.0)
    h = graph.adjacency() * w
    h[np.diag_indices(graph.m)] = 1.0 - h.sum(axis=1)
    return MixingMatrix(h, validate_mixing(h, graph), graph)


def mixing_from_matrix(h, graph: BackhaulGraph | None = None) -> MixingMatrix:
    h = np.array(h, dtype=np.float64)
    return MixingMatrix(h, validate_mixing(h, graph), graph)


def gossip_power(h: np.ndarray, pi: int) -> np.ndarray:
    if pi < 0:
        raise ValueError("number of gossip steps must be nonnegative")
    h = np.asarray(h, dtype=np.float64)
    out = np.eye(h.shape[0])
    for _ in range(pi):
        out = out @ h
    return out


def omega_constants(zeta: float, pi: int) -> tuple[float, float]:
    """Topology constants of the convergence bound.

    ``omega1 = z2 / (1 - z2)``, ``omega2 = 1/(1 - z2) + 2/(1 - z1) + z1/(1 - z1)**2``
    with ``z1 = zeta**pi`` and ``z2 = zeta**(2*pi)``.
    """
    if not 0.0 <= zeta < 1.0:
        raise DomainError(f"zeta must lie in [0, 1), got {zeta}")
    if pi < 1:
        raise DomainError("pi must be at least 1")
    z1 = zeta ** pi
    z2 = zeta ** (2 * pi)
    omega1 = z2 / (1.0 - z2)
    omega2 = 1.0 / (1.0 - z2) + 2.0 / (1.0 - z1) + z1 / (1.0 - z1) ** 2
    return omega1, omega2
