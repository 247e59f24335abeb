"""Hardware graphs and minor embeddings.

Node numbering for Chimera graphs follows the usual linear convention:
node = ((row * cols + col) * 2 + u) * shore + k, where ``u = 0`` is the
vertical shore of a unit cell and ``u = 1`` the horizontal one. Vertical
qubits couple to the same ``k`` in the cell below, horizontal qubits to the
same ``k`` in the cell to the right.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .ising import IsingModel, check_spins, complete_edges


@dataclass(frozen=True)
class Topology:
    n: int
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        canon = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if i == j:
                raise ValueError("self-edges are not allowed")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ValueError(f"edge ({i}, {j}) references a missing node")
            canon.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", tuple(sorted(canon)))

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def _edge_index(self) -> dict[tuple[int, int], int]:
        return {e: k for k, e in enumerate(self.edges)}

    def edge_index(self) -> dict[tuple[int, int], int]:
        return self._edge_index

    def has_edge(self, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in self._edge_index

    def adjacency(self) -> list[set[int]]:
        return self._adjacency

    @cached_property
    def _adjacency(self) -> list[set[int]]:
        adj = [set() for _ in range(self.n)]
        for i, j in self.edges:
            adj[i].add(j)
            adj[j].add(i)
        return adj

    def edge_array(self) -> np.ndarray:
        return np.array(self.edges, dtype=np.int64).reshape(-1, 2)


def complete_topology(n: int) -> Topology:
    return Topology(n, tuple(map(tuple, complete_edges(n).tolist())))


def bipartite_topology(n_left: int, n_right: int) -> Topology:
    """Complete bipartite graph; left nodes first."""
    edges = [(i, n_left + j) for i in range(n_left) for j in range(n_right)]
    return Topology(n_left + n_right, tuple(edges))


def chimera_node(row: int, col: int, u: int, k: int, cols: int, shore: int) -> int:
    return ((row * cols + col) * 2 + u) * shore + k


def chimera_topology(rows: int, cols: int, shore: int = 4) -> Topology:
    """Grid of K_{shore,shore} unit cells with the standard inter-cell couplers."""
    if rows < 1 or cols < 1 or shore < 1:
        raise ValueError("Chimera dimensions must be positive")
    q = lambda r, c, u, k: chimera_node(r, c, u, k, cols, shore)  # noqa: E731
    edges = []
    for r in range(rows):
        for c in range(cols):
            for a in range(shore):
                for b in range(shore):
                    edges.append((q(r, c, 0, a), q(r, c, 1, b)))
            for k in range(shore):
                if r + 1 < rows:
                    edges.append((q(r, c, 0, k), q(r + 1, c, 0, k)))
                if c + 1 < cols:
                    edges.append((q(r, c, 1, k), q(r, c + 1, 1, k)))
    return Topology(rows * cols * 2 * shore, tuple(edges))


@dataclass(frozen=True)
class EmbeddingMap:
    """Ordered chain of physical nodes for each logical variable."""

    chains: tuple[tuple[int, ...], ...]
    chain_coupling: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "chains", tuple(tuple(int(q) for q in c) for c in self.chains))
        if not self.chain_coupling > 0:
            raise ValueError("chain_coupling must be positive")

    @property
    def num_logical(self) -> int:
        return len(self.chains)

    @property
    def num_physical(self) -> int:
        return sum(len(c) for c in self.chains)

    def owner(self) -> dict[int, int]:
        return {q: v for v, chain in enumerate(self.chains) for q in chain}


class EmbeddingProblem(NamedTuple):
    kind: str  # "empty-chain" | "invalid-node" | "overlap" | "disconnected-chain" | "missing-coupling"
    detail: str


class EmbeddingError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(f"{p.kind}: {p.detail}" for p in self.problems))


def _connected(chain, adj) -> bool:
    nodes = set(chain)
    seen = {chain[0]}
    todo = deque([chain[0]])
    while todo:
        q = todo.popleft()
        for r in adj[q]:
            if r in nodes and r not in seen:
                seen.add(r)
                todo.append(r)
    return seen == nodes


def validate_embedding(emb: EmbeddingMap, topology: Topology, logical: IsingModel) -> list[EmbeddingProblem]:
    """All violations of the embedding invariants; an empty list means valid."""
    problems = []
    if emb.num_logical != logical.n:
        problems.append(EmbeddingProblem(
            "size-mismatch", f"{emb.num_logical} chains for {logical.n} logical variables"))
    adj = topology.adjacency()
    seen: dict[int, int] = {}
    for v, chain in enumerate(emb.chains):
        if not chain:
            problems.append(EmbeddingProblem("empty-chain", f"variable {v} has no nodes"))
            continue
        bad = [q for q in chain if not 0 <= q < topology.n]
        if bad:
            problems.append(EmbeddingProblem("invalid-node", f"variable {v} uses nodes {bad}"))
            continue
        for q in chain:
            if q in seen and seen[q] != v:
                problems.append(EmbeddingProblem("overlap", f"node {q} in chains {seen[q]} and {v}"))
            seen.setdefault(q, v)
        if len(set(chain)) != len(chain):
            problems.append(EmbeddingProblem("overlap", f"variable {v} repeats a node"))
        if not _connected(chain, adj):
            problems.append(EmbeddingProblem("disconnected-chain", f"chain of variable {v} is not connected"))
    if problems:
        return problems
    for i, j in logical.edges:
        if not _inter_chain_edges(emb.chains[i], emb.chains[j], topology):
            problems.append(EmbeddingProblem(
                "missing-coupling", f"no physical edge between chains {int(i)} and {int(j)}"))
    return problems


def _inter_chain_edges(chain_a, chain_b, topology: Topology):
    b = set(chain_b)
    adj = topology.adjacency()
    out = []
    for p in chain_a:
        for q in sorted(adj[p] & b):
            out.append((min(p, q), max(p, q)))
    return sorted(out)


def chain_edges(emb: EmbeddingMap, topology: Topology) -> list[tuple[int, int]]:
    """Topology edges with both endpoints in the same chain."""
    owner = emb.owner()
    return [(i, j) for i, j in topology.edges if i in owner and owner.get(j) == owner[i]]


def embed_model(logical: IsingModel, emb: EmbeddingMap, topology: Topology) -> IsingModel:
    """Physical model over ``topology.n`` nodes realizing ``logical``.

    Fields are split equally over chain nodes, couplings equally over the
    available inter-chain edges, and every intra-chain edge receives the
    ferromagnetic ``chain_coupling``.
    """
    problems = validate_embedding(emb, topology, logical)
    if problems:
        raise EmbeddingError(problems)
    h = np.zeros(topology.n)
    couplings: dict[tuple[int, int], float] = {}
    for v, chain in enumerate(emb.chains):
        h[list(chain)] += logical.h[v] / len(chain)
    for e in chain_edges(emb, topology):
        couplings[e] = emb.chain_coupling
    for (i, j), Jij in zip(logical.edges, logical.J):
        phys = _inter_chain_edges(emb.chains[i], emb.chains[j], topology)
        for e in phys:
            couplings[e] = couplings.get(e, 0.0) + Jij / len(phys)
    return IsingModel.from_couplings(h, couplings)


def physical_edges(emb: EmbeddingMap, topology: Topology, logical_edges) -> list[tuple[int, int]]:
    """Chain edges plus the inter-chain edges realizing ``logical_edges``."""
    edges = set(chain_edges(emb, topology))
    for i, j in np.asarray(logical_edges).reshape(-1, 2):
        edges.update(_inter_chain_edges(emb.chains[i], emb.chains[j], topology))
    return sorted(edges)


def encode_config(logical, emb: EmbeddingMap, n_physical: int | None = None) -> np.ndarray:
    """Replicate each logical spin over its chain.

    Accepts a single configuration or a batch. Physical nodes outside every
    chain are set to +1.
    """
    logical = check_spins(logical, emb.num_logical)
    n_physical = (max(emb.owner()) + 1) if n_physical is None else n_physical
    out = np.ones(logical.shape[:-1] + (n_physical,), dtype=np.int8)
    for v, chain in enumerate(emb.chains):
        out[..., list(chain)] = logical[..., v : v + 1]
    return out


def decode_config(physical, emb: EmbeddingMap, rng) -> np.ndarray:
    """Per-chain majority vote; exact ties are broken by a fair coin from ``rng``."""
    physical = np.asarray(physical)
    needed = max(emb.owner()) + 1
    if physical.shape[-1] < needed:
        raise ValueError(f"physical configuration has {physical.shape[-1]} nodes, embedding needs {needed}")
    check_spins(physical)
    rng = np.random.default_rng(rng)
    votes = np.stack([physical[..., list(c)].sum(axis=-1) for c in emb.chains], axis=-1)
    coins = np.where(rng.random(votes.shape) < 0.5, -1, 1)
    return np.where(votes > 0, 1, np.where(votes < 0, -1, coins)).astype(np.int8)


def cell_clique_layout(rows: int, cols: int, chain_coupling: float = 1.0, shore: int = 4):
    """Fixed layout placing ``shore`` fully connected variables in every cell.

    Variable ``k`` of cell ``(r, c)`` is the length-2 chain made of the
    vertical and horizontal qubit with index ``k``. Within a cell every pair
    of variables is coupled; across neighbouring cells variables with the same
    ``k`` are coupled through the inter-cell couplers. A single cell
    (``rows = cols = 1``) hosts a complete graph on ``shore`` variables.

    Returns ``(topology, embedding, logical_edges)`` with variables numbered
    cell by cell in row-major order.
    """
    topo = chimera_topology(rows, cols, shore)
    chains = []
    for r in range(rows):
        for c in range(cols):
            for k in range(shore):
                chains.append((chimera_node(r, c, 0, k, cols, shore), chimera_node(r, c, 1, k, cols, shore)))
    var = lambda r, c, k: (r * cols + c) * shore + k  # noqa: E731
    edges = []
    for r in range(rows):
        for c in range(cols):
            for a in range(shore):
                for b in range(a + 1, shore):
                    edges.append((var(r, c, a), var(r, c, b)))
                if r + 1 < rows:
                    edges.append((var(r, c, a), var(r + 1, c, a)))
                if c + 1 < cols:
                    edges.append((var(r, c, a), var(r, c + 1, a)))
    edges = np.array(sorted((min(e), max(e)) for e in edges), dtype=np.int64)
    return topo, EmbeddingMap(tuple(chains), chain_coupling), edges


def native_cell_layout(num_vars: int, chain_coupling: float = 1.0):
    """Identity layout of up to 8 variables on one Chimera cell (length-1 chains)."""
    if not 1 <= num_vars <= 8:
        raise ValueError("a single cell hosts between 1 and 8 variables")
    topo = chimera_topology(1, 1, 4)
    chains = tuple((q,) for q in range(num_vars))
    edges = np.array([e for e in topo.edges if e[1] < num_vars], dtype=np.int64).reshape(-1, 2)
    return topo, EmbeddingMap(chains, chain_coupling), edges


def chimera_clique_layout(size: int, chain_coupling: float = 1.0, shore: int = 4):
    """Complete graph on ``size * shore`` variables in a ``size x size`` Chimera grid.

    Variable ``(i, k)`` (numbered ``i * shore + k``) owns the horizontal
    qubits with index ``k`` in cells ``(i, 0..i)`` and the vertical qubits
    with index ``k`` in cells ``(i..size-1, i)``, a chain of ``size + 1``
    qubits joined in cell ``(i, i)``. Variables ``(i, k)`` and ``(j, l)`` with
    ``i <= j`` meet in cell ``(j, i)``.

    Returns ``(topology, embedding, logical_edges)``; pass a subset of the
    complete edge list to train a sparser logical graph.
    """
    if size < 1:
        raise ValueError("size must be positive")
    topo = chimera_topology(size, size, shore)
    chains = []
    for i in range(size):
        for k in range(shore):
            horiz = [chimera_node(i, c, 1, k, size, shore) for c in range(i + 1)]
            vert = [chimera_node(r, i, 0, k, size, shore) for r in range(i, size)]
            chains.append(tuple(horiz + vert))
    n = size * shore
    i, j = np.triu_indices(n, k=1)
    return topo, EmbeddingMap(tuple(chains), chain_coupling), np.stack([i, j], axis=1).astype(np.int64)
