"""Road-network graph and the normalized graph-convolution primitive."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class RoadGraph:
    n_nodes: int
    adjacency: np.ndarray
    node_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        a = self.adjacency
        if a.shape != (self.n_nodes, self.n_nodes):
            raise GraphError(f"adjacency shape {a.shape} does not match n_nodes={self.n_nodes}")
        if not self.node_ids:
            object.__setattr__(self, "node_ids", [str(i) for i in range(self.n_nodes)])
        elif len(self.node_ids) != self.n_nodes:
            raise GraphError("node_ids length does not match n_nodes")
        a.setflags(write=False)

    def edges(self) -> list[tuple[int, int]]:
        """Undirected edges as (i, j) with i < j."""
        i, j = np.nonzero(np.triu(self.adjacency, k=1))
        return list(zip(i.tolist(), j.tolist()))

    def neighbors(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[i])

    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    def permuted(self, perm: Sequence[int]) -> "RoadGraph":
        perm = np.asarray(perm)
        return RoadGraph(self.n_nodes, self.adjacency[np.ix_(perm, perm)].copy(),
                         [self.node_ids[k] for k in perm])


def build_graph(n_nodes: int, edges: Iterable[tuple[int, int]],
                node_ids: Sequence[str] | None = None) -> RoadGraph:
    if n_nodes < 1:
        raise GraphError("n_nodes must be positive")
    a = np.zeros((n_nodes, n_nodes), dtype=np.int8)
    for i, j in edges:
        i, j = int(i), int(j)
        if not (0 <= i < n_nodes and 0 <= j < n_nodes):
            raise GraphError(f"edge ({i}, {j}) out of range for {n_nodes} nodes")
        if i == j:
            raise GraphError(f"self-loop ({i}, {i}) not allowed")
        a[i, j] = a[j, i] = 1
    return RoadGraph(n_nodes, a, list(node_ids) if node_ids is not None else [])


def propagation_matrix(g: RoadGraph) -> np.ndarray:
    """D^-1/2 (A + I) D^-1/2 with D the degree matrix of A + I."""
    a_tilde = g.adjacency.astype(np.float64) + np.eye(g.n_nodes)
    d_inv_sqrt = 1.0 / np.sqrt(a_tilde.sum(axis=1))
    p = d_inv_sqrt[:, None] * a_tilde * d_inv_sqrt[None, :]
    p.setflags(write=False)
    return p


# activation tag -> (f, f' expressed through the output y = f(x) where possible)
def _relu_grad(x, y):
    return (x > 0).astype(x.dtype)


ACTIVATIONS = {
    "identity": (lambda x: x, lambda x, y: np.ones_like(x)),
    "relu": (lambda x: np.maximum(x, 0.0), _relu_grad),
    "sigmoid": (lambda x: 0.5 * (1.0 + np.tanh(0.5 * x)), lambda x, y: y * (1.0 - y)),
    "tanh": (np.tanh, lambda x, y: 1.0 - y * y),
}


def activation(tag: str):
    try:
        return ACTIVATIONS[tag]
    except KeyError:
        raise GraphError(f"unknown activation {tag!r}; expected one of {sorted(ACTIVATIONS)}") from None


def propagate(p: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Apply p along the node axis (second to last) of h, with any leading batch axes."""
    return np.matmul(p, h)


def gcn_layer(p: np.ndarray, h: np.ndarray, w: np.ndarray, act: str = "identity") -> np.ndarray:
    """act(p @ h @ w); h may carry leading batch axes, shape (..., n, f)."""
    if p.shape[0] != p.shape[1] or h.shape[-2] != p.shape[0]:
        raise GraphError(f"propagation {p.shape} does not conform with features {h.shape}")
    if h.shape[-1] != w.shape[0]:
        raise GraphError(f"features {h.shape} do not conform with weight {w.shape}")
    f, _ = activation(act)
    return f(propagate(p, h) @ w)


def gcn_layer_backward(p, h, w, act, grad_out):
    """Gradients of gcn_layer w.r.t. h and w given dL/d(output)."""
    f, df = activation(act)
    ph = propagate(p, h)
    z = ph @ w
    dz = grad_out * df(z, f(z))
    dw = ph.reshape(-1, ph.shape[-1]).T @ dz.reshape(-1, dz.shape[-1])
    # p is symmetric, but use its transpose so the routine holds for any p
    dh = np.matmul(p.T, dz @ w.T)
    return dh, dw


def read_edge_csv(path: str | Path, node_map_path: str | Path | None = None) -> RoadGraph:
    """Load a graph from an edge list `src,dst` and an optional `node_id,index` sidecar."""
    path = Path(path)
    if node_map_path is None:
        candidate = path.with_name("nodes.csv")
        node_map_path = candidate if candidate.exists() else None
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if node_map_path is not None:
        with open(node_map_path, newline="", encoding="utf-8") as fh:
            index = {r["node_id"]: int(r["index"]) for r in csv.DictReader(fh)}
    else:
        ids = sorted({r["src"] for r in rows} | {r["dst"] for r in rows}, key=_natural_key)
        index = {nid: k for k, nid in enumerate(ids)}
    node_ids = [None] * len(index)
    for nid, k in index.items():
        if not 0 <= k < len(index) or node_ids[k] is not None:
            raise GraphError(f"node map index {k} for {nid!r} is invalid")
        node_ids[k] = nid
    edges = []
    for lineno, r in enumerate(rows, start=2):
        try:
            edges.append((index[r["src"]], index[r["dst"]]))
        except KeyError as exc:
            raise GraphError(f"{path}:{lineno}: unknown node id {exc.args[0]!r}") from None
    return build_graph(len(node_ids), edges, node_ids)


def write_edge_csv(g: RoadGraph, path: str | Path, node_map_path: str | Path | None = None) -> None:
    path = Path(path)
    node_map_path = Path(node_map_path) if node_map_path else path.with_name("nodes.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["src", "dst"])
        for i, j in g.edges():
            w.writerow([g.node_ids[i], g.node_ids[j]])
    with open(node_map_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id", "index"])
        for k, nid in enumerate(g.node_ids):
            w.writerow([nid, k])


def _natural_key(s: str):
    return (0, int(s), "") if s.isdigit() else (1, 0, s)
