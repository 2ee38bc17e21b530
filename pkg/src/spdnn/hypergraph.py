"""Per-layer hypergraphs with fixed vertices.

For layer matrix ``W`` there is one free vertex per row (weight = row nnz),
one net per column, and one fixed vertex per column that pins the net to the
processor owning the matching entry of the previous layer's output.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sparse import SparseMatrix

NET_COST = 2
UNASSIGNED = -1


@dataclass
class PhaseHypergraph:
    n_free: int
    n_fixed: int
    vertex_weights: np.ndarray
    # vertex -> incident nets (CSR)
    vertex_offsets: np.ndarray
    vertex_nets: np.ndarray
    # net -> free pins (CSR); the net's fixed pin is fixed vertex j itself
    net_offsets: np.ndarray
    net_pins: np.ndarray
    # part of fixed vertex j, or UNASSIGNED when not yet known
    fixed_part: np.ndarray
    net_cost: int = NET_COST

    @property
    def n_nets(self) -> int:
        return self.n_fixed

    def pins(self, j: int) -> np.ndarray:
        return self.net_pins[self.net_offsets[j]:self.net_offsets[j + 1]]

    def nets_of(self, v: int) -> np.ndarray:
        return self.vertex_nets[self.vertex_offsets[v]:self.vertex_offsets[v + 1]]

    def total_weight(self) -> int:
        return int(self.vertex_weights.sum())


def build_phase_hypergraph(W: SparseMatrix, prev_assignment=None) -> PhaseHypergraph:
    """Hypergraph of one partitioning phase.

    ``prev_assignment`` gives the part of every column's producer (previous
    layer rows, or input rows for the first layer).  ``None`` leaves the
    fixed vertices unassigned, which is how the first phase is partitioned
    before input rows are placed.
    """
    if prev_assignment is None:
        fixed = np.full(W.n_cols, UNASSIGNED, dtype=np.int64)
    else:
        fixed = np.asarray(prev_assignment, dtype=np.int64)
        if fixed.shape != (W.n_cols,):
            raise ValueError(
                f"previous assignment covers {fixed.size} rows, layer has {W.n_cols} columns"
            )
        if np.any(fixed < 0):
            raise ValueError(f"column {int(np.argmin(fixed))} has no previous assignment")
        fixed = fixed.copy()

    # column-major view of the pattern: stable sort keeps rows ascending per column
    order = np.argsort(W.col_indices, kind="stable")
    net_offsets = np.zeros(W.n_cols + 1, dtype=np.int64)
    np.cumsum(W.col_degrees(), out=net_offsets[1:])
    return PhaseHypergraph(
        n_free=W.n_rows,
        n_fixed=W.n_cols,
        vertex_weights=W.row_degrees().astype(np.int64),
        vertex_offsets=W.row_offsets.copy(),
        vertex_nets=W.col_indices.copy(),
        net_offsets=net_offsets,
        net_pins=W.row_ids[order],
        fixed_part=fixed,
    )


def with_fixed_parts(H: PhaseHypergraph, fixed_part) -> PhaseHypergraph:
    fixed = np.asarray(fixed_part, dtype=np.int64)
    if fixed.shape != (H.n_fixed,):
        raise ValueError("fixed assignment has the wrong length")
    return PhaseHypergraph(
        H.n_free, H.n_fixed, H.vertex_weights, H.vertex_offsets, H.vertex_nets,
        H.net_offsets, H.net_pins, fixed.copy(), H.net_cost,
    )


def connectivity(H: PhaseHypergraph, assignment, include_fixed: bool = True) -> np.ndarray:
    """Number of distinct parts touched by each net."""
    assignment = np.asarray(assignment, dtype=np.int64)
    net_of_pin = np.repeat(np.arange(H.n_nets), np.diff(H.net_offsets))
    nets = [net_of_pin]
    parts = [assignment[H.net_pins]]
    if include_fixed:
        known = np.flatnonzero(H.fixed_part >= 0)
        nets.append(known)
        parts.append(H.fixed_part[known])
    nets = np.concatenate(nets)
    parts = np.concatenate(parts)
    width = int(max(parts.max(initial=0), assignment.max(initial=0))) + 1
    pairs = np.unique(nets * width + parts)
    return np.bincount(pairs // width, minlength=H.n_nets)


def cut_size(H: PhaseHypergraph, assignment, include_fixed: bool = True) -> int:
    """Connectivity-minus-one cut: sum of cost * (lambda - 1) over nets."""
    lam = connectivity(H, assignment, include_fixed)
    return int(H.net_cost * np.maximum(lam - 1, 0).sum())


def part_weights(H: PhaseHypergraph, assignment, P: int) -> np.ndarray:
    return np.bincount(np.asarray(assignment), weights=H.vertex_weights, minlength=P)


def imbalance(H: PhaseHypergraph, assignment, P: int) -> float:
    """Heaviest part over the average part weight; fixed vertices weigh nothing."""
    total = H.total_weight()
    if total == 0:
        return 1.0
    return float(part_weights(H, assignment, P).max() / (total / P))


def write_hgr(H: PhaseHypergraph, path) -> None:
    """Text dump: one net per line, 1-based free pin ids then ``f<id>``."""
    lines = ["hgr v1", f"nets {H.n_nets} vertices {H.n_free} fixed {H.n_fixed}"]
    for j in range(H.n_nets):
        pins = " ".join(str(int(v) + 1) for v in H.pins(j))
        lines.append(f"{pins} f{j + 1}".lstrip())
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_hgr(path):
    """Parse a dump back into ``(n_free, n_fixed, [(free_pins, fixed_id), ...])``, 0-based."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "hgr v1":
        raise ValueError("not an hgr v1 file")
    head = lines[1].split()
    if len(head) != 6 or head[0::2] != ["nets", "vertices", "fixed"]:
        raise ValueError("malformed hgr header")
    n_nets, n_free, n_fixed = (int(t) for t in head[1::2])
    nets = []
    for line in lines[2:2 + n_nets]:
        toks = line.split()
        fixed = [t for t in toks if t.startswith("f")]
        if len(fixed) != 1:
            raise ValueError("each net needs exactly one fixed pin")
        free = [int(t) - 1 for t in toks if not t.startswith("f")]
        nets.append((free, int(fixed[0][1:]) - 1))
    if len(nets) != n_nets:
        raise ValueError("truncated hgr file")
    return n_free, n_fixed, nets
