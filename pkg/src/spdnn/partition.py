"""Row partitioning of layer matrices: a K-way FM refiner and a random baseline.

The refiner minimises the connectivity-minus-one cut of a
:class:`~spdnn.hypergraph.PhaseHypergraph` under the balance cap
``W(V_m) <= (1 + epsilon) * W_avg``.  Fixed vertices are never moved; they
only contribute to net connectivity.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .hypergraph import (
    PhaseHypergraph,
    build_phase_hypergraph,
    cut_size,
    imbalance,
    with_fixed_parts,
)

log = logging.getLogger(__name__)

DEFAULT_RESTARTS = 4
DEFAULT_EPSILON = 0.01


class InfeasibleBalanceError(ValueError):
    """A single vertex is heavier than the balance cap allows."""

    def __init__(self, message, min_imbalance):
        super().__init__(message)
        self.min_imbalance = min_imbalance


@dataclass
class LayerPartition:
    assignment: np.ndarray
    parts: int

    def __post_init__(self):
        self.assignment = np.asarray(self.assignment, dtype=np.int64)
        if self.assignment.size and (
            self.assignment.min() < 0 or self.assignment.max() >= self.parts
        ):
            raise ValueError("part id out of range")

    def rows_of(self, m: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == m)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.parts)


@dataclass
class ModelPartition:
    """Row owners for every layer plus the owners of the input vector rows."""

    parts: int
    input_assignment: np.ndarray
    layers: list = field(default_factory=list)  # list of LayerPartition, layer k at index k-1

    def owner(self, k: int) -> np.ndarray:
        """Owners of the rows of ``x^k`` (k = 0 is the input vector)."""
        if k == 0:
            return self.input_assignment
        return self.layers[k - 1].assignment

    def __eq__(self, other):
        if not isinstance(other, ModelPartition):
            return NotImplemented
        return (
            self.parts == other.parts
            and np.array_equal(self.input_assignment, other.input_assignment)
            and len(self.layers) == len(other.layers)
            and all(
                np.array_equal(a.assignment, b.assignment)
                for a, b in zip(self.layers, other.layers)
            )
        )


# ---------------------------------------------------------------------------
# FM kernel


@njit(cache=True)
def _apply_move(v, t, part, weights, load, phi, out, pen,
                vert_off, vert_nets, net_off, net_pins, P):
    s = part[v]
    for a in range(vert_off[v], vert_off[v + 1]):
        e = vert_nets[a]
        ps = phi[e, s]
        pt = phi[e, t]
        phi[e, s] = ps - 1
        phi[e, t] = pt + 1
        lo, hi = net_off[e], net_off[e + 1]
        if ps == 1:
            for b in range(lo, hi):
                u = net_pins[b]
                if u != v:
                    pen[u, s] += 1
        elif ps == 2:
            for b in range(lo, hi):
                u = net_pins[b]
                if u != v and part[u] == s:
                    out[u] += 1
        if pt == 0:
            for b in range(lo, hi):
                u = net_pins[b]
                if u != v:
                    pen[u, t] -= 1
        elif pt == 1:
            for b in range(lo, hi):
                u = net_pins[b]
                if u != v and part[u] == t:
                    out[u] -= 1
    part[v] = t
    load[s] -= weights[v]
    load[t] += weights[v]
    out[v] = 0
    for q in range(P):
        pen[v, q] = 0
    for a in range(vert_off[v], vert_off[v + 1]):
        e = vert_nets[a]
        if phi[e, t] == 1:
            out[v] += 1
        for q in range(P):
            if phi[e, q] == 0:
                pen[v, q] += 1


@njit(cache=True)
def _overload(load, cap):
    worst = load.max()
    return worst - cap if worst > cap else 0.0


@njit(cache=True)
def _fm_refine(vert_off, vert_nets, net_off, net_pins, fixed_part, weights,
               P, cap, slack, part, max_passes, stall_limit):
    """Refine ``part`` in place; return the connectivity cut in lambda units
    and the number of passes run.

    Inside a pass a move may overshoot the cap by up to ``slack``, so that two
    moves can act as a swap; the rollback to the best prefix ranked by
    (overload, cut) keeps the result feasible whenever the start was."""
    V = weights.shape[0]
    E = net_off.shape[0] - 1
    phi = np.zeros((E, P), dtype=np.int64)
    for e in range(E):
        for b in range(net_off[e], net_off[e + 1]):
            phi[e, part[net_pins[b]]] += 1
        if fixed_part[e] >= 0:
            phi[e, fixed_part[e]] += 1
    load = np.zeros(P, dtype=np.float64)
    for v in range(V):
        load[part[v]] += weights[v]
    out = np.zeros(V, dtype=np.int64)
    pen = np.zeros((V, P), dtype=np.int64)
    for v in range(V):
        for a in range(vert_off[v], vert_off[v + 1]):
            e = vert_nets[a]
            if phi[e, part[v]] == 1:
                out[v] += 1
            for q in range(P):
                if phi[e, q] == 0:
                    pen[v, q] += 1
    cut = 0
    for e in range(E):
        lam = 0
        for q in range(P):
            if phi[e, q] > 0:
                lam += 1
        if lam > 1:
            cut += lam - 1

    moved = np.empty(V, dtype=np.int64)
    came_from = np.empty(V, dtype=np.int64)
    locked = np.zeros(V, dtype=np.bool_)
    passes = 0
    for _ in range(max_passes):
        passes += 1
        locked[:] = False
        n_moves = 0
        best_moves = 0
        best_cut = cut
        best_over = _overload(load, cap)
        stall = 0
        while n_moves < V:
            # while some part is over the cap, only moves out of it qualify
            overloaded = load.max() > cap
            bv = -1
            bt = -1
            bg = -(1 << 60)
            for v in range(V):
                if locked[v]:
                    continue
                s = part[v]
                if overloaded and load[s] <= cap:
                    continue
                wv = weights[v]
                for t in range(P):
                    if t == s:
                        continue
                    nt = load[t] + wv
                    if nt <= cap + slack or (load[s] > cap and nt < load[s]):
                        g = out[v] - pen[v, t]
                        if g > bg:
                            bg = g
                            bv = v
                            bt = t
            if bv < 0:
                break
            moved[n_moves] = bv
            came_from[n_moves] = part[bv]
            _apply_move(bv, bt, part, weights, load, phi, out, pen,
                        vert_off, vert_nets, net_off, net_pins, P)
            locked[bv] = True
            cut -= bg
            n_moves += 1
            over = _overload(load, cap)
            if over < best_over or (over == best_over and cut < best_cut):
                best_over = over
                best_cut = cut
                best_moves = n_moves
                stall = 0
            else:
                stall += 1
                if stall >= stall_limit:
                    break
        for i in range(n_moves - 1, best_moves - 1, -1):
            _apply_move(moved[i], came_from[i], part, weights, load, phi, out, pen,
                        vert_off, vert_nets, net_off, net_pins, P)
        cut = best_cut
        if best_moves == 0:
            break
    return cut, passes


# ---------------------------------------------------------------------------


def _balanced_random(weights: np.ndarray, P: int, rng: np.random.Generator) -> np.ndarray:
    """Visit vertices in random order and drop each on the lightest part."""
    part = np.empty(weights.size, dtype=np.int64)
    load = np.zeros(P)
    for v in rng.permutation(weights.size):
        t = int(np.argmin(load))
        part[v] = t
        load[t] += weights[v]
    return part


def balance_cap(H: PhaseHypergraph, P: int, epsilon: float) -> float:
    return (1.0 + epsilon) * H.total_weight() / P


def refine(H: PhaseHypergraph, P: int, assignment, epsilon: float = DEFAULT_EPSILON,
           max_passes: int = 32, stall_limit: int | None = None) -> tuple[np.ndarray, int]:
    """Run FM passes from ``assignment``; returns the refined copy and the pass count."""
    part = np.array(assignment, dtype=np.int64)
    if P == 1 or H.n_free == 0:
        return part, 0
    if stall_limit is None:
        stall_limit = max(64, H.n_free // 4)
    _, passes = _fm_refine(
        H.vertex_offsets, H.vertex_nets, H.net_offsets, H.net_pins, H.fixed_part,
        H.vertex_weights.astype(np.float64), P, balance_cap(H, P, epsilon),
        float(H.vertex_weights.max()), part, max_passes, stall_limit,
    )
    return part, passes


def partition_fm(H: PhaseHypergraph, P: int, epsilon: float = DEFAULT_EPSILON, seed: int = 0,
                 restarts: int = DEFAULT_RESTARTS, max_passes: int = 32,
                 stall_limit: int | None = None) -> LayerPartition:
    """Best of ``restarts`` seeded FM runs, ranked by (overload, cut, restart index).

    Raises :class:`InfeasibleBalanceError` only when one vertex alone exceeds
    the cap; otherwise an unattainable ``epsilon`` shows up as a reported
    imbalance above ``1 + epsilon``.
    """
    if P < 1:
        raise ValueError("P must be at least 1")
    if P == 1 or H.n_free == 0:
        return LayerPartition(np.zeros(H.n_free, dtype=np.int64), P)
    cap = balance_cap(H, P, epsilon)
    heaviest = int(H.vertex_weights.max())
    if heaviest > cap:
        raise InfeasibleBalanceError(
            f"vertex of weight {heaviest} exceeds balance cap {cap:.2f}",
            heaviest / (H.total_weight() / P),
        )
    best = None
    for r, child in enumerate(np.random.SeedSequence(seed).spawn(restarts)):
        init = _balanced_random(H.vertex_weights, P, np.random.default_rng(child))
        part, _ = refine(H, P, init, epsilon, max_passes, stall_limit)
        load = np.bincount(part, weights=H.vertex_weights, minlength=P)
        key = (max(0.0, load.max() - cap), cut_size(H, part), r)
        if best is None or key < best[0]:
            best = (key, part)
    achieved = imbalance(H, best[1], P)
    if achieved > 1 + epsilon + 1e-12:
        log.warning("balance target %.4f not reached; achieved %.4f", 1 + epsilon, achieved)
    return LayerPartition(best[1], P)


def partition_random(N: int, P: int, seed: int = 0) -> LayerPartition:
    """Uniformly random assignment whose part sizes differ by at most one."""
    if P < 1:
        raise ValueError("P must be at least 1")
    rng = np.random.default_rng(seed)
    return LayerPartition(rng.permutation(np.arange(N, dtype=np.int64) % P), P)


def assign_input_rows(W1, layer1: LayerPartition) -> np.ndarray:
    """Place each input row on the least-loaded part among those its column reaches.

    Ties go to the lowest part id; a column with no nonzeros may go anywhere.
    Placing inputs on an already connected part leaves every net's
    connectivity unchanged, so this adds no communication.
    """
    P = layer1.parts
    H = build_phase_hypergraph(W1)
    counts = np.zeros(P, dtype=np.int64)
    out = np.empty(W1.n_cols, dtype=np.int64)
    for j in range(W1.n_cols):
        reach = np.unique(layer1.assignment[H.pins(j)])
        if reach.size == 0:
            reach = np.arange(P)
        t = int(reach[np.argmin(counts[reach])])
        out[j] = t
        counts[t] += 1
    return out


def partition_model(model, P: int, method: str = "hypergraph", epsilon: float = DEFAULT_EPSILON,
                    seed: int = 0, restarts: int = DEFAULT_RESTARTS) -> ModelPartition:
    """Partition every layer in order; phase k is pinned by phase k-1's result."""
    if method == "random":
        layers = [
            partition_random(W.n_rows, P, [seed, k]) for k, W in enumerate(model.layers, start=1)
        ]
        inputs = partition_random(model.input_dim, P, [seed, 0]).assignment
        return ModelPartition(P, inputs, layers)
    if method != "hypergraph":
        raise ValueError(f"unknown partitioning method {method!r}")

    layers = []
    inputs = None
    prev = None
    for k, W in enumerate(model.layers, start=1):
        H = build_phase_hypergraph(W, prev)
        lp = partition_fm(H, P, epsilon, seed=[seed, k], restarts=restarts)
        if k == 1:
            inputs = assign_input_rows(W, lp)
        log.info(
            "phase %d: cut %d imbalance %.4f",
            k, cut_size(with_fixed_parts(H, inputs) if k == 1 else H, lp.assignment),
            imbalance(H, lp.assignment, P),
        )
        layers.append(lp)
        prev = lp.assignment
    if inputs is None:
        inputs = np.zeros(model.input_dim, dtype=np.int64)
    return ModelPartition(P, inputs, layers)


def phase_hypergraphs(model, part: ModelPartition):
    """Hypergraph of every layer with fixed parts taken from ``part``."""
    return [
        build_phase_hypergraph(W, part.owner(k - 1)) for k, W in enumerate(model.layers, start=1)
    ]
