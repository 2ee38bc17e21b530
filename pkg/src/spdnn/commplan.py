"""Per-layer send/receive maps for the parallel feedforward and backprop, and
the volume/message/load metrics derived from them."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .hypergraph import cut_size
from .partition import ModelPartition, phase_hypergraphs

FLOPS_PER_NONZERO = 6  # multiply-add in feedforward, backprop and update
TSV_COLUMNS = ["P", "method", "avg_vol", "max_vol", "avg_msg", "max_msg", "imb"]


@dataclass
class CommPlan:
    """``xsend[k-1][m]`` maps peer ``n`` to the sorted rows of ``x^{k-1}`` that
    rank ``m`` sends to ``n`` in layer ``k``; ``xrecv`` is the receiving side.
    The backprop maps are the mirrors: partial sums travel against the
    direction the activations came from."""

    parts: int
    xsend: list
    xrecv: list

    @property
    def n_layers(self) -> int:
        return len(self.xsend)

    @property
    def ssend(self):
        return self.xrecv

    @property
    def srecv(self):
        return self.xsend

    def layer_words(self, k: int) -> int:
        """Words exchanged in layer ``k`` over both phases."""
        return 2 * sum(r.size for peers in self.xsend[k - 1] for r in peers.values())


def build_comm_plan(model, part: ModelPartition) -> CommPlan:
    P = part.parts
    xsend, xrecv = [], []
    for k, W in enumerate(model.layers, start=1):
        src_owner = part.owner(k - 1)
        dst_owner = part.owner(k)
        if src_owner.size != W.n_cols or dst_owner.size != W.n_rows:
            raise ValueError(f"partition does not cover layer {k}")
        src = src_owner[W.col_indices]
        dst = dst_owner[W.row_ids]
        remote = src != dst
        # one key per (sender, receiver, row of x^{k-1}); np.unique sorts them
        keys = np.unique(
            (src[remote] * P + dst[remote]) * W.n_cols + W.col_indices[remote]
        )
        pair, rows = np.divmod(keys, W.n_cols)
        send = [dict() for _ in range(P)]
        recv = [dict() for _ in range(P)]
        bounds = np.flatnonzero(np.diff(pair)) + 1
        for chunk_pair, chunk_rows in zip(np.split(pair, bounds), np.split(rows, bounds)):
            if chunk_pair.size == 0:
                continue
            m, n = divmod(int(chunk_pair[0]), P)
            send[m][n] = chunk_rows
            recv[n][m] = chunk_rows
        xsend.append(send)
        xrecv.append(recv)
    return CommPlan(P, xsend, xrecv)


def check_plan(plan: CommPlan) -> None:
    """Assert the structural invariants: symmetry, no self-messages, clean row lists."""
    for k in range(plan.n_layers):
        for m in range(plan.parts):
            for n, rows in plan.xsend[k][m].items():
                assert n != m, f"layer {k + 1}: self-message on rank {m}"
                assert rows.size > 0
                assert np.all(np.diff(rows) > 0)
                assert np.array_equal(plan.xrecv[k][n].get(m), rows)
            assert sum(len(d) for d in plan.xrecv[k]) == sum(len(d) for d in plan.xsend[k])


@dataclass
class CommMetrics:
    volume: np.ndarray  # words sent per rank
    messages: np.ndarray  # messages sent per rank
    flops: np.ndarray

    @property
    def avg_volume(self) -> float:
        return float(self.volume.mean())

    @property
    def max_volume(self) -> int:
        return int(self.volume.max())

    @property
    def total_volume(self) -> int:
        return int(self.volume.sum())

    @property
    def avg_messages(self) -> float:
        return float(self.messages.mean())

    @property
    def max_messages(self) -> int:
        return int(self.messages.max())

    @property
    def imbalance(self) -> float:
        mean = self.flops.mean()
        return float(self.flops.max() / mean) if mean > 0 else 1.0


def plan_counts(plan: CommPlan):
    """Per-layer, per-rank words and messages sent, as ``(L, P)`` arrays for
    each direction: ``(x_words, x_msgs, s_words, s_msgs)``."""
    L, P = plan.n_layers, plan.parts
    out = [np.zeros((L, P), dtype=np.int64) for _ in range(4)]
    for k in range(L):
        for m in range(P):
            xs, ss = plan.xsend[k][m], plan.ssend[k][m]
            out[0][k, m] = sum(r.size for r in xs.values())
            out[1][k, m] = len(xs)
            out[2][k, m] = sum(r.size for r in ss.values())
            out[3][k, m] = len(ss)
    return tuple(out)


def layer_flops(model, part: ModelPartition) -> np.ndarray:
    """``(L, P)`` flop counts under the fixed per-nonzero cost model."""
    P = part.parts
    return np.array(
        [
            FLOPS_PER_NONZERO * np.bincount(part.owner(k)[W.row_ids], minlength=P)
            for k, W in enumerate(model.layers, start=1)
        ],
        dtype=np.int64,
    ).reshape(len(model.layers), P)


def metrics(plan: CommPlan, model, part: ModelPartition) -> CommMetrics:
    xw, xm, sw, sm = plan_counts(plan)
    return CommMetrics(
        volume=(xw + sw).sum(axis=0),
        messages=(xm + sm).sum(axis=0),
        flops=layer_flops(model, part).sum(axis=0),
    )


@dataclass
class IdentityReport:
    plan_words: list
    hypergraph_words: list

    @property
    def ok(self) -> bool:
        return self.plan_words == self.hypergraph_words

    def lines(self):
        for k, (a, b) in enumerate(zip(self.plan_words, self.hypergraph_words), start=1):
            yield f"layer {k}: plan {a} hypergraph {b} {'ok' if a == b else 'MISMATCH'}"


def verify_volume_identity(plan: CommPlan, model, part: ModelPartition) -> IdentityReport:
    """Compare each layer's planned words with the cost-2 connectivity cut."""
    hyper = [cut_size(H, lp.assignment) for H, lp in zip(phase_hypergraphs(model, part), part.layers)]
    words = [plan.layer_words(k) for k in range(1, plan.n_layers + 1)]
    return IdentityReport(words, hyper)


def metrics_row(P: int, method: str, m: CommMetrics) -> dict:
    return {
        "P": P,
        "method": method,
        "avg_vol": f"{m.avg_volume:.2f}",
        "max_vol": m.max_volume,
        "avg_msg": f"{m.avg_messages:.2f}",
        "max_msg": m.max_messages,
        "imb": f"{m.imbalance:.4f}",
    }


def write_metrics_tsv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TSV_COLUMNS, delimiter="\t", lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow(row)


def read_metrics_tsv(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh, delimiter="\t"))
