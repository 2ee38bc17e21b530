"""Simulated message-passing execution of sparse SGD.

Every rank owns a row block of each layer matrix and exchanges activations
(feedforward) and partial sums of the transposed product (backprop) through
an in-process mailbox.  Each layer runs in two bulk-synchronous stages,
*post* (send, then compute what is already local) and *fold* (receive in
ascending sender order, accumulate, activate).  Because every rank folds in
the same fixed order, results do not depend on how many worker threads
execute the ranks.

The sequential reference (one process, whole matrices) lives at the bottom
of the module.
"""
from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .commplan import CommPlan, build_comm_plan
from .model import SparseModel, check_partition
from .partition import ModelPartition
from .sparse import (
    SparseMatrix,
    gradient_update,
    mse_grad,
    mse_loss,
    sigmoid,
    sigmoid_deriv,
    spmv,
    spmv_subset,
    spmv_transpose_contrib,
)

FORWARD = "x"
BACKWARD = "s"
DEFAULT_ETA = 0.01


class SimulationError(RuntimeError):
    """The plan and the ownership data disagree (a construction bug)."""


class Mailbox:
    """Single-slot channels keyed by (receiver, sender, layer, phase)."""

    def __init__(self):
        self._slots = {}
        self._lock = threading.Lock()

    def post(self, dst, src, layer, phase, rows, values):
        key = (dst, src, layer, phase)
        with self._lock:
            if key in self._slots:
                raise SimulationError(f"duplicate message {key}")
            self._slots[key] = (rows, values)

    def take(self, dst, src, layer, phase):
        key = (dst, src, layer, phase)
        with self._lock:
            try:
                return self._slots.pop(key)
            except KeyError:
                raise SimulationError(
                    f"rank {dst} expected a {phase!r} message from rank {src} in layer {layer}"
                ) from None

    def __len__(self):
        with self._lock:
            return len(self._slots)


@dataclass
class StepTrace:
    """Per-layer, per-rank counters, all ``(L, P)`` int arrays."""

    x_words: np.ndarray
    x_msgs: np.ndarray
    s_words: np.ndarray
    s_msgs: np.ndarray
    recv_words: np.ndarray
    flops: np.ndarray
    losses: list = field(default_factory=list)

    @classmethod
    def zeros(cls, L, P):
        return cls(*(np.zeros((L, P), dtype=np.int64) for _ in range(6)))

    def __iadd__(self, other: "StepTrace"):
        for name in ("x_words", "x_msgs", "s_words", "s_msgs", "recv_words", "flops"):
            getattr(self, name).__iadd__(getattr(other, name))
        self.losses.extend(other.losses)
        return self

    @property
    def volume(self) -> np.ndarray:
        return (self.x_words + self.s_words).sum(axis=0)

    @property
    def messages(self) -> np.ndarray:
        return (self.x_msgs + self.s_msgs).sum(axis=0)

    def layer_words(self) -> np.ndarray:
        return (self.x_words + self.s_words).sum(axis=1)


@dataclass
class _Layer:
    rows: np.ndarray  # global rows owned, ascending
    W: SparseMatrix  # local rows x global columns
    global_pos: np.ndarray  # where W's entries live in the full layer matrix
    by_owner: dict  # column owner -> positions of entries reading that owner's x


class _Rank:
    def __init__(self, m, model: SparseModel, part: ModelPartition):
        self.m = m
        self.layers = []
        for k, W in enumerate(model.layers, start=1):
            rows = np.flatnonzero(part.owner(k) == m)
            pos = W.positions_of_rows(rows)
            block = W.select_rows(rows)
            col_owner = part.owner(k - 1)[block.col_indices]
            by_owner = {
                int(n): np.flatnonzero(col_owner == n) for n in np.unique(col_owner)
            }
            self.layers.append(_Layer(rows, block, pos, by_owner))
        self.input_rows = np.flatnonzero(part.owner(0) == m)
        L = len(self.layers)
        # xbuf[k-1] is the full-length input of layer k: local entries plus
        # received ones, kept for the weight update
        self.xbuf = [None] * L
        self.z = [None] * L
        self.x = [None] * L
        self.s = None
        self.delta = None


class SimCluster:
    """P logical processors holding a row-partitioned copy of ``model``."""

    def __init__(self, model: SparseModel, part: ModelPartition, plan: CommPlan | None = None,
                 threads: int = 1):
        check_partition(model, part)
        self.P = part.parts
        self.L = model.n_layers
        self.neurons = model.neurons
        self.input_dim = model.input_dim
        self.plan = build_comm_plan(model, part) if plan is None else plan
        self._template = model
        self.ranks = [_Rank(m, model, part) for m in range(self.P)]
        self.mailbox = Mailbox()
        self._pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _each_rank(self, fn):
        if self._pool is None:
            for m in range(self.P):
                fn(m)
        else:
            list(self._pool.map(fn, range(self.P)))

    def _drained(self, what):
        if len(self.mailbox):
            raise SimulationError(f"{len(self.mailbox)} unconsumed messages after {what}")

    # -- feedforward ---------------------------------------------------------

    def _ff_post(self, k, trace, m):
        r = self.ranks[m]
        lay = r.layers[k - 1]
        xb = r.xbuf[k - 1]
        for n, rows in sorted(self.plan.xsend[k - 1][m].items()):
            self.mailbox.post(n, m, k, FORWARD, rows, xb[rows].copy())
            trace.x_words[k - 1, m] += rows.size
            trace.x_msgs[k - 1, m] += 1
        local = lay.by_owner.get(m)
        if local is None:
            r.z[k - 1] = np.zeros(lay.W.n_rows)
        else:
            r.z[k - 1] = spmv_subset(lay.W, xb, local)
        trace.flops[k - 1, m] += 2 * lay.W.nnz

    def _ff_fold(self, k, trace, m):
        r = self.ranks[m]
        lay = r.layers[k - 1]
        xb = r.xbuf[k - 1]
        z = r.z[k - 1]
        for n, rows in sorted(self.plan.xrecv[k - 1][m].items()):
            got_rows, vals = self.mailbox.take(m, n, k, FORWARD)
            if not np.array_equal(got_rows, rows):
                raise SimulationError(f"layer {k}: rank {m} got unexpected rows from {n}")
            xb[rows] = vals
            trace.recv_words[k - 1, m] += rows.size
            z += spmv_subset(lay.W, xb, lay.by_owner[n])
        r.x[k - 1] = sigmoid(z)
        if k < self.L:
            nxt = np.zeros(self.neurons)
            nxt[lay.rows] = r.x[k - 1]
            r.xbuf[k] = nxt

    def spff(self, x0, trace: StepTrace) -> np.ndarray:
        x0 = np.asarray(x0, dtype=np.float64)
        if x0.shape != (self.input_dim,):
            raise ValueError(f"input has length {x0.size}, model expects {self.input_dim}")
        for r in self.ranks:
            buf = np.zeros(self.input_dim)
            buf[r.input_rows] = x0[r.input_rows]
            r.xbuf[0] = buf
        for k in range(1, self.L + 1):
            self._each_rank(lambda m: self._ff_post(k, trace, m))
            self._each_rank(lambda m: self._ff_fold(k, trace, m))
            self._drained(f"feedforward layer {k}")
        return self.gather_output()

    def gather_output(self) -> np.ndarray:
        out = np.zeros(self.neurons)
        for r in self.ranks:
            out[r.layers[-1].rows] = r.x[-1]
        return out

    # -- backprop ------------------------------------------------------------

    def _bp_post(self, k, eta, trace, m):
        r = self.ranks[m]
        lay = r.layers[k - 1]
        contrib = spmv_transpose_contrib(lay.W, r.delta, lay.rows)
        s = contrib.to_dense(lay.W.n_cols)
        for n, rows in sorted(self.plan.ssend[k - 1][m].items()):
            self.mailbox.post(n, m, k, BACKWARD, rows, s[rows].copy())
            trace.s_words[k - 1, m] += rows.size
            trace.s_msgs[k - 1, m] += 1
        gradient_update(lay.W, r.delta, r.xbuf[k - 1], eta)
        trace.flops[k - 1, m] += 4 * lay.W.nnz
        r.s = s

    def _bp_fold(self, k, trace, m):
        r = self.ranks[m]
        s = r.s
        for n, rows in sorted(self.plan.srecv[k - 1][m].items()):
            got_rows, vals = self.mailbox.take(m, n, k, BACKWARD)
            if not np.array_equal(got_rows, rows):
                raise SimulationError(f"layer {k}: rank {m} got unexpected partials from {n}")
            s[rows] += vals
            trace.recv_words[k - 1, m] += rows.size
        if k > 1:
            own = r.layers[k - 2].rows
            r.delta = s[own] * sigmoid_deriv(r.z[k - 2])
        r.s = None

    def spbp(self, y, eta: float, trace: StepTrace) -> None:
        y = np.asarray(y, dtype=np.float64)
        if y.shape != (self.neurons,):
            raise ValueError(f"label has length {y.size}, model outputs {self.neurons}")
        for r in self.ranks:
            if r.x[-1] is None:
                raise SimulationError("backprop needs a feedforward pass first")
            rows = r.layers[-1].rows
            r.delta = mse_grad(r.x[-1], y[rows], n=self.neurons) * sigmoid_deriv(r.z[-1])
        for k in range(self.L, 0, -1):
            self._each_rank(lambda m: self._bp_post(k, eta, trace, m))
            self._each_rank(lambda m: self._bp_fold(k, trace, m))
            self._drained(f"backprop layer {k}")

    # -- model access --------------------------------------------------------

    def gather_model(self) -> SparseModel:
        layers = []
        for k, W in enumerate(self._template.layers, start=1):
            values = np.empty(W.nnz)
            for r in self.ranks:
                lay = r.layers[k - 1]
                values[lay.global_pos] = lay.W.values
            layers.append(
                SparseMatrix(W.n_rows, W.n_cols, W.row_offsets.copy(), W.col_indices.copy(), values)
            )
        return SparseModel(layers, self.neurons, self.input_dim)


def run_spff(cluster: SimCluster, x0):
    """Parallel feedforward; returns the gathered output and the trace."""
    trace = StepTrace.zeros(cluster.L, cluster.P)
    return cluster.spff(x0, trace), trace


def run_spbp(cluster: SimCluster, y, eta: float = DEFAULT_ETA) -> StepTrace:
    """Parallel backprop and weight update for the input last fed forward."""
    trace = StepTrace.zeros(cluster.L, cluster.P)
    cluster.spbp(y, eta, trace)
    return trace


@dataclass
class SGDResult:
    model: SparseModel
    losses: list
    trace: StepTrace


def run_sgd(cluster: SimCluster, dataset, eta: float = DEFAULT_ETA, steps: int | None = None) -> SGDResult:
    """One SGD step per input, cycling through ``dataset`` for ``steps`` steps
    (default: one pass)."""
    steps = len(dataset) if steps is None else steps
    total = StepTrace.zeros(cluster.L, cluster.P)
    for step in range(steps):
        i = step % len(dataset)
        x_L = cluster.spff(dataset.inputs[i], total)
        total.losses.append(mse_loss(x_L, dataset.labels[i]))
        cluster.spbp(dataset.labels[i], eta, total)
    return SGDResult(cluster.gather_model(), total.losses, total)


# ---------------------------------------------------------------------------
# sequential reference


def feedforward(model: SparseModel, x0):
    """Return ``(xs, zs)`` with ``xs[0] = x0`` and ``xs[k] = f(zs[k-1])``."""
    xs = [np.asarray(x0, dtype=np.float64)]
    zs = []
    for W in model.layers:
        z = spmv(W, xs[-1])
        zs.append(z)
        xs.append(sigmoid(z))
    return xs, zs


def infer(model: SparseModel, x0) -> np.ndarray:
    return feedforward(model, x0)[0][-1]


def _backprop(model: SparseModel, xs, zs, y, eta=None):
    """Walk the layers backwards; with ``eta`` update in place, otherwise
    return per-layer gradients over the stored entries."""
    grads = [None] * model.n_layers
    delta = mse_grad(xs[-1], y) * sigmoid_deriv(zs[-1])
    for k in range(model.n_layers, 0, -1):
        W = model.layers[k - 1]
        s = spmv_transpose_contrib(W, delta, np.arange(W.n_rows)).to_dense(W.n_cols)
        if eta is None:
            grads[k - 1] = delta[W.row_ids] * xs[k - 1][W.col_indices]
        else:
            gradient_update(W, delta, xs[k - 1], eta)
        if k > 1:
            delta = s * sigmoid_deriv(zs[k - 2])
    return grads


def backprop_gradients(model: SparseModel, x0, y) -> list:
    """dJ/dW for every stored entry, layer by layer, in stored order."""
    xs, zs = feedforward(model, x0)
    return _backprop(model, xs, zs, y)


def sgd_step(model: SparseModel, x0, y, eta: float = DEFAULT_ETA) -> float:
    """One in-place SGD step; returns the loss seen by the feedforward pass."""
    xs, zs = feedforward(model, x0)
    loss = mse_loss(xs[-1], y)
    _backprop(model, xs, zs, y, eta)
    return loss


def sequential_sgd(model: SparseModel, dataset, eta: float = DEFAULT_ETA,
                   steps: int | None = None):
    """Single-process SGD on a copy of ``model``; returns ``(model, losses)``."""
    model = model.copy()
    steps = len(dataset) if steps is None else steps
    losses = [
        sgd_step(model, dataset.inputs[s % len(dataset)], dataset.labels[s % len(dataset)], eta)
        for s in range(steps)
    ]
    return model, losses
