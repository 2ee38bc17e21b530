"""Sparse DNN models: synthetic generation and the on-disk text formats."""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .partition import LayerPartition, ModelPartition
from .sparse import SparseMatrix

MAX_GENERATOR_ATTEMPTS = 64


class ModelFormatError(ValueError):
    """A model or partition file is malformed."""


@dataclass
class SparseModel:
    layers: list
    neurons: int
    input_dim: int

    def __post_init__(self):
        for k, W in enumerate(self.layers, start=1):
            want_cols = self.input_dim if k == 1 else self.neurons
            if W.n_rows != self.neurons or W.n_cols != want_cols:
                raise ValueError(
                    f"layer {k} is {W.n_rows}x{W.n_cols}, expected {self.neurons}x{want_cols}"
                )

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def nnz(self) -> int:
        return sum(W.nnz for W in self.layers)

    def copy(self) -> "SparseModel":
        return SparseModel([W.copy() for W in self.layers], self.neurons, self.input_dim)

    def __eq__(self, other):
        if not isinstance(other, SparseModel):
            return NotImplemented
        return (
            self.neurons == other.neurons
            and self.input_dim == other.input_dim
            and len(self.layers) == len(other.layers)
            and all(a == b for a, b in zip(self.layers, other.layers))
        )


# ---------------------------------------------------------------------------
# generator


def _permutation_union(N: int, degree: int, rng: np.random.Generator) -> np.ndarray:
    """Columns of ``degree`` permutation matrices with pairwise distinct positions.

    Returns an ``N x degree`` array whose row ``i`` lists the columns of row
    ``i``.  Each new permutation is drawn at random and collisions with the
    ones already placed are repaired by random transpositions.
    """
    cols = np.empty((N, degree), dtype=np.int64)
    for t in range(degree):
        for _ in range(MAX_GENERATOR_ATTEMPTS):
            perm = rng.permutation(N)
            taken = cols[:, :t]
            bad = np.flatnonzero((taken == perm[:, None]).any(axis=1))
            for i in bad:
                for _ in range(4 * N):
                    j = int(rng.integers(N))
                    if perm[j] not in taken[i] and perm[i] not in taken[j]:
                        perm[i], perm[j] = perm[j], perm[i]
                        break
                else:
                    break
            if not (taken == perm[:, None]).any():
                cols[:, t] = perm
                break
        else:
            # dense layers leave repair no room; fall back to a random circulant
            return _random_circulant(N, degree, rng)
    return cols


def _random_circulant(N: int, degree: int, rng: np.random.Generator) -> np.ndarray:
    """Shifts by ``degree`` distinct random offsets under random relabelling."""
    offsets = rng.choice(N, size=degree, replace=False)
    rows, cols = rng.permutation(N), rng.permutation(N)
    out = np.empty((N, degree), dtype=np.int64)
    out[rows] = cols[(np.arange(N)[:, None] + offsets[None, :]) % N]
    return out


def _shift_union(N: int, degree: int, stride: int) -> np.ndarray:
    """Union of the cyclic shifts ``i -> i + t * stride (mod N)``, ``t < degree``."""
    return (np.arange(N)[:, None] + np.arange(degree)[None, :] * stride) % N


def radix_strides(N: int, degree: int) -> list:
    """Strides 1, degree, degree**2, ... for which the shifts stay distinct mod N."""
    strides = [1]
    while degree > 1 and strides[-1] * degree * degree <= N:
        strides.append(strides[-1] * degree)
    return strides


def generate_synthetic(L: int, N: int, degree: int, seed: int = 0,
                       input_dim: int | None = None, topology: str = "radix") -> SparseModel:
    """Seeded sparse network with ``degree`` nonzeros in every row and column.

    Each layer is the union of ``degree`` permutation matrices with distinct
    positions and weights uniform on [-1, 1].

    ``topology="radix"`` uses the mixed-radix shift pattern (layer ``k`` joins
    ``i`` to ``i + t * s_k``, strides cycling through :func:`radix_strides`)
    with every layer's neurons relabelled by a seeded permutation, so the
    structure is present but not visible in the neuron numbering.
    ``topology="random"`` draws each permutation uniformly and repairs
    collisions.

    ``input_dim`` defaults to ``N``; when it differs the first layer keeps
    ``degree`` nonzeros per row with column degrees as even as possible.
    """
    if degree < 1 or degree > N:
        raise ValueError(f"degree must lie in [1, {N}], got {degree}")
    if topology not in ("radix", "random"):
        raise ValueError(f"unknown topology {topology!r}")
    D = N if input_dim is None else input_dim
    if D < degree:
        raise ValueError("input dimension smaller than degree")
    rng = np.random.default_rng(seed)
    strides = radix_strides(N, degree)
    labels = [rng.permutation(D)] + [rng.permutation(N) for _ in range(L)]
    layers = []
    for k in range(1, L + 1):
        n_cols = D if k == 1 else N
        if n_cols != N:
            cols = _uneven_union(N, n_cols, degree, rng)
        elif topology == "random":
            cols = _permutation_union(N, degree, rng)
        else:
            base = _shift_union(N, degree, strides[(k - 1) % len(strides)])
            cols = np.empty_like(base)
            cols[labels[k]] = labels[k - 1][base]
        rows = np.repeat(np.arange(N), degree)
        values = rng.uniform(-1.0, 1.0, size=N * degree)
        layers.append(SparseMatrix.from_coo(N, n_cols, rows, cols.ravel(), values))
    return SparseModel(layers, N, D)


def _uneven_union(N: int, n_cols: int, degree: int, rng: np.random.Generator) -> np.ndarray:
    # rows take `degree` distinct columns from a shuffled round-robin stream
    cols = np.empty((N, degree), dtype=np.int64)
    stream = np.concatenate(
        [rng.permutation(n_cols) for _ in range(-(-N * degree // n_cols) + 1)]
    )
    pos = 0
    for i in range(N):
        picked = []
        while len(picked) < degree:
            c = int(stream[pos % stream.size])
            pos += 1
            if c not in picked:
                picked.append(c)
        cols[i] = picked
    return cols


# ---------------------------------------------------------------------------
# text formats

MANIFEST_MAGIC = "sparsemodel v1"
PARTITION_MAGIC = "partition v1"


def _layer_filename(k: int) -> str:
    return f"layer{k:04d}.txt"


def save_model(model: SparseModel, path) -> None:
    """Write ``path`` (the manifest) plus one matrix file per layer beside it."""
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    lines = [
        MANIFEST_MAGIC,
        f"layers {model.n_layers} neurons {model.neurons} input_dim {model.input_dim}",
    ]
    for k, W in enumerate(model.layers, start=1):
        name = _layer_filename(k)
        lines.append(f"layer {k} nnz {W.nnz} file {name}")
        body = "".join(
            f"{r + 1} {c + 1} {v!r}\n"
            for r, c, v in zip(W.row_ids.tolist(), W.col_indices.tolist(), W.values.tolist())
        )
        with open(os.path.join(folder, name), "w") as fh:
            fh.write(body)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _read_matrix(path, k, n_rows, n_cols, nnz) -> SparseMatrix:
    try:
        with open(path) as fh:
            text = fh.read().split()
    except OSError as exc:
        raise ModelFormatError(f"layer {k}: cannot read {path}: {exc}") from exc
    if len(text) % 3:
        raise ModelFormatError(f"layer {k}: truncated entry in {path}")
    if len(text) // 3 != nnz:
        raise ModelFormatError(f"layer {k}: expected {nnz} entries, found {len(text) // 3}")
    try:
        rows = np.array(text[0::3], dtype=np.int64) - 1
        cols = np.array(text[1::3], dtype=np.int64) - 1
        vals = np.array(text[2::3], dtype=np.float64)
    except ValueError as exc:
        raise ModelFormatError(f"layer {k}: unparsable entry: {exc}") from exc
    if nnz:
        if rows.min() < 0 or rows.max() >= n_rows or cols.min() < 0 or cols.max() >= n_cols:
            raise ModelFormatError(f"layer {k}: index outside {n_rows}x{n_cols}")
        key = rows * n_cols + cols
        if np.any(np.diff(key) <= 0):
            raise ModelFormatError(f"layer {k}: coordinates not strictly increasing")
    if not np.all(np.isfinite(vals)):
        raise ModelFormatError(f"layer {k}: non-finite value")
    offsets = np.zeros(n_rows + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n_rows), out=offsets[1:])
    return SparseMatrix(n_rows, n_cols, offsets, cols, vals)


def load_model(path) -> SparseModel:
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ModelFormatError(f"cannot read model manifest {path}: {exc}") from exc
    if not lines or lines[0].strip() != MANIFEST_MAGIC:
        raise ModelFormatError(f"{path}: missing '{MANIFEST_MAGIC}' header")
    head = lines[1].split() if len(lines) > 1 else []
    if len(head) != 6 or head[0::2] != ["layers", "neurons", "input_dim"]:
        raise ModelFormatError(f"{path}: malformed dimensions line")
    try:
        L, N, D = (int(t) for t in head[1::2])
    except ValueError as exc:
        raise ModelFormatError(f"{path}: malformed dimensions line") from exc
    entries = [ln.split() for ln in lines[2:] if ln.strip()]
    if len(entries) != L:
        raise ModelFormatError(f"{path}: declares {L} layers, lists {len(entries)}")
    layers = []
    for k, toks in enumerate(entries, start=1):
        if len(toks) != 6 or toks[0] != "layer" or toks[2] != "nnz" or toks[4] != "file":
            raise ModelFormatError(f"{path}: malformed entry for layer {k}")
        if int(toks[1]) != k:
            raise ModelFormatError(f"{path}: layer entries out of order at {k}")
        layers.append(
            _read_matrix(os.path.join(folder, toks[5]), k, N, D if k == 1 else N, int(toks[3]))
        )
    return SparseModel(layers, N, D)


def save_partition(part: ModelPartition, path) -> None:
    lines = [f"{PARTITION_MAGIC} parts {part.parts} layers {len(part.layers)}"]
    blocks = [(k, lp.assignment) for k, lp in enumerate(part.layers, start=1)]
    blocks.append((0, part.input_assignment))
    for k, owners in blocks:
        lines.append(f"layer {k}")
        lines.extend(f"{i + 1} {p}" for i, p in enumerate(owners.tolist()))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_partition(path) -> ModelPartition:
    try:
        with open(path) as fh:
            lines = [ln.split() for ln in fh.read().splitlines() if ln.strip()]
    except OSError as exc:
        raise ModelFormatError(f"cannot read partition {path}: {exc}") from exc
    head = lines[0] if lines else []
    if len(head) != 6 or " ".join(head[:2]) != PARTITION_MAGIC or head[2] != "parts" \
            or head[4] != "layers":
        raise ModelFormatError(f"{path}: missing '{PARTITION_MAGIC}' header")
    P, L = int(head[3]), int(head[5])
    blocks = {}
    current = None
    for toks in lines[1:]:
        if toks[0] == "layer":
            current = int(toks[1])
            if current in blocks:
                raise ModelFormatError(f"{path}: layer {current} listed twice")
            blocks[current] = []
            continue
        if current is None or len(toks) != 2:
            raise ModelFormatError(f"{path}: stray line {' '.join(toks)!r}")
        row, p = int(toks[0]), int(toks[1])
        if row != len(blocks[current]) + 1:
            raise ModelFormatError(f"{path}: layer {current} rows not consecutive at {row}")
        if not 0 <= p < P:
            raise ModelFormatError(f"{path}: layer {current} row {row} part {p} out of range")
        blocks[current].append(p)
    if sorted(blocks) != list(range(L + 1)):
        raise ModelFormatError(f"{path}: expected blocks for layers 0..{L}")
    layers = [LayerPartition(np.array(blocks[k], dtype=np.int64), P) for k in range(1, L + 1)]
    return ModelPartition(P, np.array(blocks[0], dtype=np.int64), layers)


def check_partition(model: SparseModel, part: ModelPartition) -> None:
    """Raise ``ValueError`` unless ``part`` covers every row of ``model``."""
    if len(part.layers) != model.n_layers:
        raise ValueError(f"partition has {len(part.layers)} layers, model has {model.n_layers}")
    if part.input_assignment.size != model.input_dim:
        raise ValueError("partition does not cover every input row")
    for k, lp in enumerate(part.layers, start=1):
        if lp.assignment.size != model.neurons:
            raise ValueError(f"partition of layer {k} does not cover every row")
