import filecmp

import numpy as np
import pytest

from spdnn.model import (
    ModelFormatError,
    SparseModel,
    check_partition,
    generate_synthetic,
    load_model,
    load_partition,
    radix_strides,
    save_model,
    save_partition,
)
from spdnn.partition import partition_model
from spdnn.sparse import SparseMatrix

from conftest import DATA


def assert_regular(W, degree):
    assert np.all(W.row_degrees() == degree)
    assert np.all(W.col_degrees() == degree)


def test_single_permutation():
    m = generate_synthetic(1, 4, 1, seed=0)
    W = m.layers[0]
    assert W.nnz == 4
    assert_regular(W, 1)
    assert sorted(W.col_indices.tolist()) == [0, 1, 2, 3]


@pytest.mark.parametrize("topology", ["radix", "random"])
@pytest.mark.parametrize("L, N, degree", [(3, 16, 4), (5, 64, 8), (2, 32, 32), (4, 100, 3)])
def test_generator_regular_degrees(topology, L, N, degree):
    m = generate_synthetic(L, N, degree, seed=7, topology=topology)
    assert m.n_layers == L
    for W in m.layers:
        assert_regular(W, degree)
        assert np.all((W.values >= -1) & (W.values <= 1))


def test_large_count():
    m = generate_synthetic(120, 1024, 32, seed=0)
    assert all(W.nnz == 32768 for W in m.layers)
    assert m.nnz() == 120 * 32768


def test_uneven_input_dim():
    m = generate_synthetic(2, 16, 4, seed=1, input_dim=64)
    W1 = m.layers[0]
    assert (W1.n_rows, W1.n_cols) == (16, 64)
    assert np.all(W1.row_degrees() == 4)
    assert W1.col_degrees().max() - W1.col_degrees().min() <= 1


def test_generator_rejects_bad_degree():
    with pytest.raises(ValueError):
        generate_synthetic(1, 4, 5)
    with pytest.raises(ValueError):
        generate_synthetic(1, 4, 0)


def test_radix_strides():
    assert radix_strides(1024, 16) == [1, 16]
    assert radix_strides(4096, 16) == [1, 16, 256]
    assert radix_strides(8, 1) == [1]


def test_same_seed_same_bytes(tmp_path):
    for name in ("a", "b"):
        save_model(generate_synthetic(4, 64, 8, seed=1), tmp_path / name / "model.txt")
    cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
    assert cmp.left_list == cmp.right_list and not cmp.diff_files
    for f in cmp.common_files:
        assert filecmp.cmp(tmp_path / "a" / f, tmp_path / "b" / f, shallow=False)


def test_different_seed_differs():
    assert generate_synthetic(2, 32, 4, seed=1) != generate_synthetic(2, 32, 4, seed=2)


def test_round_trip(tmp_path, small_model):
    save_model(small_model, tmp_path / "m" / "model.txt")
    assert load_model(tmp_path / "m" / "model.txt") == small_model


def test_round_trip_keeps_awkward_floats(tmp_path):
    W = SparseMatrix.from_coo(2, 2, [0, 1], [1, 0], [0.1 + 0.2, -1e-300])
    m = SparseModel([W], 2, 2)
    save_model(m, tmp_path / "model.txt")
    assert load_model(tmp_path / "model.txt") == m


def test_toy4_layer_file(toy4_model):
    W1 = toy4_model.layers[0]
    assert W1.nnz == 10
    pattern = [sorted((W1.col_indices[W1.row_offsets[i]:W1.row_offsets[i + 1]] + 1).tolist())
               for i in range(4)]
    assert pattern == [[1, 2], [1, 2, 3], [1, 3, 4], [3, 4]]
    assert W1.to_dense()[2, 3] == -0.75


def _copy_fixture(tmp_path):
    for f in (DATA / "toy4").iterdir():
        (tmp_path / f.name).write_text(f.read_text())
    return tmp_path / "model.txt"


def test_truncated_layer_names_layer(tmp_path):
    manifest = _copy_fixture(tmp_path)
    layer2 = tmp_path / "layer0002.txt"
    layer2.write_text(layer2.read_text()[:-6])
    with pytest.raises(ModelFormatError, match="layer 2"):
        load_model(manifest)


@pytest.mark.parametrize(
    "line, message",
    [("5 1 0.5", "outside"), ("x 1 0.5", "unparsable"), ("1 1 nan", "non-finite")],
)
def test_bad_entry(tmp_path, line, message):
    manifest = _copy_fixture(tmp_path)
    layer = tmp_path / "layer0002.txt"
    lines = layer.read_text().splitlines()
    lines[0] = line
    layer.write_text("\n".join(lines) + "\n")
    with pytest.raises(ModelFormatError, match=message):
        load_model(manifest)


def test_unsorted_entries(tmp_path):
    manifest = _copy_fixture(tmp_path)
    layer = tmp_path / "layer0001.txt"
    lines = layer.read_text().splitlines()
    lines[0], lines[1] = lines[1], lines[0]
    layer.write_text("\n".join(lines) + "\n")
    with pytest.raises(ModelFormatError, match="layer 1"):
        load_model(manifest)


def test_bad_manifest(tmp_path):
    p = tmp_path / "model.txt"
    p.write_text("not a model\n")
    with pytest.raises(ModelFormatError):
        load_model(p)
    with pytest.raises(ModelFormatError):
        load_model(tmp_path / "missing.txt")


def test_model_dimension_check():
    W = SparseMatrix.from_dense(np.eye(3))
    with pytest.raises(ValueError):
        SparseModel([W], 4, 3)


def test_partition_round_trip(tmp_path, small_model):
    part = partition_model(small_model, 4, "random", seed=2)
    save_partition(part, tmp_path / "p.txt")
    back = load_partition(tmp_path / "p.txt")
    assert back == part
    check_partition(small_model, back)


def test_partition_file_layout(toy4_partition):
    assert toy4_partition.parts == 2
    assert toy4_partition.input_assignment.tolist() == [0, 1, 0, 0]
    assert toy4_partition.layers[0].assignment.tolist() == [1, 1, 0, 0]


@pytest.mark.parametrize(
    "text",
    [
        "partition v1 parts 2 layers 1\nlayer 1\n1 0\n2 5\nlayer 0\n1 0\n",
        "partition v1 parts 2 layers 1\nlayer 1\n1 0\n3 1\nlayer 0\n1 0\n",
        "partition v1 parts 2 layers 2\nlayer 1\n1 0\nlayer 0\n1 0\n",
        "garbage\n",
    ],
)
def test_bad_partition_file(tmp_path, text):
    p = tmp_path / "p.txt"
    p.write_text(text)
    with pytest.raises(ModelFormatError):
        load_partition(p)


def test_check_partition_mismatch(toy4_model, small_model):
    part = partition_model(small_model, 2, "random")
    with pytest.raises(ValueError):
        check_partition(toy4_model, part)
