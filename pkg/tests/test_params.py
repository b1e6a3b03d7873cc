import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from osplab.errors import InvalidLayerError, PartitionError, ShapeError
from osplab.params import (LayeredVector, apply_delta, checksum, layer_bytes, make_partition, merge_payload,
                           payload_bytes, slice_layers, zeros_like)


def vec(values, counts):
    return LayeredVector(np.asarray(values, dtype=float), make_partition(counts))


def test_make_partition_offsets():
    p = make_partition([3, 2])
    assert [(l.layer_id, l.offset, l.count) for l in p.layers] == [(0, 0, 3), (1, 3, 2)]
    assert p.total_count == 5


def test_single_layer_partition():
    p = make_partition([1])
    assert p.num_layers == 1 and p.layer_slice(0) == slice(0, 1)


def test_layer_byte_sizes():
    p = make_partition([10, 20, 30], 4)
    assert [p.layer_nbytes(i) for i in range(3)] == [40, 80, 120]


@pytest.mark.parametrize("counts", [[], [0], [3, -1]])
def test_bad_partitions(counts):
    with pytest.raises(PartitionError):
        make_partition(counts)


def test_slice_layers_selects():
    v = vec([1, 2, 3, 4], [2, 2])
    out = slice_layers(v, {1})
    assert list(out) == [1] and out[1].tolist() == [3, 4]


def test_slice_empty_and_all():
    v = vec([1, 2, 3, 4, 5], [2, 3])
    assert slice_layers(v, set()) == {}
    full = slice_layers(v, v.partition.all_layers())
    assert payload_bytes(full, v.partition) == v.partition.model_bytes


def test_slice_unknown_layer():
    v = vec([1, 2], [2])
    with pytest.raises(InvalidLayerError):
        slice_layers(v, {3})


def test_merge_payload():
    v = vec([1, 2, 3, 4], [2, 2])
    assert merge_payload(v, {0: np.array([9.0, 9.0])}).values.tolist() == [9, 9, 3, 4]
    assert merge_payload(v, {}).values.tolist() == [1, 2, 3, 4]
    assert v.values.tolist() == [1, 2, 3, 4]


def test_merge_wrong_length():
    v = vec([1, 2, 3, 4], [2, 2])
    with pytest.raises(ShapeError):
        merge_payload(v, {0: np.array([1.0])})


def test_apply_delta_examples():
    p = vec([1, 1], [2])
    assert apply_delta(p, vec([0.5, -0.5], [2])).values.tolist() == [1.5, 0.5]
    assert apply_delta(p, vec([0.5, -0.5], [2]), scale=0).values.tolist() == [1, 1]
    q = vec([1, 1, 1, 1], [2, 2])
    out = apply_delta(q, {1: np.array([0.1, -0.2])})
    assert out.values.tolist() == [1, 1, 1.1, 0.8]


def test_layer_bytes_examples():
    p = make_partition([10, 20, 30], 4)
    assert layer_bytes(set(), p) == 0
    assert layer_bytes(p.all_layers(), p) == 240
    assert layer_bytes({0}, p) == 40


def test_non_finite_vector_rejected():
    with pytest.raises(ShapeError):
        vec([1.0, np.nan], [2])


def test_zeros_like():
    assert zeros_like(make_partition([2, 1])).values.tolist() == [0, 0, 0]


counts_st = st.lists(st.integers(1, 6), min_size=1, max_size=8)


@settings(max_examples=60, deadline=None)
@given(counts=counts_st, data=st.data())
def test_slice_complement_merge_reconstructs(counts, data):
    part = make_partition(counts)
    rng = np.random.default_rng(data.draw(st.integers(0, 2 ** 32 - 1)))
    v = LayeredVector(rng.standard_normal(part.total_count), part)
    s = data.draw(st.frozensets(st.integers(0, part.num_layers - 1)))
    rebuilt = merge_payload(merge_payload(zeros_like(part), slice_layers(v, s)), slice_layers(v, part.complement(s)))
    assert checksum(rebuilt) == checksum(v)


@settings(max_examples=60, deadline=None)
@given(counts=counts_st, data=st.data())
def test_layer_bytes_additive(counts, data):
    part = make_partition(counts)
    a = data.draw(st.frozensets(st.integers(0, part.num_layers - 1)))
    b = part.complement(a)
    assert layer_bytes(a, part) + layer_bytes(b, part) == part.model_bytes


@settings(max_examples=30, deadline=None)
@given(counts=counts_st, seed=st.integers(0, 2 ** 32 - 1))
def test_apply_delta_deterministic(counts, seed):
    part = make_partition(counts)
    rng = np.random.default_rng(seed)
    p = LayeredVector(rng.standard_normal(part.total_count), part)
    d = slice_layers(LayeredVector(rng.standard_normal(part.total_count), part), part.all_layers())
    assert checksum(apply_delta(p, d, 0.3)) == checksum(apply_delta(p, d, 0.3))
