import json
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from latentcarto.cartogram import TransformField, identity_transform
from latentcarto.errors import FormatError, InputError
from latentcarto.formats import (
    MAGIC,
    decode_embeddings,
    decode_field,
    encode_embeddings,
    encode_field,
    load_embeddings,
    load_field,
    save_embeddings,
    save_field,
)
from latentcarto.grid import EmbeddingSet, GridSpec, MeaningField, MeasureField

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


def test_measure_roundtrip(tmp_path):
    m = MeasureField(GridSpec(-1, 2, 0, 3, 3, 3), np.arange(9.0).reshape(3, 3) / 7)
    save_field(tmp_path / "m.lcf", m)
    back = load_field(tmp_path / "m.lcf")
    assert isinstance(back, MeasureField)
    assert back.values.tobytes() == m.values.tobytes()
    assert back.spec == m.spec


def test_header_layout():
    H = MeaningField(GridSpec(0, 1, 0, 1, 2, 3), np.full((2, 3, 2), 0.5), is_distribution=True)
    data = encode_field(H)
    assert data[:4] == MAGIC
    (n,) = struct.unpack("<I", data[4:8])
    header = json.loads(data[8 : 8 + n])
    assert list(header) == ["kind", "shape", "bounds", "dist"]
    assert header == {"kind": "meaning", "shape": [2, 3, 2], "bounds": [[0, 1], [0, 1]], "dist": True}
    assert len(data) == 8 + n + 12 * 8
    assert np.frombuffer(data[8 + n :], "<f8").tolist() == [0.5] * 12


@given(
    st.integers(2, 6),
    st.integers(2, 6),
    st.integers(1, 3),
    st.sampled_from(["meaning", "measure", "transform"]),
    st.data(),
)
def test_field_roundtrip_bit_identical(n1, n2, d, kind, data):
    spec = GridSpec(-1.5, 2.0, 0.25, 9.0, n1, n2)
    if kind == "meaning":
        vals = data.draw(hnp.arrays(np.float64, (n1, n2, d), elements=finite))
        fld = MeaningField(spec, vals)
    elif kind == "measure":
        vals = data.draw(hnp.arrays(np.float64, (n1, n2), elements=st.floats(0, 1e300)))
        fld = MeasureField(spec, vals)
    else:
        vals = data.draw(hnp.arrays(np.float64, (n1, n2, 2), elements=finite))
        fld = TransformField(spec, vals)
    back = decode_field(encode_field(fld))
    assert type(back) is type(fld)
    assert back.values.tobytes() == fld.values.tobytes()
    assert encode_field(back) == encode_field(fld)


def test_bad_magic_offset_zero():
    data = b"XXXX" + encode_field(MeasureField(GridSpec(0, 1, 0, 1, 2, 2), np.ones((2, 2))))[4:]
    with pytest.raises(FormatError) as info:
        decode_field(data)
    assert info.value.offset == 0


def _raw(header: dict, values) -> bytes:
    blob = json.dumps(header).encode()
    return MAGIC + struct.pack("<I", len(blob)) + blob + np.asarray(values, "<f8").tobytes()


def test_payload_length_mismatch_names_expected_count():
    data = _raw({"kind": "measure", "shape": [2, 2], "bounds": [[0, 1], [0, 1]]}, np.ones(5))
    with pytest.raises(FormatError) as info:
        decode_field(data)
    assert "expected 4" in str(info.value)
    assert info.value.offset == len(data) - 40


def test_truncated_payload():
    data = encode_field(MeasureField(GridSpec(0, 1, 0, 1, 3, 3), np.ones((3, 3))))[:-3]
    with pytest.raises(FormatError, match="expected 9"):
        decode_field(data)


def test_kind_shape_mismatch():
    data = _raw({"kind": "measure", "shape": [2, 2, 1], "bounds": [[0, 1], [0, 1]]}, np.ones(4))
    with pytest.raises(FormatError) as info:
        decode_field(data)
    assert info.value.offset == 8


def test_non_finite_payload_offset():
    vals = np.ones(4)
    vals[2] = np.nan
    data = _raw({"kind": "measure", "shape": [2, 2], "bounds": [[0, 1], [0, 1]]}, vals)
    with pytest.raises(FormatError) as info:
        decode_field(data)
    assert info.value.offset == len(data) - 16


def test_negative_measure_payload_is_format_error():
    data = _raw({"kind": "measure", "shape": [2, 2], "bounds": [[0, 1], [0, 1]]}, -np.ones(4))
    with pytest.raises(FormatError):
        decode_field(data)


def test_encode_rejects_unknown_type():
    with pytest.raises(InputError):
        encode_field(np.ones((2, 2)))


def test_save_is_atomic_and_leaves_no_temp(tmp_path):
    p = tmp_path / "t.lcf"
    save_field(p, identity_transform(GridSpec(0, 1, 0, 1, 3, 3)))
    save_field(p, identity_transform(GridSpec(0, 1, 0, 1, 4, 3)))
    assert load_field(p).spec.n_1 == 4
    assert [x.name for x in tmp_path.iterdir()] == ["t.lcf"]


# embeddings ------------------------------------------------------------------


def test_embeddings_roundtrip_labelled(tmp_path):
    E = EmbeddingSet(np.array([[0.1, 0.2], [1e-300, -3.5], [2 / 3, 7.0]]), ("cat", "dog", "cat"))
    save_embeddings(tmp_path / "e.csv", E)
    back = load_embeddings(tmp_path / "e.csv")
    assert back.points.tobytes() == E.points.tobytes()
    assert back.labels == E.labels


@given(
    hnp.arrays(np.float64, st.tuples(st.integers(1, 30), st.just(2)), elements=finite),
    st.booleans(),
    st.data(),
)
def test_embeddings_roundtrip_bit_identical(pts, labelled, data):
    labels = None
    if labelled:
        labels = tuple(data.draw(st.lists(st.text(alphabet="abcxyz,\" 01", max_size=5), min_size=len(pts), max_size=len(pts))))
    E = EmbeddingSet(pts, labels)
    back = decode_embeddings(encode_embeddings(E))
    assert back.points.tobytes() == E.points.tobytes()
    assert back.labels == E.labels


def test_header_only_is_empty_set_error():
    with pytest.raises(FormatError, match="no points"):
        decode_embeddings("z1,z2\n")


def test_mixed_arity_reports_first_bad_line():
    with pytest.raises(FormatError) as info:
        decode_embeddings("z1,z2\n0,1\n2,3\n4,5,a\n6,7,b\n")
    assert info.value.line == 4


def test_bad_header_and_values():
    with pytest.raises(FormatError):
        decode_embeddings("x,y\n0,1\n")
    with pytest.raises(FormatError) as info:
        decode_embeddings("z1,z2\n0,1\nfoo,2\n")
    assert info.value.line == 3
    with pytest.raises(FormatError):
        decode_embeddings("z1,z2\n0,inf\n")


def test_binary_file_as_embeddings(tmp_path):
    p = tmp_path / "m.lcf"
    save_field(p, MeasureField(GridSpec(0, 1, 0, 1, 2, 2), np.full((2, 2), 3.0e-7)))
    with pytest.raises(FormatError):
        load_embeddings(p)
