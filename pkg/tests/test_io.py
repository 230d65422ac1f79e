import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from asymseg import io
from asymseg.errors import FormatError
from asymseg.geometry import AspectAnnotation

from conftest import annotations


@settings(max_examples=30)
@given(hnp.arrays(np.uint8, hnp.array_shapes(min_dims=2, max_dims=2, min_side=1, max_side=40)))
def test_pgm_round_trip(tmp_path_factory, arr):
    path = tmp_path_factory.mktemp("pgm") / "a.pgm"
    io.write_pgm(path, arr)
    back = io.read_pgm(path)
    assert back.dtype == np.uint8 and np.array_equal(back, arr)


def test_pgm_header_comments_and_layout(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P5\n# made by hand\n3 2\n# depth\n255\n" + bytes(range(6)))
    assert io.read_pgm(path).tolist() == [[0, 1, 2], [3, 4, 5]]
    io.write_pgm(path, np.array([[7, 8]], dtype=np.uint8))
    assert path.read_bytes() == b"P5\n2 1\n255\n\x07\x08"


@pytest.mark.parametrize("payload", [b"P2\n1 1\n255\n\x00", b"P5\n4 4\n255\n\x00\x01", b"P5\n", b"P5\nx 1\n255\n\x00"])
def test_pgm_malformed(tmp_path, payload):
    path = tmp_path / "bad.pgm"
    path.write_bytes(payload)
    with pytest.raises(FormatError):
        io.read_pgm(path)


def test_mask_and_image_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    mask = rng.random((9, 13)) < 0.4
    io.write_mask(tmp_path / "m.pgm", mask)
    assert np.array_equal(io.read_mask(tmp_path / "m.pgm"), mask)
    assert set(np.unique(io.read_pgm(tmp_path / "m.pgm"))) <= {0, 255}
    img = rng.integers(0, 256, size=(9, 13)).astype(np.float32) / np.float32(255)
    io.write_image(tmp_path / "i.pgm", img)
    back = io.read_image(tmp_path / "i.pgm")
    assert back.dtype == np.float32 and np.array_equal(back, img)


@settings(max_examples=20)
@given(st.lists(annotations(64), min_size=0, max_size=6))
def test_annotation_jsonl_round_trip(tmp_path_factory, anns):
    path = tmp_path_factory.mktemp("ann") / "a.jsonl"
    items = [(f"id{i}", a) for i, a in enumerate(anns)]
    io.write_annotations(path, items)
    assert io.read_annotations(path) == items
    for line in path.read_text().splitlines():
        rec = json.loads(line)
        assert set(rec) == {"id", "major", "minor"}


def test_annotation_bad_line_reports_location(tmp_path):
    path = tmp_path / "a.jsonl"
    good = json.dumps({"id": "a", **AspectAnnotation(((0, 0), (9, 0)), ((4, -2), (4, 2))).to_json()})
    path.write_text(good + "\n{not json\n")
    with pytest.raises(FormatError, match=r"a\.jsonl:2"):
        io.read_annotations(path)
    path.write_text(json.dumps({"id": "b", "major": [[0, 0]], "minor": [[1, 1], [2, 2]]}) + "\n")
    with pytest.raises(FormatError):
        io.read_annotations(path)
