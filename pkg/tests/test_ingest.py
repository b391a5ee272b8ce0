from __future__ import annotations

import io
import json
import math
import re
from collections import Counter
from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import same_box, splitmix64_stream

from engdraw.geometry import AxisAlignedBox, OrientedBox, obb_corners
from engdraw.ingest import (
    ANNOTATION_KEYS,
    REGION_KEYS,
    DatasetStats,
    LabelFormatError,
    PairKind,
    SplitMix64,
    SplitSpec,
    VlmPairRecord,
    compute_stats,
    file_stats,
    read_det_labels,
    read_det_predictions,
    read_obb_labels,
    read_obb_predictions,
    read_pairs,
    shuffled,
    split_dataset,
    split_sizes,
    write_det_labels,
    write_obb_labels,
    write_pairs,
    write_stats,
)
from engdraw.taxonomy import AnnotationClass, RegionClass

# --- detection labels -------------------------------------------------------


def test_full_image_view():
    assert read_det_labels(io.StringIO("0 0.5 0.5 1.0 1.0\n"), (800, 600)) == [
        (RegionClass.VIEW, AxisAlignedBox(0, 0, 800, 600))
    ]


def test_title_block_corner():
    [(cls, box)] = read_det_labels(["1 0.9 0.9 0.2 0.2"], (1000, 1000))
    assert cls is RegionClass.TITLE_BLOCK
    assert box.as_list() == pytest.approx([800, 800, 1000, 1000], abs=1e-9)


@pytest.mark.parametrize(
    "lines, message, line",
    [
        (["3 0.5 0.5 0.1 0.1"], "class 3 out of range", 1),
        (["0 0.5 0.5 0.1 0.1", "", "0 0.5 0.5 0.1"], "expected 5 fields, got 4", 3),
        (["0 0.5 1.5 0.1 0.1"], "out of [0,1]", 1),
        (["0 0.5 nan 0.1 0.1"], "out of [0,1]", 1),
        (["x 0.5 0.5 0.1 0.1"], "not an integer", 1),
        (["0 0.95 0.5 0.2 0.1"], "outside the image", 1),
        (["0 0.5 0.5 0 0.1"], "zero width", 1),
    ],
)
def test_det_errors_name_line(lines, message, line):
    with pytest.raises(LabelFormatError) as exc:
        read_det_labels(lines, (100, 100))
    assert message in exc.value.message
    assert exc.value.line == line
    assert f"line {line}" in str(exc.value)


def test_det_extent_slack():
    # edges at -5e-7 and 1 + 5e-7 are tolerated and clamped
    [(_, box)] = read_det_labels(["0 0.5000005 0.5 1 1"], (100, 100))
    assert box.as_list() == pytest.approx([5e-5, 0, 100, 100], abs=1e-9)


def test_det_predictions_carry_confidence():
    [(cls, _, conf)] = read_det_predictions(["2 0.5 0.5 0.2 0.2 0.75"], (10, 10))
    assert cls is RegionClass.NOTES and conf == 0.75
    with pytest.raises(LabelFormatError, match="confidence"):
        read_det_predictions(["2 0.5 0.5 0.2 0.2 1.5"], (10, 10))


unit_boxes = st.tuples(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1)).map(
    lambda t: (min(t[0], t[1]), min(t[2], t[3]), max(t[0], t[1]), max(t[2], t[3]))
).filter(lambda b: b[2] - b[0] > 1e-6 and b[3] - b[1] > 1e-6)
sizes = st.tuples(st.integers(1, 6000), st.integers(1, 6000))


def _normalized(box: AxisAlignedBox, size) -> list[float]:
    w, h = size
    return [box.center[0] / w, box.center[1] / h, box.width / w, box.height / h]


@given(st.lists(st.tuples(st.sampled_from(list(RegionClass)), unit_boxes), max_size=8), sizes)
def test_det_write_read_round_trip(records, size):
    w, h = size
    boxes = [(c, AxisAlignedBox(x0 * w, y0 * h, x1 * w, y1 * h)) for c, (x0, y0, x1, y1) in records]
    buf = io.StringIO()
    write_det_labels(boxes, size, buf)
    back = read_det_labels(io.StringIO(buf.getvalue()), size)
    assert [c for c, _ in back] == [c for c, _ in boxes]
    for (_, a), (_, b) in zip(boxes, back):
        assert _normalized(b, size) == pytest.approx(_normalized(a, size), abs=1e-9)


# --- oriented labels --------------------------------------------------------


def test_axis_aligned_quad():
    [(cls, obb)] = read_obb_labels(["0 0.1 0.1 0.3 0.1 0.3 0.2 0.1 0.2"], (1000, 1000))
    assert cls is AnnotationClass.MEASURE
    assert obb.as_list() == pytest.approx([200, 150, 200, 100, 0], abs=1e-9)


def test_rotated_quad_fits_quarter_turn():
    # the same 200x100 box turned 45 degrees about (200, 150), corners by hand
    r = math.sqrt(0.5)
    corners = [
        (200 + (-100) * r - (-50) * r, 150 + (-100) * r + (-50) * r),
        (200 + 100 * r - (-50) * r, 150 + 100 * r + (-50) * r),
        (200 + 100 * r - 50 * r, 150 + 100 * r + 50 * r),
        (200 + (-100) * r - 50 * r, 150 + (-100) * r + 50 * r),
    ]
    line = "1 " + " ".join(repr(v / 1000) for p in corners for v in p)
    [(cls, obb)] = read_obb_labels([line], (1000, 1000))
    assert cls is AnnotationClass.GDT
    assert obb.as_list() == pytest.approx([200, 150, 200, 100, math.pi / 4], abs=1e-9)


@pytest.mark.parametrize(
    "line, message",
    [
        ("0 0.1 0.1 0.1 0.1 0.3 0.2 0.1 0.2", "degenerate quadrilateral"),
        ("0 0.1 0.1 0.2 0.2 0.3 0.3 0.4 0.4", "degenerate quadrilateral"),
        ("0 0.1 0.1 0.3 0.1 0.1 0.2 0.3 0.2", "non-convex quadrilateral"),
        ("0 0.1 0.1 0.3 0.1 0.15 0.12 0.1 0.3", "non-convex quadrilateral"),
        ("3 0.1 0.1 0.3 0.1 0.3 0.2 0.1 0.2", "class 3 out of range"),
        ("0 0.1 0.1 0.3 0.1 0.3 0.2 0.1", "expected 9 fields"),
    ],
)
def test_obb_errors(line, message):
    with pytest.raises(LabelFormatError) as exc:
        read_obb_labels(["", line], (100, 100))
    assert message in exc.value.message and exc.value.line == 2


def test_obb_predictions():
    [(_, _, conf)] = read_obb_predictions(["2 0.1 0.1 0.3 0.1 0.3 0.2 0.1 0.2 0.5"], (10, 10))
    assert conf == 0.5


@st.composite
def inner_obbs(draw, size):
    w_img, h_img = size
    w = draw(st.floats(2, min(w_img, h_img) / 3))
    h = draw(st.floats(1, w))
    theta = draw(st.floats(-math.pi, math.pi))
    reach = math.hypot(w, h) / 2
    cx = draw(st.floats(reach, w_img - reach))
    cy = draw(st.floats(reach, h_img - reach))
    return OrientedBox(cx, cy, w, h, theta)


@st.composite
def obb_sets(draw):
    size = draw(st.tuples(st.integers(60, 4000), st.integers(60, 4000)))
    recs = draw(st.lists(st.tuples(st.sampled_from(list(AnnotationClass)), inner_obbs(size)), max_size=6))
    return size, recs


@given(obb_sets())
def test_obb_write_read_recovers_boxes(data):
    size, recs = data
    buf = io.StringIO()
    write_obb_labels(recs, size, buf)
    back = read_obb_labels(io.StringIO(buf.getvalue()), size)
    assert [c for c, _ in back] == [c for c, _ in recs]
    w, h = size
    for (_, a), (_, b) in zip(recs, back):
        na = [(x / w, y / h) for x, y in obb_corners(a)]
        nb = [(x / w, y / h) for x, y in obb_corners(b)]
        assert all(min(math.dist(p, q) for q in nb) <= 1e-9 for p in na)
        assert same_box(a, b, 1e-6)


# --- pairs ------------------------------------------------------------------


def test_pairs_round_trip():
    recs = [
        VlmPairRecord("crops/a.png", "gdt", "⌖|⌀0.1|A"),
        VlmPairRecord("crops/b.png", PairKind.TITLE_BLOCK, json.dumps({"material": "AlMg3"})),
    ]
    buf = io.StringIO()
    write_pairs(recs, buf)
    assert read_pairs(io.StringIO(buf.getvalue())) == recs
    assert json.loads(buf.getvalue().splitlines()[0]) == {"image": "crops/a.png", "kind": "gdt", "ground_truth": "⌖|⌀0.1|A"}


@pytest.mark.parametrize(
    "line, message",
    [
        ('{"image": "a.png", "kind": "view", "ground_truth": "x"}', "view"),
        ('{"image": "", "kind": "gdt", "ground_truth": "x"}', "nonempty"),
        ('{"image": "a.png", "kind": "gdt"}', "ground_truth"),
        ("not json", "invalid JSON"),
    ],
)
def test_pairs_errors(line, message):
    with pytest.raises(LabelFormatError) as exc:
        read_pairs(["", line])
    assert message in exc.value.message and exc.value.line == 2


# --- stats ------------------------------------------------------------------


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


@pytest.fixture
def label_tree(tmp_path):
    _write(tmp_path / "layout" / "d1.txt", "0 0.3 0.3 0.2 0.2\n0 0.6 0.3 0.2 0.2\n1 0.9 0.9 0.1 0.1\n")
    _write(tmp_path / "layout" / "d2.txt", "0 0.3 0.3 0.2 0.2\n1 0.9 0.9 0.1 0.1\n2 0.5 0.9 0.2 0.1\n")
    _write(tmp_path / "layout" / "d3.txt", "1 0.9 0.9 0.1 0.1\n")
    _write(tmp_path / "annotations" / "d1.txt", "0 0.1 0.1 0.3 0.1 0.3 0.2 0.1 0.2\n2 0.1 0.1 0.3 0.1 0.3 0.2 0.1 0.2\n")
    _write(tmp_path / "annotations" / "d3.txt", "")
    return tmp_path


def test_stats_fixture(label_tree):
    stats = compute_stats(label_tree)
    assert stats.region_counts["view"] == 3
    assert stats.region_counts["title_block"] == 3
    assert stats.region_counts["notes"] == 1
    assert dict(stats.per_drawing["d1"]) == {"view": 2, "title_block": 1, "measure": 1, "roughness": 1}
    assert stats.files == 5
    report = stats.to_json()
    assert report["regions"]["total"] == 7
    assert report["annotations"]["counts"] == {"measure": 1, "gdt": 0, "roughness": 1}
    assert report["regions"]["imbalance_ratio"] == 3.0


def test_stats_empty_dir(tmp_path):
    report = compute_stats(tmp_path).to_json()
    assert report["regions"]["counts"] == {"view": 0, "title_block": 0, "notes": 0}
    assert report["annotations"]["total"] == 0
    assert report["regions"]["imbalance_ratio"] is None


def test_stats_error_names_path(label_tree):
    bad = label_tree / "layout" / "d4.txt"
    _write(bad, "0 0.5 0.5 0.1 0.1\n7 0.5 0.5 0.1 0.1\n")
    with pytest.raises(LabelFormatError) as exc:
        compute_stats(label_tree)
    assert exc.value.path == str(bad) and exc.value.line == 2


def test_stats_report_is_deterministic(label_tree, tmp_path_factory):
    out = tmp_path_factory.mktemp("out")
    write_stats(compute_stats(label_tree), out / "a.json")
    write_stats(compute_stats(label_tree), out / "b.json")
    assert (out / "a.json").read_bytes() == (out / "b.json").read_bytes()


def test_stats_merge_is_order_free(label_tree):
    parts = [file_stats(p) for p in sorted(label_tree.rglob("*.txt"))]
    forward, backward = DatasetStats(), DatasetStats()
    for s in parts:
        forward = forward.merge(s)
    for s in reversed(parts):
        backward = s.merge(backward)
    nested = parts[0].merge(parts[1].merge(parts[2])).merge(parts[3].merge(parts[4]))
    assert forward.to_json() == backward.to_json() == nested.to_json()
    assert forward.region_total == sum(s.region_total for s in parts)
    assert forward.annotation_total == sum(s.annotation_total for s in parts)


# --- splits -----------------------------------------------------------------


def test_splitmix_reference_vector():
    # first outputs for seed 0 of the reference generator
    rng = SplitMix64(0)
    assert [rng.next() for _ in range(3)] == [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]


@given(st.integers(0, 2**64 - 1))
def test_splitmix_matches_oracle(seed):
    rng = SplitMix64(seed)
    assert [rng.next() for _ in range(20)] == splitmix64_stream(seed, 20)


def _oracle_shuffle(items, seed):
    out = list(items)
    stream = splitmix64_stream(seed, max(len(out) - 1, 0))
    for k, i in enumerate(range(len(out) - 1, 0, -1)):
        j = stream[k] % (i + 1)
        out[i], out[j] = out[j], out[i]
    return out


@given(st.lists(st.integers(), unique=True, max_size=60), st.integers(0, 2**64 - 1))
def test_shuffle_matches_oracle(items, seed):
    assert shuffled(items, seed) == _oracle_shuffle(items, seed)


@pytest.mark.parametrize(
    "n, ratios, sizes",
    [(10, (0.8, 0.2), [8, 2]), (10, (0.7, 0.2, 0.1), [7, 2, 1]), (1000, (0.7, 0.2, 0.1), [700, 200, 100]), (3, (0.5, 0.5), [1, 2])],
)
def test_split_sizes(n, ratios, sizes):
    assert split_sizes(n, ratios) == sizes
    parts = split_dataset([f"id{i}" for i in range(n)], SplitSpec(ratios, seed=7))
    assert [len(p) for p in parts] == sizes


def test_split_deterministic():
    ids = [f"drawing-{i:03d}" for i in range(100)]
    spec = SplitSpec((0.7, 0.2, 0.1), seed=2024)
    assert split_dataset(ids, spec) == split_dataset(list(ids), spec)
    assert split_dataset(ids, spec) != split_dataset(ids, SplitSpec((0.7, 0.2, 0.1), seed=2025))


ratio_sets = st.lists(st.integers(1, 20), min_size=2, max_size=5).map(lambda ws: tuple(w / sum(ws) for w in ws)).filter(
    lambda rs: abs(math.fsum(rs) - 1) <= 1e-9
)


@given(st.lists(st.text(max_size=5), unique=True, max_size=80), ratio_sets, st.integers(0, 2**64 - 1))
def test_split_partitions(ids, ratios, seed):
    parts = split_dataset(ids, SplitSpec(ratios, seed))
    flat = [x for p in parts for x in p]
    assert sorted(flat) == sorted(ids)
    assert len(parts) == len(ratios)
    assert [len(p) for p in parts] == split_sizes(len(ids), ratios)


@pytest.mark.parametrize(
    "ratios, message",
    [((1.0,), "at least 2"), ((0.5, 0.6), "sum"), ((1.2, -0.2), "positive")],
)
def test_split_spec_errors(ratios, message):
    with pytest.raises(ValueError, match=message):
        SplitSpec(ratios)


def test_split_duplicate_ids():
    with pytest.raises(ValueError, match="duplicate id 'a'"):
        split_dataset(["a", "b", "a"], SplitSpec((0.5, 0.5)))


def _reference_counts() -> dict[str, int]:
    text = (Path(__file__).parents[1] / "docs" / "dataset.md").read_text(encoding="utf-8")
    return {m.group(1): int(m.group(2)) for m in re.finditer(r"\| `(\w+)` \| (\d+) \|", text)}


def test_reference_counts_doc():
    counts = _reference_counts()
    assert counts == {
        "view": 3498, "title_block": 458, "notes": 1127,
        "measure": 9663, "gdt": 3215, "roughness": 152,
    }


def test_reference_counts_stats_report():
    counts = _reference_counts()
    stats = DatasetStats(
        region_counts=Counter({k: counts[k] for k in REGION_KEYS}),
        annotation_counts=Counter({k: counts[k] for k in ANNOTATION_KEYS}),
    )
    report = stats.to_json()
    assert report["regions"]["total"] == 5083
    assert report["annotations"]["total"] == 13030
    assert report["annotations"]["imbalance_ratio"] == pytest.approx(9663 / 152)
    assert report["annotations"]["shares"]["roughness"] == pytest.approx(152 / 13030)
