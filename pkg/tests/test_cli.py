from __future__ import annotations

import io
import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from engdraw.annoparse import parse_annotation
from engdraw.cli import build_parser, extraction_fields, main
from engdraw.geometry import AxisAlignedBox, OrientedBox
from engdraw.schema import AnnotationRecord, TitleBlockFields, UnifiedDrawing, ViewRecord, serialize_unified

FIXTURES = Path(__file__).parent / "fixtures" / "run"


def run_cli(*argv: str) -> tuple[int, str, str]:
    out, err = io.StringIO(), io.StringIO()
    code = main(list(argv), out, err)
    return code, out.getvalue(), err.getvalue()


# --- run -------------------------------------------------------------------------


@pytest.mark.parametrize("workers", ["1", "4"])
def test_run_matches_goldens(tmp_path, workers):
    code, out, err = run_cli(
        "run", "--input", str(FIXTURES), "--replay", str(FIXTURES / "replay.json"), "--out", str(tmp_path), "--workers", workers
    )
    assert code == 0 and err == ""
    assert [l.split(":")[0] for l in out.splitlines()] == ["d01", "d02", "d03"]
    for golden in sorted((FIXTURES / "golden").glob("*.json")):
        assert (tmp_path / golden.name).read_bytes() == golden.read_bytes()


def test_run_twice_is_byte_identical(tmp_path):
    args = ["run", "--input", str(FIXTURES), "--replay", str(FIXTURES / "replay.json")]
    assert run_cli(*args, "--out", str(tmp_path / "a"))[0] == 0
    assert run_cli(*args, "--out", str(tmp_path / "b"))[0] == 0
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_run_stamp_is_opt_in(tmp_path):
    args = ["run", "--input", str(FIXTURES), "--replay", str(FIXTURES / "replay.json"), "--out", str(tmp_path)]
    assert run_cli(*args, "--stamp")[0] == 0
    assert "generated_at" in json.loads((tmp_path / "d01.unified.json").read_bytes())["extra"]


def test_run_missing_manifest(tmp_path):
    missing = tmp_path / "nope.json"
    code, _, err = run_cli("run", "--input", str(FIXTURES), "--replay", str(missing), "--out", str(tmp_path))
    assert code == 2 and str(missing) in err


def test_run_manifest_covering_nothing(tmp_path):
    empty = tmp_path / "replay.json"
    empty.write_text('{"drawings": {}}')
    code, out, err = run_cli("run", "--input", str(FIXTURES), "--replay", str(empty), "--out", str(tmp_path / "o"))
    assert code == 1
    assert len([l for l in err.splitlines() if l.startswith("error:") and "aborted" in l]) == 3
    assert not (tmp_path / "o").exists() or not any((tmp_path / "o").iterdir())


def test_run_bad_config(tmp_path):
    cfg = tmp_path / "pipeline.toml"
    cfg.write_text("unknown_key = 1\n")
    args = ["run", "--input", str(FIXTURES), "--replay", str(FIXTURES / "replay.json"), "--out", str(tmp_path)]
    code, _, err = run_cli(*args, "--config", str(cfg))
    assert code == 1 and "unknown_key" in err
    code, _, err = run_cli(*args, "--config", str(tmp_path / "absent.toml"))
    assert code == 2 and "absent.toml" in err


def test_run_config_changes_output(tmp_path):
    cfg = tmp_path / "pipeline.toml"
    cfg.write_text("min_confidence = 0.05\n")
    code, _, _ = run_cli(
        "run", "--input", str(FIXTURES), "--replay", str(FIXTURES / "replay.json"), "--out", str(tmp_path / "o"), "--config", str(cfg)
    )
    assert code == 0
    d01 = json.loads((tmp_path / "o" / "d01.unified.json").read_bytes())
    # the low-confidence notes region is now read as well
    assert len(d01["notes"]) == 2


def test_run_missing_input(tmp_path):
    code, _, err = run_cli("run", "--input", str(tmp_path / "x"), "--replay", str(FIXTURES / "replay.json"), "--out", str(tmp_path))
    assert code == 2 and err.startswith("error:")


# --- parse ----------------------------------------------------------------------------


def test_parse_gdt():
    code, out, _ = run_cli("parse", "--class", "gdt", "⌖|⌀0.1|A|B|C")
    obj = json.loads(out)
    assert code == 0
    assert obj["record"]["characteristic"] == "position" and obj["record"]["diametral"] is True
    assert [d["label"] for d in obj["record"]["datums"]] == ["A", "B", "C"]
    assert out.endswith("}\n")


def test_parse_radius():
    code, out, _ = run_cli("parse", "--class", "measure", "R5")
    assert code == 0 and json.loads(out)["record"]["kind"] == "radius"


def test_parse_rejection():
    code, out, err = run_cli("parse", "--class", "roughness", "Rx 1")
    assert code == 1 and out == ""
    assert "offset 0" in err and "unknown roughness parameter" in err


def test_parse_unknown_class_is_usage_error(capsys):
    code, _, _ = run_cli("parse", "--class", "thread", "M8")
    assert code == 2
    assert "invalid choice" in capsys.readouterr().err


# --- stats / split ------------------------------------------------------------------------


def test_stats(tmp_path):
    (tmp_path / "layout").mkdir()
    (tmp_path / "layout" / "a.txt").write_text("0 0.5 0.5 0.2 0.2\n1 0.8 0.9 0.1 0.1\n")
    (tmp_path / "ann").mkdir()
    (tmp_path / "ann" / "a.txt").write_text("2 0.1 0.1 0.2 0.1 0.2 0.2 0.1 0.2\n")
    code, out, _ = run_cli("stats", "--input", str(tmp_path))
    report = json.loads(out)
    assert code == 0
    assert report["regions"]["counts"] == {"view": 1, "title_block": 1, "notes": 0}
    assert report["annotations"]["counts"]["roughness"] == 1
    assert report["per_drawing"]["a"]["roughness"] == 1


def test_stats_bad_label(tmp_path):
    (tmp_path / "a.txt").write_text("0 0.5 0.5 0.2 0.2\n0 1.5 0.5 0.2 0.2\n")
    code, _, err = run_cli("stats", "--input", str(tmp_path))
    assert code == 1 and "line 2" in err


def test_split_sizes_and_stability(tmp_path):
    ids = tmp_path / "ids.txt"
    ids.write_text("".join(f"dwg-{i:02d}\n" for i in range(10)))
    first = run_cli("split", "--input", str(ids), "--ratios", "0.7,0.2,0.1", "--seed", "42")
    second = run_cli("split", "--input", str(ids), "--ratios", "0.7,0.2,0.1", "--seed", "42")
    assert first == second and first[0] == 0
    report = json.loads(first[1])
    assert report["sizes"] == [7, 2, 1]
    assert sorted(sum(report["parts"], [])) == [f"dwg-{i:02d}" for i in range(10)]


def test_split_writes_file(tmp_path):
    ids = tmp_path / "ids.txt"
    ids.write_text("a\nb\n\nc\n")
    out = tmp_path / "split.json"
    code, stdout, _ = run_cli("split", "--input", str(ids), "--ratios", "0.5,0.5", "--out", str(out))
    assert code == 0 and stdout == ""
    assert json.loads(out.read_bytes())["sizes"] == [1, 2]


@pytest.mark.parametrize("ratios, code", [("0.7,0.2", 1), ("1.0", 1), ("a,b", 2)])
def test_split_bad_ratios(tmp_path, ratios, code):
    ids = tmp_path / "ids.txt"
    ids.write_text("a\nb\n")
    assert run_cli("split", "--input", str(ids), "--ratios", ratios)[0] == code


def test_split_duplicate_ids(tmp_path):
    ids = tmp_path / "ids.txt"
    ids.write_text("a\na\n")
    code, _, err = run_cli("split", "--input", str(ids), "--ratios", "0.5,0.5")
    assert code == 1 and "duplicate" in err


# --- eval-detect ---------------------------------------------------------------------------


def _labels(root: Path, files: dict[str, str]) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (root / f"{name}.txt").write_text(text)
    return root


LAYOUT = {
    "a": "0 0.3 0.3 0.4 0.4\n1 0.8 0.85 0.3 0.2\n",
    "b": "0 0.5 0.5 0.6 0.6\n2 0.2 0.9 0.3 0.1\n",
}


def test_eval_detect_identity(tmp_path):
    gts = _labels(tmp_path / "gts", LAYOUT)
    code, out, _ = run_cli("eval-detect", "--preds", str(gts), "--gts", str(gts))
    report = json.loads(out)
    assert code == 0
    for row in report["rows"]:
        assert (row["precision"], row["recall"], row["f1"], row["hallucination"]) == (1.0, 1.0, 1.0, 0.0)
    assert [r["name"] for r in report["rows"]] == ["Views", "Title Block", "Notes", "Layout Overall"]
    assert report["config"]["iou_kind"] == "axis_aligned"
    cm = report["confusion"]["regions"]
    assert cm["normalized"][0][0] == 1.0 and cm["no_support"] == ["background"]


def test_eval_detect_scored_predictions_and_csv(tmp_path):
    gts = _labels(tmp_path / "gts", {"a": "0 0.3 0.3 0.4 0.4\n"})
    preds = _labels(tmp_path / "preds", {"a": "0 0.3 0.3 0.4 0.4 0.9\n0 0.8 0.8 0.1 0.1 0.4\n"})
    code, out, _ = run_cli("eval-detect", "--preds", str(preds), "--gts", str(gts), "--format", "csv")
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "Category,Precision,Recall,F1 Score,Hallucination,TP,FP,FN"
    assert lines[1] == "Views,0.5,1.0,0.6666666666666666,0.5,1,1,0"


def test_eval_detect_obb_defaults_to_oriented(tmp_path):
    gts = _labels(tmp_path / "gts", {"a": "0 0.1 0.1 0.3 0.1 0.3 0.2 0.1 0.2\n"})
    code, out, _ = run_cli("eval-detect", "--preds", str(gts), "--gts", str(gts), "--image-size", "640x480")
    report = json.loads(out)
    assert code == 0 and report["config"]["iou_kind"] == "oriented"
    assert report["rows"][0]["name"] == "Measures"


def test_eval_detect_mixed_formats(tmp_path):
    gts = _labels(tmp_path / "gts", {"a": LAYOUT["a"]})
    preds = _labels(tmp_path / "preds", {"a": "0 0.1 0.1 0.3 0.1 0.3 0.2 0.1 0.2\n"})
    code, _, err = run_cli("eval-detect", "--preds", str(preds), "--gts", str(gts))
    assert code == 1 and "mixed" in err


def test_eval_detect_threshold_range(tmp_path):
    gts = _labels(tmp_path / "gts", LAYOUT)
    code, _, err = run_cli("eval-detect", "--preds", str(gts), "--gts", str(gts), "--iou-threshold", "0")
    assert code == 2 and "iou_threshold" in err


def test_eval_detect_scored_truth_rejected(tmp_path):
    gts = _labels(tmp_path / "gts", {"a": "0 0.3 0.3 0.4 0.4 0.9\n"})
    code, _, err = run_cli("eval-detect", "--preds", str(gts), "--gts", str(gts))
    assert code == 1 and "confidences" in err


# --- eval-parse ----------------------------------------------------------------------------


def _doc(drawing_id: str, measure_texts: list[str], title: TitleBlockFields | None = None, notes=()) -> UnifiedDrawing:
    anns = []
    for i, text in enumerate(measure_texts):
        obb = OrientedBox(10 + (i % 50) * 10, 10 + (i // 50) * 20, 8, 6)
        anns.append(AnnotationRecord("measure", obb, 0.9, text, parse_annotation("measure", text)))
    view = ViewRecord("view-1", AxisAlignedBox(0, 0, 600, 600), anns)
    return UnifiedDrawing(drawing_id, f"{drawing_id}.png", (800, 800), title or TitleBlockFields(), notes, [view])


def test_eval_parse_realizes_reference_measures_row(tmp_path):
    # 108 correct, 17 invented, 1 missed: P = 108/125, R = 108/109
    truth = [str(10 + i) for i in range(109)]
    pred = truth[:108] + [f"R{i + 1}" for i in range(17)]
    (tmp_path / "gt.json").write_bytes(serialize_unified(_doc("d", truth)))
    (tmp_path / "pred.json").write_bytes(serialize_unified(_doc("d", pred)))
    code, out, _ = run_cli("eval-parse", "--preds", str(tmp_path / "pred.json"), "--gts", str(tmp_path / "gt.json"))
    assert code == 0
    [measures, overall] = json.loads(out)["rows"]
    assert measures["name"] == "Measures" and measures["counts"] == {"tp": 108, "fp": 17, "fn": 1}
    assert round(measures["precision"], 3) == 0.864
    assert round(measures["recall"], 3) == 0.991
    assert round(measures["f1"], 3) == 0.923
    assert overall["name"] == "Numerical Overall" and overall["f1"] == measures["f1"]


def test_eval_parse_directories_and_alphabetical_rows(tmp_path):
    (tmp_path / "p").mkdir()
    (tmp_path / "g").mkdir()
    gt = _doc("d", ["R5"], TitleBlockFields(part_name="Shaft", material="Steel"), ["Deburr."])
    pred = _doc("d", ["R5"], TitleBlockFields(part_name="SHAFT", material="Brass"), ["Deburr."])
    (tmp_path / "g" / "d.unified.json").write_bytes(serialize_unified(gt))
    (tmp_path / "p" / "d.unified.json").write_bytes(serialize_unified(pred))
    code, out, _ = run_cli("eval-parse", "--preds", str(tmp_path / "p"), "--gts", str(tmp_path / "g"))
    rows = {r["name"]: r for r in json.loads(out)["rows"]}
    assert code == 0
    assert rows["Title Block"]["counts"] == {"tp": 1, "fp": 1, "fn": 1}
    assert rows["Notes"]["f1"] == 1.0
    assert list(rows) == ["Title Block", "Notes", "Alphabetical Overall", "Measures", "Numerical Overall"]


def test_extraction_fields_uses_canonical_text():
    doc = _doc("d", ["R 5"])
    assert extraction_fields(doc)["Measures"] == [("measure", "R5")]


def test_eval_parse_rejects_invalid_json(tmp_path):
    (tmp_path / "bad.json").write_text("{")
    code, _, err = run_cli("eval-parse", "--preds", str(tmp_path / "bad.json"), "--gts", str(tmp_path / "bad.json"))
    assert code == 1 and "byte" in err


# --- validate ---------------------------------------------------------------------------------


def test_validate_goldens():
    paths = [str(p) for p in sorted((FIXTURES / "golden").glob("*.json"))]
    code, out, err = run_cli("validate", *paths)
    assert code == 0 and err == "" and out.count(": valid") == 3


def test_validate_reports_violation_path(tmp_path):
    obj = json.loads((FIXTURES / "golden" / "d01.unified.json").read_bytes())
    obj["views"][0]["annotations"][0]["confidence"] = 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(obj))
    code, out, err = run_cli("validate", str(bad))
    assert code == 1 and "views[0].annotations[0].confidence" in err and out == ""


def test_validate_missing_file(tmp_path):
    code, _, err = run_cli("validate", str(tmp_path / "x.json"))
    assert code == 2 and "x.json" in err


def test_validate_overlap_is_info_only(tmp_path):
    a = ViewRecord("view-1", AxisAlignedBox(0, 0, 60, 60))
    b = ViewRecord("view-2", AxisAlignedBox(50, 50, 100, 100))
    path = tmp_path / "o.json"
    path.write_bytes(serialize_unified(UnifiedDrawing("o", "o.png", (100, 100), views=[a, b])))
    code, out, err = run_cli("validate", str(path))
    assert code == 0 and "info:" in err and "view.overlap" in err and ": valid" in out


# --- general -----------------------------------------------------------------------------------


def test_every_subcommand_documents_its_flags():
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    assert set(sub.choices) == {"run", "parse", "stats", "split", "eval-detect", "eval-parse", "validate"}
    for name, p in sub.choices.items():
        text = p.format_help()
        for action in p._actions:
            for flag in action.option_strings:
                assert flag in text, (name, flag)
            if action.default not in (None, False, "==SUPPRESS==") and action.option_strings and action.dest != "help":
                assert action.help, (name, action.dest)
                assert f"(default: {action.default})" in " ".join(text.split()), (name, action.dest)


def test_help_exits_zero(capsys):
    assert main(["run", "--help"]) == 0
    assert "--workers" in capsys.readouterr().out


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "engdraw", "parse", "--class", "measure", "⌀10 ±0.1"],
        capture_output=True,
        check=False,
    )
    assert proc.returncode == 0
    assert json.loads(proc.stdout.decode("utf-8"))["canonical"] == "⌀10 ±0.1"


def test_no_subcommand_is_usage_error(capsys):
    assert main([]) == 2
    assert capsys.readouterr().err


def test_copied_fixture_tree_reproduces_goldens(tmp_path):
    # outputs depend only on content, not on where the inputs live
    shutil.copytree(FIXTURES / "images", tmp_path / "in" / "images")
    code, _, _ = run_cli("run", "--input", str(tmp_path / "in"), "--replay", str(FIXTURES / "replay.json"), "--out", str(tmp_path / "o"))
    assert code == 0
    assert (tmp_path / "o" / "d02.unified.json").read_bytes() == (FIXTURES / "golden" / "d02.unified.json").read_bytes()
