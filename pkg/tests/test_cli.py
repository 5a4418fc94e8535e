import json
import string

import pytest

import dreamground
from dreamground.cli import main

_SENTENCE = "The demonstration against the war turned violent."


@pytest.fixture
def workspace(tmp_path):
    (tmp_path / "ontology.json").write_text(
        json.dumps(
            [
                {"name": "Attack"},
                {"name": "Demonstrate", "definition": "a public protest"},
            ]
        ),
        encoding="utf-8",
    )
    dataset = [
        {
            "id": "d0",
            "text": _SENTENCE,
            "mentions": [
                {"event_type": "Demonstrate", "trigger": "demonstration"},
                {"event_type": "Attack", "trigger": "war"},
            ],
        },
        {"id": "d1", "text": "?!?", "mentions": []},
    ]
    (tmp_path / "dataset.jsonl").write_text(
        "\n".join(json.dumps(row) for row in dataset) + "\n", encoding="utf-8"
    )
    (tmp_path / "vocab.json").write_text(
        json.dumps({"tokens": list(dict.fromkeys(string.printable))}), encoding="utf-8"
    )
    fixture = {
        "chat": [
            {
                "match": "increase the coverage",
                "reply": '[["Protest","demonstration"],["War","war"]]',
            },
            {"match": ['word "war"'], "reply": "No"},
        ],
        "default_reply": "Yes",
        "logits": [{"target": '[["Demonstrate","demonstration"],["Attack","war"]]'}],
    }
    (tmp_path / "fixture.json").write_text(json.dumps(fixture), encoding="utf-8")
    (tmp_path / "backend.json").write_text(
        json.dumps(
            {
                "vocab": {"file": "vocab.json", "mode": "CHAR"},
                "chat": {"kind": "scripted", "fixture": "fixture.json"},
                "logits": {"kind": "scripted", "fixture": "fixture.json"},
            }
        ),
        encoding="utf-8",
    )
    return tmp_path


def _run(workspace, out_name, *extra):
    return main(
        [
            "run",
            "--dataset",
            str(workspace / "dataset.jsonl"),
            "--ontology",
            str(workspace / "ontology.json"),
            "--backend-config",
            str(workspace / "backend.json"),
            "--out",
            str(workspace / out_name),
            *extra,
        ]
    )


def _rows(path):
    return {
        row["id"]: row
        for row in (json.loads(line) for line in path.read_text().splitlines() if line)
    }


def _prediction_bytes(out_dir):
    return {p.name: p.read_bytes() for p in sorted(out_dir.glob("predictions_run*.jsonl"))}


# --- run ---------------------------------------------------------------------------


def test_run_writes_predictions_and_manifest(workspace, capsys):
    rc = _run(
        workspace, "out", "--temperature", "0", "--runs", "2", "--seed", "3",
        "--verbose-trace",
    )
    assert rc == 0
    out = workspace / "out"
    assert (out / "manifest.json").exists()

    rows = _rows(out / "predictions_run0.jsonl")
    assert set(rows) == {"d0", "d1"}
    assert rows["d0"]["mentions"] == [
        {"event_type": "Demonstrate", "trigger": "demonstration"}
    ]
    assert rows["d1"]["mentions"] == []

    trace = rows["d0"]["trace"]
    assert trace["dreamer"] == [["Protest", "demonstration"], ["War", "war"]]
    assert trace["grounder"] == [
        ["Demonstrate", "demonstration"],
        ["Attack", "war"],
    ]
    verdicts = {v["trigger"]: v["accepted"] for v in trace["judge"]}
    assert verdicts == {"demonstration": True, "war": False}

    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["tool"] == "dreamground"
    assert manifest["version"] == dreamground.__version__
    assert manifest["config"]["temperature"] == 0.0
    assert manifest["seeds"] == [3, 4]
    assert manifest["predictions"] == ["predictions_run0.jsonl", "predictions_run1.jsonl"]
    assert manifest["backends"]["chat"]["supports_chat"] is True
    assert manifest["backends"]["logits"]["supports_logits"] is True

    stdout = capsys.readouterr().out
    assert "run 0: 2 documents" in stdout
    assert "manifest ->" in stdout


def test_run_defaults_recorded_in_manifest(workspace):
    assert _run(workspace, "out") == 0
    manifest = json.loads((workspace / "out" / "manifest.json").read_text())
    config = manifest["config"]
    assert config["temperature"] == 0.4
    assert config["top_p"] == 0.9
    assert config["runs"] == 3
    assert config["style"] == "DICORE"
    assert config["judge"] is True
    assert config["policy"] == "SINGLE_WORD"
    assert manifest["seeds"] == [0, 1, 2]
    assert len(list((workspace / "out").glob("predictions_run*.jsonl"))) == 3


def test_run_is_reproducible(workspace):
    assert _run(workspace, "a", "--runs", "2", "--seed", "9") == 0
    assert _run(workspace, "b", "--runs", "2", "--seed", "9") == 0
    assert _prediction_bytes(workspace / "a") == _prediction_bytes(workspace / "b")


def test_run_parallel_matches_serial(workspace):
    assert _run(workspace, "serial", "--runs", "2") == 0
    assert _run(workspace, "parallel", "--runs", "2", "--jobs", "2") == 0
    assert _prediction_bytes(workspace / "serial") == _prediction_bytes(
        workspace / "parallel"
    )


# --- eval --------------------------------------------------------------------------


def test_eval_writes_reports_and_figures(workspace, capsys):
    assert _run(workspace, "out", "--temperature", "0", "--runs", "2") == 0
    out = workspace / "out"
    report_dir = workspace / "report"
    rc = main(
        [
            "eval",
            "--gold",
            str(workspace / "dataset.jsonl"),
            "--pred",
            str(out / "predictions_run0.jsonl"),
            "--pred",
            str(out / "predictions_run1.jsonl"),
            "--out",
            str(report_dir),
        ]
    )
    assert rc == 0

    stdout = capsys.readouterr().out
    assert "runs: 2" in stdout
    assert "Average" in stdout

    payload = json.loads((report_dir / "report.json").read_text())
    assert set(payload) == {"aggregate", "per_run"}
    assert len(payload["per_run"]) == 2
    aggregate = payload["aggregate"]
    assert aggregate["runs"] == 2
    # d0: one of two triggers found; d1: nothing to find, nothing predicted
    assert aggregate["datasets"]["dataset"]["TI"]["f1"] == pytest.approx(2 / 3)
    assert aggregate["average"]["TC"]["f1"] == pytest.approx(2 / 3)

    table = (report_dir / "report.txt").read_text()
    assert table.startswith("runs: 2")
    csv_text = (report_dir / "report.csv").read_text()
    assert csv_text.splitlines()[0] == "dataset,metric,precision,recall,f1,tp,fp,fn"
    for name in ("report_f1.png", "report_precision_recall.png"):
        assert (report_dir / name).stat().st_size > 1000


def test_eval_can_skip_figures(workspace):
    assert _run(workspace, "out", "--runs", "1") == 0
    report_dir = workspace / "report"
    rc = main(
        [
            "eval",
            "--gold",
            str(workspace / "dataset.jsonl"),
            "--pred",
            str(workspace / "out" / "predictions_run0.jsonl"),
            "--out",
            str(report_dir),
            "--no-figures",
        ]
    )
    assert rc == 0
    assert (report_dir / "report.csv").exists()
    assert list(report_dir.glob("*.png")) == []


def test_eval_dataset_name_mismatch(workspace, capsys):
    rc = main(
        [
            "eval",
            "--gold",
            f"a={workspace / 'dataset.jsonl'}",
            "--pred",
            f"b={workspace / 'dataset.jsonl'}",
        ]
    )
    assert rc == 2
    assert capsys.readouterr().err.startswith("ERROR:SHAPE_MISMATCH:")


def test_eval_missing_prediction_file(workspace, capsys):
    rc = main(
        [
            "eval",
            "--gold",
            str(workspace / "dataset.jsonl"),
            "--pred",
            str(workspace / "nothing.jsonl"),
        ]
    )
    assert rc == 2
    assert capsys.readouterr().err.startswith("ERROR:IO_FAILURE:")


# --- fsm ---------------------------------------------------------------------------


def test_fsm_reports_and_enumerates(workspace, capsys):
    (workspace / "ab.json").write_text(json.dumps([{"name": "A"}, {"name": "B"}]))
    rc = main(
        [
            "fsm",
            "--sentence",
            "x",
            "--ontology",
            str(workspace / "ab.json"),
            "--vocab",
            str(workspace / "vocab.json"),
            "--vocab-mode",
            "CHAR",
            "--max-mentions",
            "2",
            "--enumerate",
            "21",
        ]
    )
    assert rc == 0
    stdout = capsys.readouterr().out
    assert "states: " in stdout and "transitions: " in stdout
    assert "candidates: 1" in stdout
    assert "max_mentions: 2" in stdout
    assert "build_seconds: " in stdout
    assert "language (<= 21 tokens): 7 strings" in stdout
    expected = sorted(
        [
            "[]",
            '[["A","x"]]',
            '[["B","x"]]',
            '[["A","x"],["A","x"]]',
            '[["A","x"],["B","x"]]',
            '[["B","x"],["A","x"]]',
            '[["B","x"],["B","x"]]',
        ]
    )
    tail = [line for line in stdout.splitlines() if line.startswith("[")]
    assert tail == expected


def test_fsm_dump_lists_states(workspace, capsys):
    (workspace / "ab.json").write_text(json.dumps([{"name": "A"}]))
    rc = main(
        [
            "fsm",
            "--sentence",
            "x",
            "--ontology",
            str(workspace / "ab.json"),
            "--vocab",
            str(workspace / "vocab.json"),
            "--vocab-mode",
            "CHAR",
            "--max-mentions",
            "1",
            "--dump",
        ]
    )
    assert rc == 0
    stdout = capsys.readouterr().out
    assert "state 0 [PREAMBLE]" in stdout
    assert "(accept)" in stdout
    assert "-->" in stdout


# --- error reporting ----------------------------------------------------------------


def test_missing_ontology_reports_io_failure(workspace, capsys):
    rc = main(
        [
            "fsm",
            "--sentence",
            "x",
            "--ontology",
            str(workspace / "absent.json"),
            "--vocab",
            str(workspace / "vocab.json"),
        ]
    )
    assert rc == 2
    assert capsys.readouterr().err.startswith("ERROR:IO_FAILURE:")


def test_malformed_ontology_reported(workspace, capsys):
    (workspace / "bad.json").write_text("{}")
    rc = main(
        [
            "fsm",
            "--sentence",
            "x",
            "--ontology",
            str(workspace / "bad.json"),
            "--vocab",
            str(workspace / "vocab.json"),
        ]
    )
    assert rc == 2
    assert capsys.readouterr().err.startswith("ERROR:MALFORMED_ONTOLOGY:")


def test_unencodable_ontology_reported(workspace, capsys):
    (workspace / "wide.json").write_text(
        json.dumps([{"name": "Ωmega"}]), encoding="utf-8"
    )
    rc = main(
        [
            "fsm",
            "--sentence",
            "x",
            "--ontology",
            str(workspace / "wide.json"),
            "--vocab",
            str(workspace / "vocab.json"),
            "--vocab-mode",
            "CHAR",
        ]
    )
    assert rc == 2
    assert capsys.readouterr().err.startswith("ERROR:VOCAB_CANNOT_ENCODE:")


def test_invalid_run_count_reported_as_config(workspace, capsys):
    rc = _run(workspace, "out", "--runs", "0")
    assert rc == 2
    assert capsys.readouterr().err.startswith("ERROR:CONFIG:")


def test_missing_chat_backend_reported_as_config(workspace, capsys):
    (workspace / "logits_only.json").write_text(
        json.dumps(
            {
                "vocab": {"file": "vocab.json", "mode": "CHAR"},
                "logits": {"kind": "scripted", "fixture": "fixture.json"},
            }
        )
    )
    rc = main(
        [
            "run",
            "--dataset",
            str(workspace / "dataset.jsonl"),
            "--ontology",
            str(workspace / "ontology.json"),
            "--backend-config",
            str(workspace / "logits_only.json"),
            "--out",
            str(workspace / "out"),
        ]
    )
    assert rc == 2
    assert capsys.readouterr().err.startswith("ERROR:CONFIG:")


def test_unknown_backend_kind_reported(workspace, capsys):
    (workspace / "odd.json").write_text(json.dumps({"chat": {"kind": "psychic"}}))
    rc = main(
        [
            "run",
            "--dataset",
            str(workspace / "dataset.jsonl"),
            "--ontology",
            str(workspace / "ontology.json"),
            "--backend-config",
            str(workspace / "odd.json"),
            "--out",
            str(workspace / "out"),
        ]
    )
    assert rc == 2
    assert capsys.readouterr().err.startswith("ERROR:CONFIG:")


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert "dreamground" in capsys.readouterr().out
