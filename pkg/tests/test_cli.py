import json

import pytest

from shiftcast.cli import parse_seeds, run

from conftest import GOLDEN_PROMPT, write_csv

TINY_FLAGS = ["--d", "8", "--heads", "2", "--layers", "1", "--ff-width", "16", "--obs", "5",
              "--epochs", "1", "--batch-size", "16", "--lr", "1e-3"]


def call(capsys, *argv):
    code = run(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def data(tmp_path, capsys):
    (tmp_path / "p.json").write_text(json.dumps({"num_pois": 5, "num_categories": 2, "days": 14}))
    code, _, _ = call(capsys, "synth", "--profile", str(tmp_path / "p.json"), "--seed", "3",
                      "--out", str(tmp_path / "d.csv"))
    assert code == 0
    return tmp_path / "d.csv"


def test_parse_seeds():
    assert parse_seeds("0..4") == [0, 1, 2, 3, 4]
    assert parse_seeds("1,5") == [1, 5]
    assert parse_seeds("7") == [7]


def test_synth_deterministic_bytes(tmp_path, capsys):
    (tmp_path / "p.json").write_text(json.dumps({"num_pois": 6, "num_categories": 2, "days": 20}))
    _, a, _ = call(capsys, "synth", "--profile", str(tmp_path / "p.json"), "--seed", "7")
    _, b, _ = call(capsys, "synth", "--profile", str(tmp_path / "p.json"), "--seed", "7")
    assert a == b and a.startswith("poi_id,category,date,visits\n")


def test_synth_writes_manifest(data):
    manifest = json.loads(data.with_name("d.csv.manifest.json").read_text())
    assert manifest["command"] == "synth" and manifest["seeds"] == [3]
    assert manifest["config"]["num_pois"] == 5


def test_stats(data, capsys):
    code, out, _ = call(capsys, "stats", "--data", str(data))
    assert code == 0
    assert set(json.loads(out)) == {"avg_visits", "max_visits", "num_pois", "num_categories"}


def test_build_vocab(data, tmp_path, capsys):
    code, out, _ = call(capsys, "build-vocab", "--data", str(data), "--out", str(tmp_path / "v.json"))
    assert code == 0 and json.loads(out)["size"] > 4


def test_train_eval_attention_and_replay(data, tmp_path, capsys):
    ck = tmp_path / "ck"
    code, out, err = call(capsys, "train", "--data", str(data), "--out", str(ck), *TINY_FLAGS)
    assert code == 0, err
    assert json.loads(out)["best_epoch"] == 1
    names = {p.name for p in ck.iterdir()}
    assert {"manifest.json", "model.bin", "model.json", "vocab.json", "report.jsonl",
            "training.svg"} <= names
    manifest = json.loads((ck / "manifest.json").read_text())
    assert manifest["config"]["model"]["d"] == 8 and len(manifest["inputs"]["data"]) == 64

    code, out, _ = call(capsys, "eval", "--checkpoint", str(ck), "--data", str(data), "--baselines")
    result = json.loads(out)
    assert code == 0 and result["row"].startswith("| SHIFT |")
    assert set(result["baselines"]) == {"naive", "LR"}

    code, out, _ = call(capsys, "attention", "--checkpoint", str(ck), "--data", str(data),
                        "--out", str(tmp_path / "a.json"), "--svg")
    assert code == 0 and (tmp_path / "a.svg").exists()

    replay = tmp_path / "replay"
    code, _, _ = call(capsys, "train", "--data", str(data), "--config", str(ck / "manifest.json"),
                      "--out", str(replay))
    assert code == 0
    for name in ("model.bin", "model.json", "report.jsonl", "vocab.json", "manifest.json"):
        assert (ck / name).read_bytes() == (replay / name).read_bytes()


def test_flag_overrides_config_file(data, tmp_path, capsys):
    (tmp_path / "c.json").write_text(json.dumps({"train": {"seed": 5, "lr": 0.5}}))
    code, _, _ = call(capsys, "train", "--data", str(data), "--out", str(tmp_path / "ck"),
                      "--config", str(tmp_path / "c.json"), *TINY_FLAGS)
    cfg = json.loads((tmp_path / "ck" / "manifest.json").read_text())["config"]
    assert code == 0 and cfg["train"]["seed"] == 5 and cfg["train"]["lr"] == 1e-3


def test_predict_golden_prompt(tmp_path, capsys, monkeypatch):
    rows = []
    for poi, cat, values in ((81, "Optical Goods Store", (42, 32, 29, 21)),
                             (7, "Bakery", (5, 9, 11, 6)), (24, "Museum", (30, 28, 26, 24))):
        rows += [(poi, cat, f"2020-08-{26 + i}", v) for i, v in enumerate(values)]
    data = write_csv(tmp_path / "t.csv", rows)
    ck = tmp_path / "ck"
    code, _, err = call(capsys, "train", "--data", str(data), "--out", str(ck), "--obs", "3",
                        "--ratios", "1,0,0", "--epochs", "150", "--lr", "3e-3", "--dropout", "0",
                        "--d", "32", "--heads", "2", "--layers", "1", "--ff-width", "64",
                        "--batch-size", "4")
    assert code == 0, err
    import io

    monkeypatch.setattr("sys.stdin", io.StringIO(GOLDEN_PROMPT + "\n"))
    code, out, _ = call(capsys, "predict", "--checkpoint", str(ck))
    assert code == 0
    assert out == "there will be 21 people visiting POI 81.\n21\n"


def test_render_verbatim(tmp_path, capsys):
    data = write_csv(tmp_path / "t.csv", [(81, "Optical Goods Store", f"2020-08-{26 + i}", v)
                                          for i, v in enumerate((42, 32, 29, 21))])
    _, out, _ = call(capsys, "render", "--data", str(data), "--obs", "3")
    assert json.loads(out)["prompt"] == GOLDEN_PROMPT
    _, out, _ = call(capsys, "render", "--data", str(data), "--obs", "3", "--verbatim-article")
    assert " is a Optical Goods Store." in json.loads(out)["prompt"]


def test_ablate_and_sweep(data, tmp_path, capsys):
    code, out, _ = call(capsys, "ablate", "--data", str(data), "--out", str(tmp_path / "ab"),
                        "--seeds", "0..1", *TINY_FLAGS)
    result = json.loads(out)
    assert code == 0 and len(result["rmse"]) == 5 and len(result["rmse"][0]) == 2
    assert (tmp_path / "ab" / "ablation.svg").exists()
    assert (tmp_path / "ab" / "ablation.md").read_text().startswith("| Method |")
    code, out, _ = call(capsys, "sweep", "--data", str(data), "--out", str(tmp_path / "sw"),
                        "--param", "alpha_loss", "--values", "0.01,0.5", "--seeds", "0",
                        *TINY_FLAGS)
    assert code == 0 and json.loads(out)["values"] == [0.01, 0.5]
    assert (tmp_path / "sw" / "sweep.svg").exists()


def test_errors_are_structured(tmp_path, capsys):
    code, out, err = call(capsys, "stats", "--data", str(tmp_path / "missing.csv"))
    assert code == 1 and out == ""
    assert json.loads(err.strip().splitlines()[-1])["error"] == "FileNotFoundError"
    bad = write_csv(tmp_path / "bad.csv", [(1, "Bar", "2020-01-01", "many")])
    code, _, err = call(capsys, "stats", "--data", str(bad))
    assert code == 1 and json.loads(err.strip().splitlines()[-1])["error"] == "MalformedRow"


def test_usage_error_exit_code(capsys):
    with pytest.raises(SystemExit) as exc:
        run(["train"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        run(["frobnicate"])
    assert exc.value.code == 2
