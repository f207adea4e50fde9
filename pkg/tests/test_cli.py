import json
import re

import pytest

from fpan.cli import main


NET_CFG = {"layers": [{"channels": 4}, {"channels": 8}],
           "input_size": 32, "query_size": 28}


@pytest.fixture(scope="module")
def arts(tmp_path_factory):
    """Shared artifacts: a tiny dataset, sequence, and trained checkpoint."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert main(["gen-data", "--out", str(data), "--n-images", "6",
                 "--image-size", "32", "--min-digits", "1",
                 "--noise", "0.02", "--seed", "3"]) == 0
    seq_spec = root / "seq.json"
    seq_spec.write_text(json.dumps({
        "kind": "sequence", "length": 4, "velocity": [2.0, 0.0],
        "n_images": 1, "image_size": 32, "min_digits": 1,
        "noise_density": 0.0, "seed": 5}))
    seq = root / "seq"
    assert main(["gen-data", "--spec", str(seq_spec), "--out", str(seq)]) == 0
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps({
        "network": NET_CFG,
        "train": {"steps": 3, "batch_size": 2, "lr": 0.001, "log_every": 1}}))
    ckpt = root / "model.ckpt"
    assert main(["train", "--data", str(data), "--config", str(cfg),
                 "--out", str(ckpt)]) == 0
    return {"root": root, "data": data, "seq": seq, "cfg": cfg, "ckpt": ckpt}


def test_gen_data_artifacts(arts):
    data = arts["data"]
    assert (data / "manifest.jsonl").exists()
    assert len(list(data.glob("img_*.ppm"))) == 6
    assert len(list(data.glob("qry_*.ppm"))) == 6
    spec = json.loads((data / "spec.json").read_text())
    assert spec["seed"] == 3 and spec["image_size"] == 32
    seq_meta = json.loads((arts["seq"] / "spec.json").read_text())
    assert seq_meta["kind"] == "sequence" and seq_meta["length"] == 4
    assert len(list(arts["seq"].glob("frame_*.ppm"))) == 4


def test_train_artifacts(arts):
    ckpt = arts["ckpt"]
    assert ckpt.exists() and ckpt.stat().st_size > 0
    meta = json.loads(open(str(ckpt) + ".json").read())
    assert meta["network"]["input_size"] == 32
    assert meta["train"]["steps"] == 3
    metrics = (arts["root"] / "model.metrics.csv").read_text().splitlines()
    assert metrics[0].startswith("# {")          # resolved config echo
    assert metrics[1] == "step,lr,seg_loss,sim,total"
    assert len(metrics) == 2 + 3


def test_eval_and_curve(arts, tmp_path):
    report = tmp_path / "r.csv"
    curve = tmp_path / "c.csv"
    assert main(["eval", "--ckpt", str(arts["ckpt"]), "--data",
                 str(arts["data"]), "--report", str(report), "--curve",
                 str(curve), "--repeats", "1"]) == 0
    lines = report.read_text().splitlines()
    assert lines[0] == "sample,iou,time_s,success"
    assert len(lines) == 1 + 6 + 1 and lines[-1].startswith("# alp=")
    clines = curve.read_text().splitlines()
    assert clines[0] == "tau,precision" and len(clines) == 22
    svg = tmp_path / "p.svg"
    assert main(["curve", "--report", str(report), "--svg", str(svg),
                 "--csv", str(tmp_path / "c2.csv")]) == 0
    assert "<polyline" in svg.read_text()
    assert (tmp_path / "c2.csv").read_text() == curve.read_text()


def test_baseline_command(arts, tmp_path):
    report = tmp_path / "b.csv"
    assert main(["baseline", "--method", "ccoeff", "--data",
                 str(arts["data"]), "--report", str(report),
                 "--repeats", "1"]) == 0
    lines = report.read_text().splitlines()
    assert len(lines) == 8 and lines[-1].startswith("# alp=")
    report2 = tmp_path / "b2.csv"
    assert main(["baseline", "--method", "ccorr", "--no-rerank", "--data",
                 str(arts["data"]), "--report", str(report2),
                 "--repeats", "1"]) == 0
    svg = tmp_path / "both.svg"
    assert main(["curve", "--report", str(report), "--report", str(report2),
                 "--svg", str(svg)]) == 0
    assert svg.read_text().count("<polyline") == 2


def test_track_command(arts, tmp_path):
    report = tmp_path / "t.csv"
    assert main(["track", "--ckpt", str(arts["ckpt"]), "--seq",
                 str(arts["seq"]), "--report", str(report)]) == 0
    lines = report.read_text().splitlines()
    assert lines[0] == "sample,iou,time_s,success"
    assert len(lines) == 1 + 3 + 1      # 4 frames, first is the init box
    assert re.match(r"# mean_iou=\d", lines[-1])


def test_variant_override_rules(arts, tmp_path, capsys):
    ok = main(["eval", "--ckpt", str(arts["ckpt"]), "--data",
               str(arts["data"]), "--report", str(tmp_path / "n.csv"),
               "--variant", "no-de", "--repeats", "1"])
    assert ok == 0
    assert json.loads(capsys.readouterr().out.split("eval: ", 1)[1])[
        "variant"] == "no-de"
    bad = main(["eval", "--ckpt", str(arts["ckpt"]), "--data",
                str(arts["data"]), "--report", str(tmp_path / "s.csv"),
                "--variant", "ss"])
    assert bad == 1
    assert "parameter sets differ" in capsys.readouterr().err


def test_flag_overrides_config_file(arts, tmp_path, capsys):
    out = tmp_path / "m.ckpt"
    assert main(["train", "--data", str(arts["data"]), "--config",
                 str(arts["cfg"]), "--out", str(out), "--steps", "2",
                 "--optimizer", "adam"]) == 0
    echo = [l for l in capsys.readouterr().out.splitlines()
            if l.startswith("train: ")][0]
    resolved = json.loads(echo.split("train: ", 1)[1])
    assert resolved["train"]["steps"] == 2          # flag beats file
    assert resolved["train"]["optimizer"] == "adam"
    assert resolved["train"]["lr"] == 0.001          # file beats default
    metrics = out.parent / "m.metrics.csv"
    assert len(metrics.read_text().splitlines()) == 2 + 2


def test_resume_from_checkpoint(arts, tmp_path, capsys):
    out = tmp_path / "r.ckpt"
    assert main(["train", "--data", str(arts["data"]), "--config",
                 str(arts["cfg"]), "--out", str(out), "--steps", "5",
                 "--resume", str(arts["ckpt"])]) == 0
    text = capsys.readouterr().out
    assert "trained 5 steps" in text


def test_unknown_command_and_flags():
    assert main(["bogus"]) == 2
    assert main(["eval", "--nope"]) == 2
    assert main([]) == 2


def test_missing_files_are_structured_errors(tmp_path, capsys):
    rc = main(["eval", "--ckpt", str(tmp_path / "nope.ckpt"), "--data",
               str(tmp_path), "--report", str(tmp_path / "r.csv")])
    assert rc == 1
    assert capsys.readouterr().err.startswith("error: ")
    rc = main(["train", "--data", str(tmp_path / "missing"), "--out",
               str(tmp_path / "c.ckpt"), "--steps", "1"])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_fpan_seed_env_default(tmp_path, monkeypatch):
    monkeypatch.setenv("FPAN_SEED", "7")
    out = tmp_path / "d"
    assert main(["gen-data", "--out", str(out), "--n-images", "1",
                 "--image-size", "32", "--min-digits", "1"]) == 0
    assert json.loads((out / "spec.json").read_text())["seed"] == 7


def test_threads_flag_warns_after_numpy(tmp_path, capsys):
    # numpy is long since imported by the test session itself
    assert main(["--threads", "2", "gen-data", "--out", str(tmp_path / "d"),
                 "--n-images", "1", "--image-size", "32",
                 "--min-digits", "1", "--seed", "1"]) == 0
    assert "numpy already loaded" in capsys.readouterr().err
