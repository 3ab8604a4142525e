import json
import math

import pytest

from sparsemotion.cli import main, parse_args
from sparsemotion.conditioning import build_signal, save_device_log
from sparsemotion.data_io import load_motion
from sparsemotion.skeleton import default_skeleton

TINY = ["--window", "4", "--hidden", "16", "--depth", "1", "--heads", "2", "--batch", "4"]


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    """A synthetic dataset and a tiny trained checkpoint shared by the tests."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert main(["synth-data", "--out", str(data), "--count", "5", "--duration", "1.0", "--seed", "3"]) == 0
    assert main(["train", "--data", str(data), "--out", str(root / "run"), "--steps", "200", "--lr", "1e-3",
                 "--log-every", "50", *TINY]) == 0
    return root


def test_help(capsys):
    with pytest.raises(SystemExit) as e:
        main(["sample", "--help"])
    assert e.value.code == 0
    out = capsys.readouterr().out
    for flag in ("--checkpoint", "--signal", "--out", "--steps", "--eta", "--stride", "--seed", "--threads"):
        assert flag in out


def test_usage_error():
    with pytest.raises(SystemExit) as e:
        main(["sample", "--checkpoint", "x"])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code == 2


def test_data_error_record(tmp_path, capsys):
    code = main(["evaluate", "--pred", str(tmp_path / "missing.smm"), "--gt", str(tmp_path / "missing.smm")])
    assert code == 1
    rec = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert rec["command"] == "evaluate" and rec["error"] == "FileNotFoundError"


def test_synth_data_layout(run):
    files = sorted((run / "data").glob("*.smm"))
    assert len(files) == 10
    man = json.loads((run / "data" / "manifest.json").read_text())
    assert sum(len(v) for v in man["splits"].values()) == 10
    assert load_motion(files[0]).num_frames == 60


def test_train_outputs(run):
    assert (run / "run" / "checkpoint_final.smck").exists()
    log_lines = (run / "run" / "train_log.jsonl").read_text().splitlines()
    assert json.loads(log_lines[-1])["step"] == 200


def test_sample_deterministic(run, tmp_path):
    ck = run / "run" / "checkpoint_final.smck"
    sig = sorted((run / "data").glob("walk_cycle*.smm"))[0]
    outs = []
    for name in ("a.smm", "b.smm"):
        args = ["sample", "--checkpoint", str(ck), "--signal", str(sig), "--out", str(tmp_path / name),
                "--steps", "10", "--stride", "2", "--seed", "5"]
        assert main(args) == 0
        outs.append((tmp_path / name).read_bytes())
    assert outs[0] == outs[1]
    assert main(["sample", "--checkpoint", str(ck), "--signal", str(sig), "--out", str(tmp_path / "c.smm"),
                 "--steps", "10", "--stride", "2", "--seed", "6"]) == 0
    assert (tmp_path / "c.smm").read_bytes() != outs[0]


def test_sample_from_device_log(run, tmp_path):
    ck = run / "run" / "checkpoint_final.smck"
    motion = load_motion(sorted((run / "data").glob("arm_wave*.smm"))[0])
    save_device_log(tmp_path / "log.csv", build_signal(default_skeleton(), motion), with_velocities=False)
    trace = tmp_path / "trace.jsonl"
    assert main(["sample", "--checkpoint", str(ck), "--signal", str(tmp_path / "log.csv"),
                 "--out", str(tmp_path / "o.smm"), "--steps", "4", "--stride", "4", "--trace", str(trace)]) == 0
    out = load_motion(tmp_path / "o.smm")
    assert out.num_frames == motion.num_frames
    assert out.fps == pytest.approx(60.0)
    assert len(trace.read_text().splitlines()) == 4


def test_evaluate_self(run, tmp_path, capsys):
    f = str(sorted((run / "data").glob("*.smm"))[0])
    assert main(["evaluate", "--pred", f, "--gt", f, "--report", str(tmp_path / "r.json")]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0].startswith("| Method | Jitter | MPJVE | MPJPE")
    rep = json.loads((tmp_path / "r.json").read_text())
    for k in ("mpjre", "mpjpe", "mpjve", "hand_pe", "upper_pe", "lower_pe"):
        assert rep[k] == pytest.approx(0.0, abs=1e-6)
    assert rep["fc_acc"] == 100.0


def test_end_to_end_metrics_finite(run, tmp_path, capsys):
    ck = run / "run" / "checkpoint_final.smck"
    gt = sorted((run / "data").glob("walk_cycle*.smm"))[0]
    assert main(["sample", "--checkpoint", str(ck), "--signal", str(gt), "--out", str(tmp_path / "p.smm"),
                 "--steps", "20", "--stride", "2"]) == 0
    assert main(["evaluate", "--pred", str(tmp_path / "p.smm"), "--gt", str(gt),
                 "--report", str(tmp_path / "r.json")]) == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert all(math.isfinite(v) for v in rep.values() if isinstance(v, float))


@pytest.mark.parametrize("target", ["data", "data/manifest.json", "run/checkpoint_final.smck"])
def test_inspect(run, target, capsys):
    assert main(["inspect", str(run / target)]) == 0
    assert capsys.readouterr().out.strip()


def test_inspect_motion_and_log(run, tmp_path, capsys):
    f = sorted((run / "data").glob("*.smm"))[0]
    assert main(["inspect", str(f)]) == 0
    assert "60 frames" in capsys.readouterr().out
    save_device_log(tmp_path / "l.csv", build_signal(default_skeleton(), load_motion(f)))
    assert main(["inspect", str(tmp_path / "l.csv")]) == 0
    assert "device log" in capsys.readouterr().out


class TestConfigMerge:
    def test_defaults(self):
        a = parse_args(["train", "--data", "d", "--out", "o"], environ={})
        assert (a.window, a.steps, a.lr, a.batch, a.lambda_vlb, a.diffusion_steps) == (41, 1000, 1e-4, 256, 1.0, 1000)

    def test_file_then_env_then_flag(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"seed": 7, "train": {"steps": 12, "lr": 0.01, "data": "from_file"}}))
        a = parse_args(["train", "--config", str(cfg), "--out", "o"], environ={})
        assert (a.seed, a.steps, a.lr, str(a.data)) == (7, 12, 0.01, "from_file")
        a = parse_args(["train", "--config", str(cfg), "--out", "o"], environ={"SPARSEMOTION_STEPS": "99"})
        assert a.steps == 99
        a = parse_args(["train", "--config", str(cfg), "--out", "o", "--steps", "5"], environ={"SPARSEMOTION_STEPS": "99"})
        assert a.steps == 5 and a.lr == 0.01

    def test_section_beats_top_level(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"steps": 3, "sample": {"steps": 25}}))
        a = parse_args(["sample", "--config", str(cfg), "--checkpoint", "c", "--signal", "s", "--out", "o"], environ={})
        assert a.steps == 25

    def test_bad_env_value(self):
        with pytest.raises(SystemExit) as e:
            parse_args(["train", "--data", "d", "--out", "o"], environ={"SPARSEMOTION_STEPS": "many"})
        assert e.value.code == 2
