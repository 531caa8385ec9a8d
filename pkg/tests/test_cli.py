import json
import subprocess
import sys

import numpy as np
import pytest

from toy import toy_config
from vicreg_audio.augment import read_spec
from vicreg_audio.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, parse_overrides, run
from vicreg_audio.manifest import SPLIT_NAMES, read_manifest, read_split_manifest
from vicreg_audio.pipeline import RunConfig, pretrain_views
from vicreg_audio.audio import load_wav


def config_file(path, **changes):
    path.write_text(json.dumps(toy_config(**changes)))
    return str(path)


@pytest.fixture(scope="module")
def pretrained_dir(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_pre")
    cfg = config_file(corpus / "cli_pre.json", **{"data.manifest": "audio/manifest.jsonl"})
    assert run(["pretrain", "--config", cfg, "--output-dir", str(out)]) == EXIT_OK
    return out


def downstream_file(corpus, name, mode, **changes):
    settings = {"mode": mode, "data.train": "audio/train.jsonl", "data.validation": "audio/validation.jsonl",
                "data.test": "audio/test.jsonl", "epochs": 3}
    return config_file(corpus / name, **{**settings, **changes})


class TestUsage:
    def test_unknown_verb(self, capsys):
        assert run(["distill"]) == EXIT_USAGE
        assert "usage:" in capsys.readouterr().err

    def test_no_arguments(self, capsys):
        assert run([]) == EXIT_USAGE
        assert "usage:" in capsys.readouterr().err

    def test_missing_config(self, capsys):
        assert run(["pretrain"]) == EXIT_USAGE
        assert "--config" in capsys.readouterr().err

    def test_bad_override_syntax(self, tmp_path):
        assert run(["split", "--config", config_file(tmp_path / "c.json"), "epochs"]) == EXIT_USAGE

    def test_parse_overrides(self):
        assert parse_overrides(["a.b=0.3", "c=true", "d=hello", "e=[1, 2]"]) == \
            {"a.b": 0.3, "c": True, "d": "hello", "e": [1, 2]}

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "vicreg_audio.cli", "nope"], capture_output=True, text=True)
        assert proc.returncode == EXIT_USAGE and "usage:" in proc.stderr


class TestDataErrors:
    def test_pretrain_batch_size_one(self, corpus, tmp_path, capsys):
        cfg = config_file(corpus / "bs1.json", **{"data.manifest": "audio/manifest.jsonl"})
        assert run(["pretrain", "--config", cfg, "--output-dir", str(tmp_path), "batch_size=1"]) == EXIT_DATA
        err = capsys.readouterr().err
        assert "batch_size" in err and "variance" in err

    def test_unknown_override_key(self, tmp_path, capsys):
        cfg = config_file(tmp_path / "c.json")
        assert run(["pretrain", "--config", cfg, "--output-dir", str(tmp_path), "schedule.peak=1"]) == EXIT_DATA
        assert "schedule.peak" in capsys.readouterr().err

    def test_config_not_found(self, tmp_path, capsys):
        assert run(["split", "--config", str(tmp_path / "none.json"), "--output-dir", str(tmp_path)]) == EXIT_DATA
        assert "none.json" in capsys.readouterr().err

    def test_missing_audio(self, tmp_path, capsys):
        (tmp_path / "m.jsonl").write_text(json.dumps(
            {"path": "gone.wav", "label": "a", "duration_s": 1.0, "sample_rate": 8000}) + "\n")
        cfg = config_file(tmp_path / "c.json", **{"data.manifest": "m.jsonl"})
        assert run(["pretrain", "--config", cfg, "--output-dir", str(tmp_path / "o")]) == EXIT_DATA
        assert "gone.wav" in capsys.readouterr().err

    def test_train_rejects_pretrain_mode(self, tmp_path):
        cfg = config_file(tmp_path / "c.json")
        assert run(["train", "--config", cfg, "--output-dir", str(tmp_path)]) == EXIT_DATA

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_loss(self, corpus, tmp_path, capsys):
        cfg = config_file(corpus / "div.json", **{"data.manifest": "audio/manifest.jsonl",
                                                  "schedule.lr_peak": 1e30, "schedule.lr_start": 1e30})
        assert run(["pretrain", "--config", cfg, "--output-dir", str(tmp_path)]) == EXIT_NUMERIC
        assert "non-finite" in capsys.readouterr().err


class TestSplit:
    def test_writes_split_files(self, corpus, tmp_path):
        cfg = config_file(corpus / "split.json", **{"data.manifest": "audio/manifest.jsonl"})
        out = tmp_path / "splits"
        assert run(["split", "--config", cfg, "--output-dir", str(out), "--seed", "4"]) == EXIT_OK
        for name in SPLIT_NAMES:
            assert (out / f"{name}.jsonl").is_file()
        split = read_split_manifest(out / "splits.jsonl")
        assert split.seed == 4
        total = len(split.train) + len(split.validation) + len(split.test)
        assert total == len(read_manifest(corpus / "audio" / "manifest.jsonl"))
        # relative entry paths are rewritten to stay valid from the output directory
        for entry in read_manifest(out / "train.jsonl"):
            assert load_wav(out / entry.path).sample_rate == 8000

    def test_deterministic(self, corpus, tmp_path):
        cfg = config_file(corpus / "split.json", **{"data.manifest": "audio/manifest.jsonl"})
        for d in ("a", "b"):
            assert run(["split", "--config", cfg, "--output-dir", str(tmp_path / d)]) == EXIT_OK
        assert (tmp_path / "a" / "splits.jsonl").read_bytes() == (tmp_path / "b" / "splits.jsonl").read_bytes()


class TestPretrain:
    def test_outputs(self, pretrained_dir):
        report = json.loads((pretrained_dir / "report.json").read_text())
        assert len(report["steps"]) == 10 and len(report["epochs"]) == 2
        assert (pretrained_dir / "checkpoint.vbssl").is_file()

    def test_reproducible_and_worker_independent(self, corpus, pretrained_dir, tmp_path):
        cfg = config_file(corpus / "cli_pre.json", **{"data.manifest": "audio/manifest.jsonl"})
        assert run(["pretrain", "--config", cfg, "--output-dir", str(tmp_path), "--workers", "2"]) == EXIT_OK
        assert (tmp_path / "checkpoint.vbssl").read_bytes() == (pretrained_dir / "checkpoint.vbssl").read_bytes()
        a = json.loads((tmp_path / "report.json").read_text())
        b = json.loads((pretrained_dir / "report.json").read_text())
        a.pop("timing"), b.pop("timing")
        assert a == b

    def test_override_equals_file_edit(self, corpus, tmp_path):
        edited = config_file(corpus / "edited.json", **{"data.manifest": "audio/manifest.jsonl",
                                                        "loss.covariance": 3.0, "seed": 2})
        plain = config_file(corpus / "plain.json", **{"data.manifest": "audio/manifest.jsonl"})
        assert run(["pretrain", "--config", edited, "--output-dir", str(tmp_path / "e")]) == EXIT_OK
        assert run(["pretrain", "--config", plain, "--output-dir", str(tmp_path / "o"),
                    "loss.covariance=3.0", "--seed", "2"]) == EXIT_OK
        assert (tmp_path / "e" / "checkpoint.vbssl").read_bytes() == \
            (tmp_path / "o" / "checkpoint.vbssl").read_bytes()


class TestDownstream:
    def test_train_probe_eval_aggregate(self, corpus, pretrained_dir, tmp_path, capsys):
        ckpt = str(pretrained_dir / "checkpoint.vbssl")
        reports = []
        for seed in (0, 1):
            out = tmp_path / f"probe{seed}"
            cfg = downstream_file(corpus, "cli_probe.json", "scratch", init_checkpoint=ckpt)
            assert run(["probe", "--config", cfg, "--output-dir", str(out), "--seed", str(seed)]) == EXIT_OK
            report = json.loads((out / "report.json").read_text())
            assert report["mode"] == "probe" and report["metrics"] is not None
            assert report["config"]["optimizer"]["name"] == "adam"
            reports.append(str(out / "report.json"))

        assert run(["aggregate", "--reports", *reports, "--output-dir", str(tmp_path)]) == EXIT_OK
        table = json.loads((tmp_path / "aggregate.json").read_text())
        accs = [json.loads(open(p).read())["metrics"]["accuracy"] for p in reports]
        assert table["accuracy"]["mean"] == pytest.approx(np.mean(accs), abs=1e-12)
        assert table["accuracy"]["runs"] == 2

        capsys.readouterr()
        cfg = downstream_file(corpus, "cli_eval.json", "scratch")
        assert run(["eval", "--config", cfg, "--checkpoint", str(tmp_path / "probe0" / "checkpoint.vbssl"),
                    "--output-dir", str(tmp_path / "ev")]) == EXIT_OK
        metrics = json.loads((tmp_path / "ev" / "metrics.json").read_text())
        assert metrics["accuracy"] == json.loads(open(reports[0]).read())["metrics"]["accuracy"]

    def test_train_scratch(self, corpus, tmp_path, capsys):
        cfg = downstream_file(corpus, "cli_scratch.json", "scratch")
        assert run(["train", "--config", cfg, "--output-dir", str(tmp_path)]) == EXIT_OK
        assert "accuracy" in json.loads(capsys.readouterr().out.strip().splitlines()[-1])

    def test_aggregate_mismatched(self, tmp_path):
        for name, epochs in (("a", 3), ("b", 4)):
            cfg = RunConfig.from_dict({"mode": "scratch", "epochs": epochs})
            metrics = {"accuracy": 0.5, "top3_accuracy": 1.0, "f1_macro": 0.1, "precision_macro": 0.1,
                       "recall_macro": 0.1}
            (tmp_path / f"{name}.json").write_text(json.dumps(
                {"mode": "scratch", "seed": 0, "config_digest": cfg.digest(), "config": {}, "metrics": metrics}))
        assert run(["aggregate", "--reports", str(tmp_path / "a.json"), str(tmp_path / "b.json")]) == EXIT_DATA

    def test_eval_needs_classifier(self, corpus, pretrained_dir, tmp_path):
        cfg = downstream_file(corpus, "cli_eval2.json", "scratch")
        code = run(["eval", "--config", cfg, "--checkpoint", str(pretrained_dir / "checkpoint.vbssl")])
        assert code == EXIT_DATA


class TestPreview:
    def test_views_match_pretraining(self, corpus, tmp_path):
        cfg_path = config_file(corpus / "prev.json", **{"data.manifest": "audio/manifest.jsonl"})
        assert run(["preview-augment", "--config", cfg_path, "--output-dir", str(tmp_path), "--count", "2"]) == EXIT_OK
        cfg = RunConfig.load(cfg_path)
        from vicreg_audio.pipeline import load_clips
        clips, _ = load_clips(corpus / "audio" / "manifest.jsonl", 8000)
        va, vb = pretrain_views(clips, 0, [0, 1], cfg, None)
        for i in range(2):
            np.testing.assert_array_equal(read_spec(tmp_path / f"view_{i:04d}_a.spec"), va[i])
            np.testing.assert_array_equal(read_spec(tmp_path / f"view_{i:04d}_b.spec"), vb[i])
            params = json.loads((tmp_path / f"view_{i:04d}_a.spec.json").read_text())
            assert {"pitch_steps", "snr_db", "stretch_rate", "masks"} <= set(params)
        assert not (tmp_path / "view_0002_a.spec").exists()
