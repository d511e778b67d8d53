"""CLI surface: exit codes, config plumbing, artifacts, determinism."""

import json
import os

import pytest

from radkg.cli import REGIME_LR, REGIME_WARMUP, build_train_config, default_config, main

FAST = [
    "--set", "synth.n_samples=8",
    "--set", "synth.d_vis=8",
    "--set", "synth.max_triplets=2",
    "--set", "lm.d_model=16",
    "--set", "lm.n_layers=1",
    "--set", "lm.n_heads=2",
    "--set", "lm.d_ff=32",
    "--set", "lm.max_seq_len=128",
    "--set", "projector.d_vis=8",
    "--set", "projector.clip_length=2",
    "--set", "projector.prefix_length=1",
    "--set", "projector.n_layers=1",
    "--set", "projector.n_heads=2",
    "--set", "trainer.epochs=1",
    "--set", "decode.max_new_tokens=40",
]


def run(argv):
    return main(argv)


def gen_corpus(tmp_path, name="corpus", extra=()):
    out = str(tmp_path / name)
    assert run(["gen-corpus", "--out", out, *FAST, *extra]) == 0
    return out


class TestExitCodes:
    def test_usage_error_is_two(self):
        with pytest.raises(SystemExit) as exc:
            run(["no-such-command"])
        assert exc.value.code == 2
        with pytest.raises(SystemExit) as exc:
            run(["train"])  # missing required args
        assert exc.value.code == 2

    def test_bad_config_json_is_three(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text("{not json")
        assert run(["gen-corpus", "--out", str(tmp_path / "o"), "--config", str(cfg)]) == 3

    def test_unknown_config_key_is_three(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"strange_section": 1}))
        assert run(["gen-corpus", "--out", str(tmp_path / "o"), "--config", str(cfg)]) == 3
        assert run(["gen-corpus", "--out", str(tmp_path / "o"), "--set", "nope=1"]) == 3
        assert run(["gen-corpus", "--out", str(tmp_path / "o"), "--set", "nope"]) == 3

    def test_domain_error_is_four(self, tmp_path):
        corpus_dir = gen_corpus(tmp_path)
        corpus = os.path.join(corpus_dir, "corpus.jsonl")
        # strip the feature vectors, then ask for an image-conditioned run
        lines = []
        with open(corpus) as fh:
            for line in fh:
                rec = json.loads(line)
                rec["image_features"] = None
                lines.append(json.dumps(rec, sort_keys=True))
        broken = tmp_path / "broken.jsonl"
        broken.write_text("\n".join(lines) + "\n")
        code = run(
            ["train", "--corpus", str(broken), "--out", str(tmp_path / "t"),
             *FAST, "--set", "trainer.regime=vlm_kg"]
        )
        assert code == 4


class TestConfig:
    def test_defaults_fill_regime_hyperparameters(self):
        cfg = default_config()
        tc = build_train_config(cfg)
        assert tc.optim.lr_peak == REGIME_LR["llm_kg"] == 1e-4
        assert tc.optim.warmup_steps == REGIME_WARMUP["llm_kg"] == 0
        cfg["trainer"]["regime"] = "vlm_kg"
        tc = build_train_config(cfg)
        assert tc.optim.lr_peak == REGIME_LR["vlm_kg"] == 2e-5
        assert tc.optim.warmup_steps == REGIME_WARMUP["vlm_kg"] == 5000

    def test_explicit_lr_survives(self):
        cfg = default_config()
        cfg["trainer"]["optim"]["lr_peak"] = 0.5
        assert build_train_config(cfg).optim.lr_peak == 0.5

    def test_set_parses_json_and_strings(self, tmp_path):
        out = gen_corpus(tmp_path, extra=["--set", "synth.seed=3"])
        manifest = json.loads((tmp_path / "corpus" / "manifest.json").read_text())
        assert manifest["config"]["synth"]["seed"] == 3
        assert manifest["config"]["synth"]["n_samples"] == 8

    def test_config_file_merges(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"synth": {"n_samples": 5, "d_vis": 8}}))
        out = str(tmp_path / "c")
        assert run(["gen-corpus", "--out", out, "--config", str(cfg)]) == 0
        manifest = json.loads((tmp_path / "c" / "manifest.json").read_text())
        assert manifest["config"]["synth"]["n_samples"] == 5
        assert manifest["n_samples"] == 5


class TestArtifacts:
    def test_gen_corpus_outputs(self, tmp_path):
        out = gen_corpus(tmp_path)
        names = set(os.listdir(out))
        assert {"corpus.jsonl", "vocab.txt", "features.txt", "manifest.json"} <= names
        manifest = json.loads(open(os.path.join(out, "manifest.json")).read())
        assert manifest["command"] == "gen-corpus"
        assert manifest["kernel_backend"] in ("c", "py")
        assert "corpus_sha256" in manifest
        assert not any("time" in k for k in manifest)

    def test_full_pipeline_artifacts(self, tmp_path):
        corpus_dir = gen_corpus(tmp_path)
        corpus = os.path.join(corpus_dir, "corpus.jsonl")
        train_dir = str(tmp_path / "train")
        assert run(["train", "--corpus", corpus, "--out", train_dir, *FAST]) == 0
        names = set(os.listdir(train_dir))
        assert {"checkpoint.vkg", "vocab.txt", "train_log.csv",
                "train_report.json", "manifest.json"} <= names
        log = open(os.path.join(train_dir, "train_log.csv")).read().splitlines()
        assert log[0] == "step,epoch,lr,loss,grad_norm"
        assert len(log) >= 2
        report = json.loads(open(os.path.join(train_dir, "train_report.json")).read())
        assert set(report) == {"regime", "steps", "epochs", "train_losses",
                               "val_losses", "backend"}

        gen_dir = str(tmp_path / "gen")
        ckpt = os.path.join(train_dir, "checkpoint.vkg")
        assert run(["generate", "--checkpoint", ckpt, "--corpus", corpus,
                    "--out", gen_dir, *FAST]) == 0
        assert {"predictions.jsonl", "generations.txt", "manifest.json"} <= set(
            os.listdir(gen_dir)
        )
        gen_lines = open(os.path.join(gen_dir, "generations.txt")).read().splitlines()
        assert len(gen_lines) == 8 and all("\t" in l for l in gen_lines)

        eval_dir = str(tmp_path / "eval")
        preds = os.path.join(gen_dir, "predictions.jsonl")
        assert run(["evaluate", "--predictions", preds, "--corpus", corpus,
                    "--out", eval_dir, *FAST]) == 0
        assert {"report.csv", "samples.csv", "report.txt", "manifest.json"} <= set(
            os.listdir(eval_dir)
        )
        head = open(os.path.join(eval_dir, "report.csv")).read().splitlines()[0]
        assert head.startswith("n_samples,b1,b2,b3,b4,rouge_l,exact_match")
        samples = open(os.path.join(eval_dir, "samples.csv")).read().splitlines()
        assert len(samples) == 9  # header + 8 rows

    def test_gradcheck_passes(self, capsys):
        assert run(["gradcheck"]) == 0
        out = capsys.readouterr().out
        assert "PASS" in out


class TestDeterminism:
    def test_rerun_is_byte_identical(self, tmp_path):
        a = gen_corpus(tmp_path, "a")
        b = gen_corpus(tmp_path, "b")
        for name in ("corpus.jsonl", "vocab.txt", "features.txt", "manifest.json"):
            pa = open(os.path.join(a, name), "rb").read()
            pb = open(os.path.join(b, name), "rb").read()
            assert pa == pb, name

        corpus = os.path.join(a, "corpus.jsonl")
        outs = []
        for name in ("t1", "t2"):
            out = str(tmp_path / name)
            assert run(["train", "--corpus", corpus, "--out", out, *FAST]) == 0
            outs.append(out)
        for name in ("checkpoint.vkg", "train_log.csv", "train_report.json", "manifest.json"):
            pa = open(os.path.join(outs[0], name), "rb").read()
            pb = open(os.path.join(outs[1], name), "rb").read()
            assert pa == pb, name
