"""Command-line entry point.

Subcommands: gen-corpus, train, generate, evaluate, gradcheck,
ablate-projector, ablate-length, ablate-freeze. Configuration is a
JSON file plus dotted `--set section.key=value` overrides on top of
the built-in defaults; every run directory receives a manifest with
the fully resolved config, the kernel backend, and input digests so
identical invocations produce byte-identical artifacts.

Exit codes: 0 success, 2 usage, 3 config error, 4 invariant violation,
1 anything else.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
import traceback
from dataclasses import asdict, fields, replace
from typing import Dict, List, Optional

import numpy as np

import radkg
from radkg import corpus as corpus_mod
from radkg import kernels
from radkg.ablate import ablate_freeze, ablate_length, ablate_projector
from radkg.checkpoint import load_models, save_models
from radkg.corpus import DEFAULT_TEMPLATE, SynthConfig, Vocab
from radkg.decode import DecodeConfig
from radkg.errors import ConfigError, RadkgError
from radkg.features import SyntheticFeatureSource, dump_source
from radkg.kg import save_kgs
from radkg.metrics import evaluate_corpus, format_table, report_csv, samples_csv
from radkg.model.lm import LmConfig, PrefixedBatch, init_lm, lm_loss
from radkg.model.projector import ProjectorConfig, init_projector, project
from radkg.optim import OptimHyper
from radkg.pipeline import ExperimentConfig, predict_graphs
from radkg.tensor import grad_check
from radkg.train import Regime, TrainConfig, train

REGIME_LR = {"llm_kg": 1e-4, "vlm_kg": 2e-5, "vlm_kg_frozen": 2e-5}
REGIME_WARMUP = {"llm_kg": 0, "vlm_kg": 5000, "vlm_kg_frozen": 5000}


def default_config() -> dict:
    return {
        "template": DEFAULT_TEMPLATE,
        "synth": asdict(SynthConfig()),
        "lm": {**asdict(LmConfig(vocab_size=0))},
        "projector": asdict(ProjectorConfig(d_vis=32, d_lm=128)),
        "trainer": {
            "regime": "llm_kg",
            "epochs": 5,
            "batch_size": 2,
            "grad_accum_steps": 2,
            "shuffle_seed": 0,
            "val_fraction": 0.0,
            "optim": {
                "lr_peak": None,
                "beta1": 0.9,
                "beta2": 0.999,
                "eps": 1e-8,
                "weight_decay": 0.01,
                "warmup_steps": None,
                "clip_norm": 1.0,
            },
        },
        "decode": asdict(DecodeConfig(strategy="beam", beam_width=4, max_new_tokens=256)),
        "eval": {"beta": 1.2, "bleu_mode": "corpus", "max_n": 4, "smooth": False},
        "experiment": {"eval_fraction": 0.25},
        "gradcheck": {
            "tol": 1e-4,
            "h": 1e-5,
            "n_coords": 8,
            "seed": 0,
            "d_model": 16,
            "n_layers": 2,
            "n_heads": 2,
            "d_ff": 32,
            "vocab_size": 11,
            "seq_len": 9,
            "d_vis": 5,
            "clip_length": 3,
            "prefix_length": 2,
            "proj_layers": 1,
        },
    }


def _merge(base: dict, extra: dict, path: str = "") -> None:
    for key, value in extra.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            _merge(base[key], value, where)
        else:
            base[key] = value


def _apply_set(cfg: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"--set needs key=value, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = cfg
    parts = key.strip().split(".")
    for part in parts[:-1]:
        if not isinstance(node.get(part), dict):
            raise ConfigError(f"unknown config section {part!r} in {key!r}")
        node = node[part]
    if parts[-1] not in node:
        raise ConfigError(f"unknown config key {key!r}")
    node[parts[-1]] = value


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = default_config()
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            try:
                loaded = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file {args.config}: {exc}") from exc
        _merge(cfg, loaded)
    for assignment in getattr(args, "set", None) or []:
        _apply_set(cfg, assignment)
    return cfg


def _build(dc_cls, section: dict, **extra):
    allowed = {f.name for f in fields(dc_cls)}
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown {dc_cls.__name__} keys: {sorted(unknown)}")
    merged = {**section, **extra}
    return dc_cls(**merged)


def build_train_config(cfg: dict) -> TrainConfig:
    section = copy.deepcopy(cfg["trainer"])
    optim = section.pop("optim")
    section.pop("val_fraction", None)
    regime = section.get("regime", "llm_kg")
    if optim.get("lr_peak") is None:
        optim["lr_peak"] = REGIME_LR[regime]
    if optim.get("warmup_steps") is None:
        optim["warmup_steps"] = REGIME_WARMUP[regime]
    return _build(TrainConfig, section, optim=_build(OptimHyper, optim))


def build_experiment_config(cfg: dict) -> ExperimentConfig:
    return ExperimentConfig(
        synth=_build(SynthConfig, cfg["synth"]),
        lm=_build(LmConfig, cfg["lm"]),
        projector=_build(ProjectorConfig, cfg["projector"]),
        train=build_train_config(cfg),
        decode=_build(DecodeConfig, cfg["decode"]),
        template=cfg["template"],
        eval_fraction=cfg["experiment"]["eval_fraction"],
    )


def _write_text(path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _write_manifest(out_dir, command: str, cfg: dict, **extra) -> None:
    manifest = {
        "command": command,
        "version": radkg.__version__,
        "kernel_backend": kernels.BACKEND,
        "config": cfg,
        **extra,
    }
    _write_text(
        os.path.join(out_dir, "manifest.json"),
        json.dumps(manifest, sort_keys=True, indent=2) + "\n",
    )


def _ensure_out(path) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def cmd_gen_corpus(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    out = _ensure_out(args.out)
    synth = _build(SynthConfig, cfg["synth"])
    samples = corpus_mod.gen_synthetic(synth)
    corpus_path = os.path.join(out, "corpus.jsonl")
    corpus_mod.save_corpus(corpus_path, samples)
    vocab = corpus_mod.build_vocab(samples, cfg["template"])
    corpus_mod.save_vocab(os.path.join(out, "vocab.txt"), vocab)
    dump_source(SyntheticFeatureSource(synth, samples), os.path.join(out, "features.txt"))
    _write_manifest(
        out,
        "gen-corpus",
        cfg,
        corpus_sha256=corpus_mod.file_sha256(corpus_path),
        n_samples=len(samples),
        vocab_size=vocab.size,
    )
    print(f"wrote {len(samples)} samples, vocab {vocab.size}, to {out}")
    return 0


def _load_corpus_and_vocab(corpus_path, template: str):
    samples = corpus_mod.load_corpus(corpus_path)
    vocab = corpus_mod.build_vocab(samples, template)
    return samples, vocab


def cmd_train(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    out = _ensure_out(args.out)
    samples, vocab = _load_corpus_and_vocab(args.corpus, cfg["template"])
    train_cfg = build_train_config(cfg)
    regime = Regime(train_cfg.regime)

    lm_section = dict(cfg["lm"])
    if lm_section.get("vocab_size", 0) in (0, None):
        lm_section["vocab_size"] = vocab.size
    lm = init_lm(_build(LmConfig, lm_section))
    proj = None
    if regime is not Regime.LLM_KG:
        proj_section = dict(cfg["projector"])
        proj_section["d_lm"] = lm.cfg.d_model
        proj = init_projector(_build(ProjectorConfig, proj_section))

    val_fraction = cfg["trainer"]["val_fraction"]
    encoded = [corpus_mod.encode_sample(s, vocab, cfg["template"]) for s in samples]
    n_val = round(len(encoded) * val_fraction) if val_fraction else 0
    train_enc = encoded[: len(encoded) - n_val] if n_val else encoded
    val_enc = encoded[len(encoded) - n_val :] if n_val else []

    report = train(train_cfg, lm, proj, train_enc, val_enc)

    ckpt_path = os.path.join(out, "checkpoint.vkg")
    save_models(ckpt_path, lm, proj, extra={"template": cfg["template"]})
    corpus_mod.save_vocab(os.path.join(out, "vocab.txt"), vocab)

    log_lines = ["step,epoch,lr,loss,grad_norm"]
    for row in report.log_rows:
        log_lines.append(
            f"{row['step']},{row['epoch']},{row['lr']!r},{row['loss']!r},{row['grad_norm']!r}"
        )
    _write_text(os.path.join(out, "train_log.csv"), "\n".join(log_lines) + "\n")
    train_report = {
        "regime": report.regime,
        "steps": report.steps,
        "epochs": report.epochs,
        "train_losses": report.train_losses,
        "val_losses": report.val_losses,
        "backend": report.backend,
    }
    _write_text(
        os.path.join(out, "train_report.json"),
        json.dumps(train_report, sort_keys=True, indent=2) + "\n",
    )
    _write_manifest(
        out,
        "train",
        cfg,
        corpus_sha256=corpus_mod.file_sha256(args.corpus),
        checkpoint="checkpoint.vkg",
        vocab_size=vocab.size,
    )
    print(
        f"trained {report.regime} for {report.steps} steps; "
        f"final loss {report.final_train_loss:.4f}; wall {report.wall_time_s:.1f}s"
    )
    return 0


def cmd_generate(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    out = _ensure_out(args.out)
    lm, proj, ckpt_cfgs = load_models(args.checkpoint)
    template = ckpt_cfgs.get("extra", {}).get("template", cfg["template"])
    samples, vocab = _load_corpus_and_vocab(args.corpus, template)
    if vocab.size != lm.cfg.vocab_size:
        raise ConfigError(
            f"corpus vocab size {vocab.size} does not match checkpoint {lm.cfg.vocab_size}"
        )
    decode_cfg = _build(DecodeConfig, cfg["decode"])
    preds, skipped, texts = predict_graphs(lm, proj, samples, vocab, decode_cfg, template)
    save_kgs(preds, os.path.join(out, "predictions.jsonl"))
    gen_lines = [f"{s.id}\t{text}" for s, text in zip(samples, texts)]
    _write_text(os.path.join(out, "generations.txt"), "\n".join(gen_lines) + "\n")
    _write_manifest(
        out,
        "generate",
        cfg,
        corpus_sha256=corpus_mod.file_sha256(args.corpus),
        checkpoint=os.path.basename(args.checkpoint),
        skipped_fragments=skipped,
        n_samples=len(samples),
    )
    print(f"decoded {len(samples)} samples ({skipped} fragments skipped) to {out}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    out = _ensure_out(args.out)
    from radkg.kg import load_kgs

    preds = load_kgs(args.predictions)
    samples = corpus_mod.load_corpus(args.corpus)
    golds = [s.output_triplets for s in samples]
    ev = cfg["eval"]
    report = evaluate_corpus(
        preds,
        golds,
        beta=ev["beta"],
        bleu_mode=ev["bleu_mode"],
        max_n=ev["max_n"],
        smooth=ev["smooth"],
    )
    _write_text(os.path.join(out, "report.csv"), report_csv(report))
    _write_text(os.path.join(out, "samples.csv"), samples_csv(report))
    from radkg.metrics import METRIC_COLUMNS, report_row

    table = format_table(
        ["n", *METRIC_COLUMNS, "EM"],
        [[report.n_samples, *report_row(report), report.percent("em")]],
    )
    _write_text(os.path.join(out, "report.txt"), table)
    _write_manifest(
        out,
        "evaluate",
        cfg,
        corpus_sha256=corpus_mod.file_sha256(args.corpus),
        predictions_sha256=corpus_mod.file_sha256(args.predictions),
    )
    print(table, end="")
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    gc = cfg["gradcheck"]
    rng = np.random.default_rng(gc["seed"])
    lm = init_lm(
        LmConfig(
            vocab_size=gc["vocab_size"],
            d_model=gc["d_model"],
            n_layers=gc["n_layers"],
            n_heads=gc["n_heads"],
            d_ff=gc["d_ff"],
            max_seq_len=gc["seq_len"] + gc["clip_length"],
            seed=gc["seed"],
        )
    )
    proj = init_projector(
        ProjectorConfig(
            d_vis=gc["d_vis"],
            d_lm=gc["d_model"],
            clip_length=gc["clip_length"],
            prefix_length=gc["prefix_length"],
            n_layers=gc["proj_layers"],
            n_heads=gc["n_heads"],
            seed=gc["seed"] + 1,
        )
    )
    ids = rng.integers(0, gc["vocab_size"], size=gc["seq_len"])
    mask = np.zeros(gc["seq_len"], dtype=bool)
    mask[gc["seq_len"] // 2 :] = True
    feats = rng.standard_normal(gc["d_vis"])

    def loss_fn():
        prefix = project(proj, feats)
        return lm_loss(lm, PrefixedBatch(ids, mask, prefix))

    params = {f"lm.{n}": t for n, t in lm.ps.items()}
    params.update({f"projector.{n}": t for n, t in proj.ps.items() if t.data.size > 0})
    report = grad_check(
        loss_fn, params, h=gc["h"], tol=gc["tol"], n_coords=gc["n_coords"], seed=gc["seed"]
    )
    rows = [[name, f"{err:.3e}"] for name, err in sorted(report.per_param.items())]
    print(format_table(["parameter", "max_rel_err"], rows), end="")
    print(f"max {report.max_rel_err:.3e} tol {gc['tol']:.1e} -> {'PASS' if report.passed else 'FAIL'}")
    if not report.passed:
        for line in report.failures:
            print("  " + line, file=sys.stderr)
        return 4
    return 0


def _run_ablation(args: argparse.Namespace, name: str) -> int:
    cfg = resolve_config(args)
    out = _ensure_out(args.out)
    exp = build_experiment_config(cfg)
    if name == "ablate-projector":
        headers, rows = ablate_projector(exp)
    elif name == "ablate-length":
        headers, rows = ablate_length(exp)
    else:
        headers, rows, _ = ablate_freeze(exp)
    table = format_table(headers, rows)
    csv_lines = [",".join(headers)]
    for row in rows:
        csv_lines.append(",".join(f"{v:.2f}" if isinstance(v, float) else str(v) for v in row))
    _write_text(os.path.join(out, "table.txt"), table)
    _write_text(os.path.join(out, "table.csv"), "\n".join(csv_lines) + "\n")
    _write_manifest(out, name, cfg)
    print(table, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="radkg",
        description="Train and evaluate triplet generation from reports and image features.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, out: bool = True) -> None:
        p.add_argument("--config", help="JSON config file")
        p.add_argument(
            "--set",
            action="append",
            metavar="KEY=VALUE",
            help="dotted config override, repeatable",
        )
        if out:
            p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("gen-corpus", help="generate a synthetic corpus")
    common(p)

    p = sub.add_parser("train", help="train a regime on a corpus")
    p.add_argument("--corpus", required=True)
    common(p)

    p = sub.add_parser("generate", help="decode predictions for a corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    common(p)

    p = sub.add_parser("evaluate", help="score predictions against a corpus")
    p.add_argument("--predictions", required=True)
    p.add_argument("--corpus", required=True)
    common(p)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    common(p, out=False)

    for name in ("ablate-projector", "ablate-length", "ablate-freeze"):
        p = sub.add_parser(name, help=f"run the {name.split('-')[1]} ablation")
        common(p)

    return parser


_COMMANDS = {
    "gen-corpus": cmd_gen_corpus,
    "train": cmd_train,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
    "gradcheck": cmd_gradcheck,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command in _COMMANDS:
            return _COMMANDS[args.command](args)
        return _run_ablation(args, args.command)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    except RadkgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
