"""Command-line entry point: gen-data, train, eval, ablate, gradcheck."""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .config import (ConfigError, ModelConfig, ProtocolSpec, TrainConfig,
                     default_corpus_spec, load_config)
from .data import CorpusIOError, generate_corpus, read_corpus, read_corpus_meta, write_corpus


def _hash_corpus(corpus_dir: Path) -> str:
    h = hashlib.sha256()
    for path in sorted(corpus_dir.rglob("*")):
        if path.is_file():
            h.update(path.relative_to(corpus_dir).as_posix().encode())
            h.update(path.read_bytes())
    return h.hexdigest()


def _write_manifest(out_dir: Path, config: dict, corpus_dir: Path | None, seeds: list[int]) -> None:
    manifest = {
        "tool_version": __version__,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "config": config,
        "seeds": seeds,
    }
    if corpus_dir is not None:
        manifest["corpus_path"] = str(corpus_dir)
        manifest["corpus_sha256"] = _hash_corpus(corpus_dir)
    with open(out_dir / "run_manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def _prepare_out(out_dir: Path, force: bool) -> None:
    if out_dir.exists() and any(out_dir.iterdir()) and not force:
        raise SystemExit(f"refusing to write into non-empty {out_dir} (use --force)")
    out_dir.mkdir(parents=True, exist_ok=True)


def cmd_gen_data(args) -> int:
    spec = default_corpus_spec(args.seed) if args.spec is None \
        else load_config(args.spec, "corpus")
    if args.seed is not None and args.spec is not None:
        spec.seed = args.seed
    spec.validate()
    out = Path(args.out)
    _prepare_out(out, args.force)
    corpus = generate_corpus(spec)
    write_corpus(corpus, out, spec)
    _write_manifest(out, asdict(spec), None, [spec.seed])
    print(f"wrote {len(corpus)} videos to {out}")
    return 0


def _load_model_config(args, meta: dict) -> ModelConfig:
    if args.model_config:
        cfg = load_config(args.model_config, "model")
    else:
        cfg = ModelConfig()
    cfg.C = meta["C"]
    cfg.n_coarse = meta["n_coarse"]
    cfg.n_fine = meta["n_fine"]
    cfg.validate()
    return cfg


def cmd_train(args) -> int:
    from .model import save_model
    from .training import train_two_stage, write_trace_csv

    corpus = read_corpus(args.corpus)
    meta = read_corpus_meta(args.corpus)
    model_cfg = _load_model_config(args, meta)
    train_cfg = load_config(args.config, "train") if args.config else TrainConfig()
    if args.seed is not None:
        train_cfg.seed = args.seed
    train_cfg.validate()

    out = Path(args.out)
    _prepare_out(out, args.force)
    run = train_two_stage(corpus, model_cfg, train_cfg)

    stage_dir = out / f"stage-{'joint' if train_cfg.stage == 'joint' else 'main'}"
    stage_dir.mkdir(parents=True)
    save_model(run.model, stage_dir / f"epoch-{train_cfg.epochs - 1}.ckpt")
    if run.model.fine_generator is not None and train_cfg.stage != "joint":
        gen_dir = out / "stage-generator"
        gen_dir.mkdir(parents=True)
        save_model(run.model.fine_generator, gen_dir / f"epoch-{train_cfg.epochs - 1}.ckpt")
    write_trace_csv(run.generator_trace, out / "generator_metrics.csv")
    write_trace_csv(run.main_trace, out / "main_metrics.csv")
    with open(out / "model_config.json", "w") as fh:
        json.dump(asdict(model_cfg), fh, indent=2)
    _write_manifest(out, asdict(train_cfg), Path(args.corpus), [train_cfg.seed])
    last = run.main_trace[-1] if run.main_trace else {}
    print(f"training complete; final epoch: {last}")
    return 0


def cmd_eval(args) -> int:
    from .evaluation import run_protocol
    from .model import AnticipationModel, build_fine_generator, load_model_
    from .training import split_corpus

    corpus = read_corpus(args.corpus)
    meta = read_corpus_meta(args.corpus)
    protocol = load_config(args.protocol, "protocol") if args.protocol else ProtocolSpec()
    protocol.validate()

    models = {}
    for seed in protocol.seeds:
        run_dir = Path(args.run) / f"seed-{seed}"
        ckpts = sorted(run_dir.glob("stage-*/epoch-*.ckpt"))
        main_ckpts = [p for p in ckpts if "stage-generator" not in str(p)]
        if not main_ckpts:
            print(f"missing checkpoint for seed {seed} under {run_dir}", file=sys.stderr)
            return 1
        with open(run_dir / "model_config.json") as fh:
            cfg = ModelConfig(**json.load(fh))
        model = AnticipationModel(cfg)
        model.fine_generator = build_fine_generator(cfg)
        gen_ckpts = [p for p in ckpts if "stage-generator" in str(p)]
        if gen_ckpts:
            load_model_(model.fine_generator, gen_ckpts[-1])
        load_model_(model, main_ckpts[-1])
        models[seed] = model

    holdout = split_corpus(corpus, TrainConfig().holdout_frac, protocol.seeds[0])[1] \
        if args.holdout else corpus
    out = Path(args.out)
    _prepare_out(out, args.force)
    summary = run_protocol(models, holdout, protocol, out, meta["n_fine"])
    _write_manifest(out, asdict(protocol), Path(args.corpus), list(protocol.seeds))
    for (alpha, beta), moc in summary.items():
        print(f"alpha={alpha} beta={beta} mean_moc={moc:.4f}")
    return 0


def cmd_ablate(args) -> int:
    from .evaluation import ABLATION_VARIANTS, run_ablation

    corpus = read_corpus(args.corpus)
    meta = read_corpus_meta(args.corpus)
    model_cfg = _load_model_config(args, meta)
    train_cfg = load_config(args.config, "train") if args.config else TrainConfig()
    out = Path(args.out)
    _prepare_out(out, args.force)
    rows = run_ablation(corpus, list(ABLATION_VARIANTS), model_cfg, train_cfg,
                        seeds=[1, 10, 13452], alphas=[0.1, 0.2], beta=0.5, out_dir=out)
    _write_manifest(out, asdict(train_cfg), Path(args.corpus), [1, 10, 13452])
    for row in rows:
        print(row)
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_scope, scope_tolerance

    checks = run_scope(args.scope, seed=args.seed or 0)
    failed = False
    for name, err in checks.items():
        tol = scope_tolerance(name)
        status = "ok" if err < tol else "FAIL"
        if err >= tol:
            failed = True
        print(f"{name:14s} max_rel_err={err:.3e} tol={tol:.0e} {status}")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmant",
                                     description="Desk-scale multi-modal action anticipation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="synthesize a corpus")
    p.add_argument("--spec", help="corpus spec JSON (defaults to the built-in spec)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="two-stage training run")
    p.add_argument("--config", help="train config JSON")
    p.add_argument("--model-config", help="model config JSON")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="run the alpha/beta/seed protocol")
    p.add_argument("--run", required=True, help="directory holding seed-<n>/ training runs")
    p.add_argument("--corpus", required=True)
    p.add_argument("--protocol", help="protocol spec JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--holdout", action="store_true",
                   help="evaluate the seeded holdout split instead of the full corpus")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and compare ablation variants")
    p.add_argument("--config", help="train config JSON")
    p.add_argument("--model-config", help="model config JSON")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p.add_argument("--scope", default="all",
                   choices=["encoder", "mhsa", "seg", "tcl", "anticipation", "full", "all"])
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CorpusIOError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
