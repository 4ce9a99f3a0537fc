"""Command-line entry point: synth, features, train, eval, align.

One binary, subcommands only, every flag documented, no environment
variables. Failures raise package errors which main() turns into a
single stderr line and exit code 2.
"""

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .config import from_dict as config_from_dict
from .config import load_config
from .corpus import SyntheticSpec, generate_synthetic, load_manifest
from .encoders import load_checkpoint, restore_model
from .errors import CheckpointError, ConfigError, VgsError
from .evaluation import (
    DIRECTIONS,
    align_pair,
    embed_split,
    evaluate_all_directions,
    export_heatmap,
    format_reports,
    reports_to_json,
)
from .frontends import compute_logmel, load_image, preprocess_image, read_wav, write_imf1, write_lmf1
from .trainer import train


def cmd_synth(args) -> int:
    if args.spec:
        cfg = load_config(args.spec)
        if cfg.synthetic is None:
            raise ConfigError(f"{args.spec}: config has no synthetic section")
        spec = cfg.synthetic
    elif args.n is None:
        raise ConfigError("synth needs --n (or a --spec file with a synthetic section)")
    else:
        spec = SyntheticSpec(n_items=args.n, seed=args.seed or 0)
    overrides = {}
    if args.n is not None:
        overrides["n_items"] = args.n
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        spec = dataclasses.replace(spec, **overrides)
    corpus = generate_synthetic(spec, args.out)
    n_train, n_val = len(corpus.split("train")), len(corpus.split("val"))
    print(f"wrote {len(corpus.triples)} triples ({n_train} train, {n_val} val) under {args.out}")
    return 0


def cmd_features(args) -> int:
    cfg = load_config(args.config)
    if args.wav:
        spec = compute_logmel(read_wav(args.wav), cfg.mel)
        write_lmf1(args.out, spec)
        print(
            f"wrote log-mels {spec.values.shape[0]}x{spec.values.shape[1]} "
            f"({spec.valid_frames} valid frames) to {args.out}"
        )
    else:
        tensor = preprocess_image(load_image(args.image), cfg.image, mode="eval")
        write_imf1(args.out, tensor)
        print(f"wrote image tensor {'x'.join(map(str, tensor.shape))} to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.scenario:
        cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, scenario=args.scenario))
        cfg.validate()
    corpus = load_manifest(args.data)
    result = train(cfg, corpus, args.out, resume_from=args.resume)
    print(f"final checkpoint: {result.final_checkpoint}")
    return 0


def _model_from_checkpoint(path):
    arrays, meta = load_checkpoint(path)
    if "config" not in meta:
        raise CheckpointError(f"{path}: metadata carries no embedded config")
    run_cfg = config_from_dict(meta["config"])
    return restore_model(run_cfg.encoder, arrays), run_cfg


def cmd_eval(args) -> int:
    model, run_cfg = _model_from_checkpoint(args.ckpt)
    corpus = load_manifest(args.data)
    lib = embed_split(model, corpus, args.split, run_cfg.mel, run_cfg.image, run_cfg.eval.batch_size)
    reports = evaluate_all_directions(lib, run_cfg.eval.recall_ks)
    if args.directions:
        wanted = args.directions.split(",")
        unknown = [d for d in wanted if d not in DIRECTIONS]
        if unknown:
            raise ConfigError(f"unknown directions {unknown}, valid: {list(DIRECTIONS)}")
        reports = {d: reports[d] for d in DIRECTIONS if d in wanted}
    print(format_reports(reports))
    print(reports_to_json(reports))
    return 0


def cmd_align(args) -> int:
    model, run_cfg = _model_from_checkpoint(args.ckpt)
    corpus = load_manifest(args.data)
    triple = corpus.by_id(args.id)
    sim = align_pair(model, triple, run_cfg.mel)
    out = Path(args.out)
    export_heatmap(sim, out)
    sidecar = Path(str(out) + ".json")
    sidecar.write_text(
        json.dumps(
            {
                "id": triple.id,
                "row_step_s": sim.row_step_s,
                "col_step_s": sim.col_step_s,
                "rows": sim.values.shape[0],
                "cols": sim.values.shape[1],
                "values": sim.values.tolist(),
            },
            indent=2,
        ),
        encoding="utf-8",
    )
    print(f"wrote heatmap {out} and matrix {sidecar}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="vgs",
        description="Visually grounded multilingual speech embeddings: "
        "synthesize corpora, extract features, train, evaluate retrieval, export alignments.",
    )
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    s = sub.add_parser("synth", help="render a synthetic triple corpus")
    s.add_argument("--out", required=True, help="output directory for manifest and media")
    s.add_argument("--n", type=int, help="number of triples (overrides the spec file)")
    s.add_argument("--seed", type=int, help="generator seed (overrides the spec file)")
    s.add_argument("--spec", help="run config file whose synthetic section sets the defaults")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("features", help="dump frontend features for one file")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--wav", help="input WAV file (writes an LMF1 log-mel dump)")
    g.add_argument("--image", help="input image file (writes an IMF1 tensor dump)")
    s.add_argument("--config", required=True, help="run config supplying the frontend settings")
    s.add_argument("--out", required=True, help="output feature file")
    s.set_defaults(func=cmd_features)

    s = sub.add_parser("train", help="train encoders under a scenario")
    s.add_argument("--config", required=True, help="run config file")
    s.add_argument("--scenario", help="override the configured training scenario")
    s.add_argument("--data", required=True, help="corpus manifest (JSONL)")
    s.add_argument("--out", required=True, help="checkpoint and log directory")
    s.add_argument("--resume", help="checkpoint to continue from")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="cross-modal retrieval recalls")
    s.add_argument("--ckpt", required=True, help="checkpoint to evaluate")
    s.add_argument("--data", required=True, help="corpus manifest (JSONL)")
    s.add_argument("--split", default="val", help="corpus split to evaluate (default val)")
    s.add_argument("--directions", help="comma-separated subset of e2i,i2e,h2i,i2h,e2h,h2e")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("align", help="speech-to-speech alignment heatmap for one triple")
    s.add_argument("--ckpt", required=True, help="checkpoint to use")
    s.add_argument("--data", required=True, help="corpus manifest (JSONL)")
    s.add_argument("--id", required=True, help="triple id to align")
    s.add_argument("--out", required=True, help="output PNG path (matrix JSON lands beside it)")
    s.set_defaults(func=cmd_align)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except VgsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
