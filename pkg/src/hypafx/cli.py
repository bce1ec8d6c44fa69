"""Command-line entry point: gen, train, eval, apply, verify, chains."""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

from . import __version__, afx, config, dataset, optim, pipeline
from .audio_io import read_wav, write_wav_atomic
from .errors import FormatError, TrainingError, UsageError
from .network import NetworkConfig

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("hypafx")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _kinds(text: str) -> list[str]:
    return [k.strip() for k in text.split(",") if k.strip()]


def _file_cfg(args) -> dict:
    return config.load_config(args.config) if getattr(args, "config", None) else {}


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_gen(args) -> int:
    d = config.resolve("data", {"dry": args.dry, "seed": args.seed, "split_mode": args.split_mode,
                                "wav_dir": args.wav_dir, "mix": args.mix, "effects": args.effects,
                                "max_len": args.max_len}, _file_cfg(args))
    m = pipeline.generate(args.out, n_dry=d["dry"], seed=d["seed"], split_mode=d["split_mode"],
                          wav_dir=d["wav_dir"], effects=_kinds(d["effects"]), max_len=d["max_len"], mix=d["mix"])
    counts = {s: len(m.split(s)) for s in dataset.SPLITS}
    print(f"wrote {len(m)} records ({m.config['n_dry']} dry x {m.config['n_classes']} chains) to "
          f"{Path(args.out) / 'manifest.jsonl'}; splits {counts}")
    return EXIT_OK


def cmd_train(args) -> int:
    fc = _file_cfg(args)
    mcfg = config.resolve("model", {"geometry": args.geometry, "curvature": args.curvature, "dim": args.dim,
                                    "blocks": args.blocks, "frame_features": args.frame_features}, fc)
    tcfg = config.resolve("train", {"epochs": args.epochs, "batch_size": args.batch_size, "lr": args.lr,
                                    "weight_decay": args.weight_decay, "seed": args.seed,
                                    "clip_norm": args.clip_norm, "decay_manifold": args.decay_manifold or None}, fc)
    manifest = dataset.read_manifest(args.manifest)
    net = NetworkConfig(geometry=mcfg["geometry"], c=float(mcfg["curvature"]), dim=int(mcfg["dim"]),
                        n_blocks=int(mcfg["blocks"]), feat_dim=int(mcfg["feat_dim"]),
                        attn_dim=int(mcfg["attn_dim"]), n_classes=int(manifest.config["n_classes"]),
                        frame_features=tuple(_kinds(mcfg["frame_features"])))
    tc = optim.TrainConfig(**tcfg)
    provenance = {"model": mcfg, "train": tcfg, "manifest": str(args.manifest), "version": __version__}
    _, result = pipeline.run_training(manifest, net, tc, args.out, provenance=provenance)
    if result.history:
        print(f"best val loss {result.best_val_loss:.6f} at epoch {result.best_epoch}")
    else:
        print("0 epochs: saved the initial model")
    print(f"checkpoint: {Path(args.out) / 'model.ckpt'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    manifest = dataset.read_manifest(args.manifest)
    report = pipeline.run_evaluation(args.checkpoint, manifest, args.out, args.first_n, args.latest_n,
                                     args.debug_perfect, args.split,
                                     provenance={"manifest": str(args.manifest), "version": __version__})
    mean, se = report["aggregate"]["mean"], report["aggregate"]["stderr"]
    for key in sorted(mean):
        print(f"{key:24s} {mean[key]:.4f} +/- {se[key]:.4f}")
    print(f"report: {Path(args.out) / 'report.json'}")
    return EXIT_OK


def cmd_apply(args) -> int:
    chain = afx.parse_chain(args.chain)
    audio, sr = read_wav(args.input)
    if len(chain) == 0:
        y = audio
    else:
        y, gain = afx.render_chain(audio, chain, sr)
        if gain != 1.0:
            print(f"output peak-normalised by {gain:.4f}")
    write_wav_atomic(args.output, y, sr)
    print(f"wrote {args.output} ({afx.format_chain(chain) or 'empty chain'})")
    return EXIT_OK


def cmd_verify(args) -> int:
    from . import verify

    names = args.suite or list(verify.SUITES)
    for n in names:
        if n not in verify.SUITES:
            raise UsageError(f"unknown suite {n!r}; choose from {', '.join(verify.SUITES)}")
    checks = verify.run_all(names)
    for c in checks:
        print(c.line())
    failed = [c for c in checks if not c.passed]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    return EXIT_FAIL if failed else EXIT_OK


def cmd_chains(args) -> int:
    vocab = afx.ChainVocabulary(_kinds(args.effects), args.max_len)
    for i, ch in enumerate(vocab.chains):
        print(f"{i}\t{afx.chain_key(ch)}")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hypafx", description="Audio-effect chain recognition in hyperbolic space.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate dry/wet WAVs and a manifest")
    g.add_argument("--out", required=True, type=Path)
    g.add_argument("--dry", type=int, help="number of synthetic dry clips (default 64)")
    g.add_argument("--wav-dir", type=Path, help="ingest dry WAVs from here instead of synthesising")
    g.add_argument("--seed", type=int)
    g.add_argument("--split-mode", choices=("group", "sample"))
    g.add_argument("--effects", help="comma-separated effect kinds")
    g.add_argument("--max-len", type=int)
    g.add_argument("--mix", type=float, help="override the wet/dry mix of delay and chorus")
    g.add_argument("--config", type=Path)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train one model")
    t.add_argument("--manifest", required=True, type=Path)
    t.add_argument("--out", required=True, type=Path)
    t.add_argument("--geometry", choices=("euclidean", "hyperbolic"))
    t.add_argument("--curvature", type=float)
    t.add_argument("--dim", type=int, help="output feature dimension J")
    t.add_argument("--blocks", type=int, help="number of FC blocks I")
    t.add_argument("--frame-features", help="comma list from logmel,delta,square")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--weight-decay", type=float)
    t.add_argument("--clip-norm", type=float)
    t.add_argument("--decay-manifold", action="store_true", help="also decay ball-valued parameters")
    t.add_argument("--seed", type=int)
    t.add_argument("--config", type=Path)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate checkpoints on a split")
    e.add_argument("--checkpoint", required=True, nargs="+", type=Path, help="one per seed")
    e.add_argument("--manifest", required=True, type=Path)
    e.add_argument("--out", required=True, type=Path)
    e.add_argument("--split", default="test", choices=dataset.SPLITS)
    e.add_argument("--first-n", type=_int_list, default=[])
    e.add_argument("--latest-n", type=_int_list, default=[])
    e.add_argument("--debug-perfect", action="store_true", help="replace predictions with the truth")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("apply", help="render an effect chain on a WAV file")
    a.add_argument("chain", help="e.g. 'distortion:drive_db=10>delay:delay_seconds=0.3'")
    a.add_argument("input", type=Path)
    a.add_argument("output", type=Path)
    a.set_defaults(func=cmd_apply)

    v = sub.add_parser("verify", help="run the self-check suites")
    v.add_argument("--suite", action="append", help="run only this suite (repeatable)")
    v.set_defaults(func=cmd_verify)

    c = sub.add_parser("chains", help="print the chain enumeration")
    c.add_argument("--effects", default=",".join(afx.KINDS))
    c.add_argument("--max-len", type=int, default=3)
    c.set_defaults(func=cmd_chains)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (OSError, FormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 130


if __name__ == "__main__":
    with warnings.catch_warnings():
        sys.exit(main())
