"""Command-line entry point.

Subcommands cover the full pipeline: synth-data (procedural paired
corpus), prepare (mel feature cache), pretrain (embedder on speaker
recognition), train (adversarial loop), generate (voice WAVs to face
PNGs), evaluate (matching / gender / specificity / grids), and gradcheck
(finite-difference suite). Exit codes: 0 success, 1 validation problem,
2 runtime abort. All randomness flows from --seed; every run writes its
resolved configuration into the output directory.
"""

from __future__ import annotations

import argparse
import configparser
import sys
from pathlib import Path

import numpy as np

import voice2face
from voice2face import audio, images
from voice2face.backend import backend_name
from voice2face.checkpoint import load_checkpoint, save_checkpoint
from voice2face.dataset import load_manifest, synthesize_corpus
from voice2face.errors import (CheckpointError, TrainingAborted, Voice2FaceError)
from voice2face.evaluation import (build_trials, export_grids, gender_accuracy,
                                   matching_accuracy, noise_feature_set,
                                   specificity_stats, train_gender_probe,
                                   wilson_ci, write_reports)
from voice2face.gradcheck import run_gradient_suite
from voice2face.networks import ArchConfig, ModelBundle
from voice2face.training import (TrainConfig, embedder_accuracy, freeze_embedder,
                                 load_corpus, load_voice_features,
                                 prepare_mel_cache, pretrain_embedder, train)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

GRAD_TOLERANCE = 1e-4


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; the CLI contract wants 1.
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_VALIDATION)


def _build_parser():
    parser = _Parser(prog="voice2face", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0,
                       help="root random seed (fixed default, not time-based)")
        p.add_argument("--output-dir", type=Path, default=Path("runs/latest"))
        p.add_argument("--force", action="store_true",
                       help="allow overwriting existing outputs")
        p.add_argument("--config", type=Path, default=None,
                       help="INI config file; flags override file values")

    p = sub.add_parser("synth-data", help="generate the synthetic paired corpus")
    common(p)
    p.add_argument("--corpus-root", type=Path, required=True)
    p.add_argument("--identities", type=int, default=32)
    p.add_argument("--voices-per-id", type=int, default=20)
    p.add_argument("--faces-per-id", type=int, default=20)
    p.add_argument("--test-fraction", type=float, default=0.25)
    p.add_argument("--val-fraction", type=float, default=0.0)

    p = sub.add_parser("prepare", help="cache normalized mel features")
    common(p)
    p.add_argument("--corpus-root", type=Path, required=True)
    p.add_argument("--no-vad", action="store_true")

    p = sub.add_parser("pretrain", help="pretrain the voice embedder")
    common(p)
    p.add_argument("--corpus-root", type=Path, required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--width", type=float, default=None)
    p.add_argument("--batch", type=int, default=None)

    p = sub.add_parser("train", help="run the adversarial training loop")
    common(p)
    p.add_argument("--corpus-root", type=Path, required=True)
    p.add_argument("--embedder", type=Path, required=True,
                   help="checkpoint produced by the pretrain command")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--width", type=float, default=None)
    p.add_argument("--checkpoint-every", type=int, default=None)

    p = sub.add_parser("generate", help="generate face PNGs from voice WAVs")
    common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--input", type=Path, required=True,
                   help="a WAV file or a directory of WAVs")
    p.add_argument("--no-vad", action="store_true")

    p = sub.add_parser("evaluate", help="run the quantitative protocols")
    common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--corpus-root", type=Path, required=True)
    p.add_argument("--protocol", choices=("matching", "gender", "specificity",
                                          "grids", "all"), default="all")
    p.add_argument("--stratified", action="store_true")
    p.add_argument("--max-trials", type=int, default=100_000)
    p.add_argument("--samples", type=int, default=500,
                   help="per-class sample count for the specificity protocol")

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    common(p)

    return parser


def _load_config_file(path) -> dict:
    cfg = configparser.ConfigParser()
    read = cfg.read(path)
    if not read:
        raise Voice2FaceError(f"config file {path} not found")
    flat = {}
    for section in cfg.sections():
        for key, value in cfg.items(section):
            flat[key] = value
    return flat


def _train_config(args) -> TrainConfig:
    values = {}
    if args.config is not None:
        file_values = _load_config_file(args.config)
        fields = TrainConfig.__dataclass_fields__
        for key, raw in file_values.items():
            if key not in fields:
                raise Voice2FaceError(f"unknown config key {key!r}")
            typ = fields[key].type
            if typ in ("bool", bool):
                values[key] = raw.lower() in ("1", "true", "yes")
            elif typ in ("int", int):
                values[key] = int(raw)
            elif typ in ("float", float):
                values[key] = float(raw)
            else:
                values[key] = raw
    values["seed"] = args.seed
    for flag, key in (("batch", "batch_voices"), ("width", "width"),
                      ("iterations", "total_iterations"),
                      ("checkpoint_every", "checkpoint_every"),
                      ("steps", "pretrain_steps")):
        if getattr(args, flag, None) is not None:
            values[key] = getattr(args, flag)
    if "batch_voices" in values:
        values.setdefault("batch_faces", values["batch_voices"])
    return TrainConfig(**values)


def _write_run_manifest(args, extra=None):
    out = args.output_dir
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"version = {voice2face.__version__}",
             f"kernel_backend = {backend_name()}",
             f"command = {args.command}"]
    for key, value in sorted(vars(args).items()):
        if key in ("command",):
            continue
        lines.append(f"{key} = {value}")
    for key, value in sorted((extra or {}).items()):
        lines.append(f"{key} = {value}")
    (out / "run_config.txt").write_text("\n".join(lines) + "\n")


def _refuse_overwrite(path, force):
    if path.exists() and not force:
        raise Voice2FaceError(
            f"{path} already exists; pass --force to overwrite")


def _cmd_synth_data(args):
    root = args.corpus_root
    _refuse_overwrite(root / "manifest.csv", args.force)
    manifest = synthesize_corpus(root, args.identities, args.voices_per_id,
                                 args.faces_per_id, args.seed,
                                 test_fraction=args.test_fraction,
                                 val_fraction=args.val_fraction)
    _write_run_manifest(args, {"entries": len(manifest.entries)})
    print(f"synthesized {len(manifest.entries)} entries under {root}")
    return EXIT_OK


def _cmd_prepare(args):
    manifest = load_manifest(args.corpus_root / "manifest.csv")
    written = prepare_mel_cache(args.corpus_root, manifest,
                                use_vad=not args.no_vad)
    _write_run_manifest(args, {"cached": written})
    print(f"cached {written} mel spectrograms")
    return EXIT_OK


def _cmd_pretrain(args):
    manifest = load_manifest(args.corpus_root / "manifest.csv")
    config = _train_config(args)
    data = load_corpus(args.corpus_root, manifest, split="train",
                       use_vad=config.use_vad)
    embedder, head = pretrain_embedder(data, config)
    acc = embedder_accuracy(embedder, head, data)

    bundle = ModelBundle.build(ArchConfig(classes=data.n_classes,
                                          width=config.width), seed=config.seed)
    bundle.embedder = embedder
    freeze_embedder(bundle)
    ckpt = args.output_dir / "embedder.ckpt"
    _refuse_overwrite(ckpt, args.force)
    args.output_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt, bundle, extras={"stage": "pretrained",
                                          "train_accuracy": acc,
                                          "config": config.to_dict()})
    _write_run_manifest(args, {"train_accuracy": f"{acc:.4f}"})
    print(f"pretrained embedder: train speaker accuracy {acc:.3f} -> {ckpt}")
    return EXIT_OK


def _cmd_train(args):
    manifest = load_manifest(args.corpus_root / "manifest.csv")
    config = _train_config(args)
    bundle, extras = load_checkpoint(args.embedder)
    if extras.get("stage") != "pretrained":
        print("warning: embedder checkpoint was not produced by pretrain",
              file=sys.stderr)
    freeze_embedder(bundle)
    data = load_corpus(args.corpus_root, manifest, split="train",
                       use_vad=config.use_vad)
    if bundle.arch.classes != data.n_classes:
        raise Voice2FaceError(
            f"checkpoint was built for {bundle.arch.classes} classes, "
            f"corpus has {data.n_classes} train identities")
    _refuse_overwrite(args.output_dir / "final.ckpt", args.force)
    _write_run_manifest(args, config.to_dict())
    reports = train(bundle, data, config, args.output_dir)
    last = reports[-1] if reports else None
    if last is not None:
        print(last.format_line())
    print(f"finished {config.total_iterations} iterations -> "
          f"{args.output_dir / 'final.ckpt'}")
    return EXIT_OK


def _cmd_generate(args):
    bundle, _ = load_checkpoint(args.checkpoint)
    bundle.eval_mode()
    if args.input.is_dir():
        wavs = sorted(args.input.glob("*.wav"))
        if not wavs:
            raise Voice2FaceError(f"no .wav files in {args.input}")
    else:
        wavs = [args.input]
    args.output_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    for wav_path in wavs:
        out_path = args.output_dir / (wav_path.stem + ".png")
        _refuse_overwrite(out_path, args.force)
        wav = audio.read_wav(wav_path)
        spec = audio.voice_to_features(wav, use_vad=not args.no_vad)
        face = bundle.generate_face(bundle.embed_voice(spec))
        images.save_png(out_path, face)
        outputs.append(out_path)
    _write_run_manifest(args, {"inputs": len(wavs)})
    print(f"wrote {len(outputs)} face image(s) to {args.output_dir}")
    return EXIT_OK


def _cmd_evaluate(args):
    bundle, _ = load_checkpoint(args.checkpoint)
    bundle.eval_mode()
    manifest = load_manifest(args.corpus_root / "manifest.csv")
    args.output_dir.mkdir(parents=True, exist_ok=True)
    reports = []

    if args.protocol in ("matching", "all"):
        trials = build_trials(manifest, stratify=args.stratified,
                              max_trials=args.max_trials, rng_seed=args.seed)
        name = "matching_accuracy_stratified" if args.stratified else "matching_accuracy"
        reports.append(matching_accuracy(bundle, trials, args.corpus_root, name=name))

    if args.protocol in ("gender", "specificity", "all"):
        test_data = load_corpus(args.corpus_root, manifest, split="test")

    if args.protocol in ("gender", "all"):
        train_data = load_corpus(args.corpus_root, manifest, split="train")
        probe = train_gender_probe(train_data.faces, train_data.face_genders,
                                   bundle.arch, seed=args.seed)
        reports.append(gender_accuracy(bundle, test_data.voice_specs,
                                       test_data.voice_genders, probe,
                                       test_data.faces, test_data.face_genders))

    if args.protocol in ("specificity", "all"):
        n = args.samples
        speech = test_data.voice_specs
        while len(speech) < n:
            speech = speech + test_data.voice_specs
        noise = noise_feature_set(n, args.seed)
        reports.extend(specificity_stats(bundle, speech[:n], noise,
                                         min_samples=min(30, n)))

    if args.protocol in ("grids", "all"):
        paths = export_grids(bundle, args.corpus_root, manifest,
                             args.output_dir, seed=args.seed)
        print("grids: " + ", ".join(str(p) for p in paths))

    if reports:
        report_path = args.output_dir / "eval_report.txt"
        write_reports(report_path, reports)
        for r in reports:
            print(r.format_line())
    _write_run_manifest(args)
    return EXIT_OK


def _cmd_gradcheck(args):
    results = run_gradient_suite()
    worst = 0.0
    ok = True
    for name, err in results:
        status = "pass" if err < GRAD_TOLERANCE else "FAIL"
        if err >= GRAD_TOLERANCE:
            ok = False
        worst = max(worst, err)
        print(f"{status} {name}: {err:.3e}")
    print(f"worst relative error: {worst:.3e} (tolerance {GRAD_TOLERANCE:.0e})")
    _write_run_manifest(args, {"worst": f"{worst:.3e}"})
    return EXIT_OK if ok else EXIT_RUNTIME


_COMMANDS = {
    "synth-data": _cmd_synth_data,
    "prepare": _cmd_prepare,
    "pretrain": _cmd_pretrain,
    "train": _cmd_train,
    "generate": _cmd_generate,
    "evaluate": _cmd_evaluate,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (CheckpointError, TrainingAborted) as e:
        print(f"runtime abort: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except Voice2FaceError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
