"""Command-line surface.

Subcommands: gen-corpus, preprocess, train, synth, align.  Exit codes:
0 success, 1 usage error, 2 data error, 3 numeric error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import dsp
from .alignment import analyze, emit_csv, emit_pgm
from .config import load_run_config
from .corpus import (SyntheticSpec, extract_features, generate_synthetic_corpus,
                     load_manifest, preprocess_corpus, read_cache)
from .errors import ConfigError, EmoTtsError, NumericError, UsageError
from .model import EMOTIONS, TacotronModel, synthesize
from .training import AdamState, fit, load_checkpoint, save_checkpoint


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="emotts", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    gen = sub.add_parser("gen-corpus", help="generate a synthetic tone corpus")
    gen.add_argument("--n", type=int, required=True, help="number of utterances")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True, help="output directory")

    pre = sub.add_parser("preprocess", help="build the feature cache for a manifest")
    pre.add_argument("--manifest", required=True)
    pre.add_argument("--config", required=True)
    pre.add_argument("--cache", required=True)

    train = sub.add_parser("train", help="train a model on a feature cache")
    train.add_argument("--config", required=True)
    train.add_argument("--cache", required=True)
    train.add_argument("--ckpt-dir", required=True)
    train.add_argument("--resume", action="store_true")
    train.add_argument("--mode", choices=["teacher", "semi", "free-eval"])
    train.add_argument("--attention", choices=["soft", "monotonic"])

    synth = sub.add_parser("synth", help="synthesize speech from a checkpoint")
    synth.add_argument("--ckpt", required=True)
    synth.add_argument("--text", required=True)
    synth.add_argument("--emotion", required=True, choices=list(EMOTIONS))
    synth.add_argument("--out", required=True, help="output wav path")
    synth.add_argument("--emit-align", choices=["pgm", "csv"])

    align = sub.add_parser("align", help="teacher-forced alignment report over a corpus")
    align.add_argument("--ckpt", required=True)
    align.add_argument("--manifest", required=True)
    align.add_argument("--report", required=True, help="output csv path")
    return parser


def _latest_checkpoint(ckpt_dir: Path):
    candidates = sorted(ckpt_dir.glob("ckpt_*.etts"))
    return candidates[-1] if candidates else None


def _cmd_gen_corpus(args) -> int:
    manifest = generate_synthetic_corpus(args.n, SyntheticSpec(), args.seed, args.out)
    print(manifest)
    return 0


def _cmd_preprocess(args) -> int:
    cfg = load_run_config(args.config)
    entries = load_manifest(args.manifest)
    summary = preprocess_corpus(entries, cfg, args.cache, Path(args.manifest).parent)
    print(f"kept {summary['kept']} utterances, skipped {summary['skipped']}, "
          f"{summary['hours']:.3f} h of audio -> {args.cache}")
    return 0


def _cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    if args.mode:
        cfg.train.mode = args.mode
    if args.attention:
        cfg.model.attention_mode = args.attention
    records, cache_meta = read_cache(args.cache)
    if cache_meta["audio"].get("n_mels") != cfg.audio.n_mels:
        raise ConfigError(
            f"cache was built with n_mels={cache_meta['audio'].get('n_mels')}, "
            f"config says {cfg.audio.n_mels}")
    ckpt_dir = Path(args.ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)

    if cfg.train.mode == "free-eval":
        return _free_eval(cfg, records, ckpt_dir)

    start_step = 0
    if args.resume and (latest := _latest_checkpoint(ckpt_dir)) is not None:
        model, opt, start_step, _ = load_checkpoint(latest,
                                                    expect_model_config=cfg.model_snapshot())
        print(f"resumed from {latest} at step {start_step}")
    else:
        model = TacotronModel(cfg.model, seed=cfg.seed)
        opt = AdamState(model.parameters())

    log_path = ckpt_dir / "train_log.csv"
    with open(log_path, "a" if args.resume else "w", newline="\n") as log:
        step, loss = fit(model, records, cfg.train, opt, start_step=start_step,
                         log_file=log)
    ckpt_path = ckpt_dir / f"ckpt_{step:06d}.etts"
    save_checkpoint(ckpt_path, model, opt, step, extra_config=cfg.to_dict())
    print(f"step {step}: loss {loss:.6f} -> {ckpt_path}")
    return 0


def _free_eval(cfg, records, ckpt_dir: Path) -> int:
    latest = _latest_checkpoint(ckpt_dir)
    if latest is None:
        raise UsageError("free-eval needs an existing checkpoint in --ckpt-dir")
    model, _, _, _ = load_checkpoint(latest)
    report_path = ckpt_dir / "free_eval.csv"
    with open(report_path, "w", newline="\n") as f:
        f.write("id,dec_steps,truncated,sharpness,diagonality,gap_count\n")
        for record in records:
            memory = model.encode_ids(record.char_ids)
            e = model.embed_emotion(record.emotion_id)
            out = model.decode(memory, e, e, mode="free")
            rep = analyze(out.alignment)
            f.write(f"{record.id},{out.dec_steps},{int(out.truncated)},"
                    f"{rep.sharpness:.6f},{rep.diagonality:.6f},{rep.gap_count}\n")
    print(report_path)
    return 0


def _audio_config_from(meta, ckpt_path) -> dsp.AudioConfig:
    snapshot = meta.get("extra_config", {}).get("audio")
    if not snapshot:
        raise ConfigError(f"{ckpt_path}: checkpoint carries no audio configuration")
    return dsp.AudioConfig(**snapshot)


def _cmd_synth(args) -> int:
    model, _, _, meta = load_checkpoint(args.ckpt)
    audio_cfg = _audio_config_from(meta, args.ckpt)
    result = synthesize(model, args.text, args.emotion, audio_cfg)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    dsp.wav_write(out_path, result.waveform)
    if result.truncated:
        print("warning: decoder hit max steps before the silence criterion",
              file=sys.stderr)
    if args.emit_align == "pgm":
        emit_pgm(result.alignment, out_path.with_suffix(out_path.suffix + ".align.pgm"))
    elif args.emit_align == "csv":
        emit_csv(result.alignment, out_path.with_suffix(out_path.suffix + ".align.csv"))
    print(out_path)
    return 0


def _cmd_align(args) -> int:
    model, _, _, meta = load_checkpoint(args.ckpt)
    audio_cfg = _audio_config_from(meta, args.ckpt)
    mel_bank = dsp.mel_filterbank(audio_cfg)
    entries = load_manifest(args.manifest)
    manifest_dir = Path(args.manifest).parent
    with open(args.report, "w", newline="\n") as f:
        f.write("id,dec_steps,enc_steps,sharpness,entropy,diagonality,gap_count,coverage\n")
        for entry in entries:
            wave = dsp.wav_read(manifest_dir / entry.wav_path)
            mel, _ = extract_features(wave, audio_cfg, mel_bank)
            frames = -(-mel.shape[0] // model.cfg.r) * model.cfg.r
            targets = np.zeros((frames, model.cfg.n_mels))
            targets[:mel.shape[0]] = mel
            memory = model.encode_text(entry.text)
            e = model.embed_emotion(entry.emotion)
            out = model.decode(memory, e, e, targets=targets, mode="teacher")
            rep = analyze(out.alignment)
            f.write(f"{entry.id},{rep.dec_steps},{rep.enc_steps},{rep.sharpness:.6f},"
                    f"{rep.entropy:.6f},{rep.diagonality:.6f},{rep.gap_count},"
                    f"{rep.coverage:.6f}\n")
    print(args.report)
    return 0


_COMMANDS = {
    "gen-corpus": _cmd_gen_corpus,
    "preprocess": _cmd_preprocess,
    "train": _cmd_train,
    "synth": _cmd_synth,
    "align": _cmd_align,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
        return _COMMANDS[args.command](args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except NumericError as err:
        print(f"numeric error: {err}", file=sys.stderr)
        return 3
    except (EmoTtsError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
