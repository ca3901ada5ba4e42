"""`nvc` command line: features / synth / train / eval / convert.

Exit codes: 0 success, 1 usage, 2 config, 3 data, 4 numerical failure.
Training and evaluation write the fully-resolved configuration into the run
directory so a run can be reproduced from its artifacts alone.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from noisevc.errors import NvcError, UsageError


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="nvc", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("features", parser_class=_Parser, help="wav corpus -> mel tensors + manifest")
    p.add_argument("--in", dest="in_dir", required=True, help="wav corpus root (<speaker>/<utt>.wav)")
    p.add_argument("--out", dest="out_dir", required=True, help="output directory for mels + manifest")
    p.add_argument("--unseen", type=int, default=20, help="speakers held out entirely")
    p.add_argument("--seed", type=int, default=0, help="split seed")

    p = sub.add_parser("synth", parser_class=_Parser, help="generate the synthetic labeled corpus")
    p.add_argument("--speakers", type=int, default=10)
    p.add_argument("--utts", type=int, default=40, help="utterances per speaker")
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--symbols", type=int, default=12, help="content symbols")
    p.add_argument("--unseen-fraction", type=float, default=0.2)

    p = sub.add_parser("train", parser_class=_Parser, help="train a model")
    p.add_argument("--manifest", required=True, help="manifest.jsonl path")
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--out", dest="out_dir", required=True, help="run directory")
    p.add_argument("--preset", default="desk", choices=("desk", "paper"))
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--resume", default=None, help="checkpoint directory to resume from")

    p = sub.add_parser("eval", parser_class=_Parser, help="probing report for a checkpoint")
    p.add_argument("--ckpt", required=True, help="checkpoint directory")
    p.add_argument("--manifest", required=True)
    p.add_argument("--report", required=True, help="output report file")
    p.add_argument("--config", default=None)
    p.add_argument("--preset", default="desk", choices=("desk", "paper"))
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--map", dest="map_path", default=None, help="also write the 2-D embedding map here")
    p.add_argument("--tag", default="", help="model tag recorded in the report")

    p = sub.add_parser("convert", parser_class=_Parser, help="voice conversion")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--source", required=True, help="wav or .nvcm mel (content)")
    p.add_argument("--target", required=True, help="wav or .nvcm mel (speaker)")
    p.add_argument("--out", dest="out_path", required=True, help="output mel (.nvcm)")
    p.add_argument("--wav", dest="wav_path", default=None, help="also invert to a wav here")
    p.add_argument("--gl-iters", type=int, default=60, help="phase-recovery iterations")
    return parser


def _cmd_features(args) -> int:
    from noisevc.features import ingest_corpus

    manifest = ingest_corpus(args.in_dir, args.out_dir, args.unseen, args.seed)
    print(
        f"wrote {len(manifest.entries)} mels ({len(manifest.seen_speakers)} seen / "
        f"{len(manifest.unseen_speakers)} unseen speakers) under {args.out_dir}"
    )
    return 0


def _cmd_synth(args) -> int:
    from noisevc.synthcorpus import SyntheticSpec, generate_corpus

    spec = SyntheticSpec(
        n_speakers=args.speakers, n_content_symbols=args.symbols, seed=args.seed
    )
    manifest = generate_corpus(spec, args.utts, args.out_dir, args.unseen_fraction)
    print(
        f"wrote {len(manifest.entries)} synthetic utterances "
        f"({len(manifest.seen_speakers)} seen / {len(manifest.unseen_speakers)} unseen) "
        f"under {args.out_dir}"
    )
    return 0


def _cmd_train(args) -> int:
    from noisevc.config import load_config, train_config
    from noisevc.trainer import fit

    rc = load_config(args.config, args.overrides, preset=args.preset)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.resolved").write_text(rc.dump())
    ckpt, path = fit(args.manifest, train_config(rc), out_dir, resume_from=args.resume)
    print(f"trained to step {ckpt.step}; final checkpoint at {path}")
    return 0


def _cmd_eval(args) -> int:
    from noisevc.config import load_config, probe_config
    from noisevc.evalsuite import export_embedding_map, full_report

    rc = load_config(args.config, args.overrides, preset=args.preset)
    report = full_report(args.ckpt, args.manifest, model_tag=args.tag, cfg=probe_config(rc))
    report.save(args.report)
    report_dir = Path(args.report).parent
    (report_dir / "config.resolved").write_text(rc.dump())
    print(
        f"content-probe speaker acc {report.content_probe_speaker_acc:.2f}% | "
        f"speaker-probe acc {report.speaker_probe_acc:.2f}% | "
        f"L1 {report.l1_reconstruction:.4f}"
    )
    if args.map_path:
        meta = export_embedding_map(args.ckpt, args.manifest, args.map_path, seed=rc["eval.tsne_seed"])
        sil = meta["silhouette"]
        print(f"embedding map: {meta['n_points']} points, silhouette "
              f"{'n/a' if sil is None else f'{sil:.3f}'}")
    return 0


def _cmd_convert(args) -> int:
    from noisevc import nvcm
    from noisevc.convert import ConversionRequest, convert, invert_mel, load_mel_or_wav, write_wav

    source = load_mel_or_wav(args.source)
    target = load_mel_or_wav(args.target)
    out = convert(ConversionRequest(source, target, args.ckpt))
    nvcm.write_tensor(args.out_path, out.values)
    print(f"converted mel ({out.n_frames} frames) -> {args.out_path}")
    if args.wav_path:
        clip = invert_mel(out, n_iters=args.gl_iters)
        write_wav(args.wav_path, clip)
        print(f"inverted waveform -> {args.wav_path}")
    return 0


_COMMANDS = {
    "features": _cmd_features,
    "synth": _cmd_synth,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "convert": _cmd_convert,
}


def dispatch(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help()
            return 0
        if args.command not in _COMMANDS:
            raise UsageError(f"unknown subcommand {args.command!r}")
        return _COMMANDS[args.command](args)
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)
    except NvcError as exc:
        print(f"nvc: error: {exc}", file=sys.stderr)
        return exc.exit_code


def main(argv: list[str] | None = None) -> int:
    return dispatch(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
