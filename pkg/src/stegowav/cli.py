"""Command-line entry point.

Subcommands: synth, train, embed, reveal, eval, robustness, cost,
spectrogram.  Exit codes: 0 success, 1 usage/config error, 2 data/IO error,
3 numeric failure.  Config files are flat key=value text ('#' comments);
--set key=value flags override file values.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path


from . import costing, dsp, imageops, metrics, pipeline, robustness, wavio
from .errors import ConfigError, DataError, NumericError, UsageError


class _Parser(argparse.ArgumentParser):
    """argparse variant that exits 1 (not 2) on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _add_config_args(sub):
    sub.add_argument("--config", type=Path, help="key=value config file")
    sub.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                     help="override a config key (repeatable)")
    sub.add_argument("--seed", type=int, help="override the config seed")
    sub.add_argument("--steps", type=int, help="override the training step count")


def _load_config(args, base=None):
    cfg = base if base is not None else pipeline.PipelineConfig()
    if args.config is not None:
        try:
            text = args.config.read_text(encoding="utf-8")
        except OSError as exc:
            raise DataError(f"{args.config}: {exc}") from exc
        cfg = pipeline.parse_config_text(text, base=cfg, source=str(args.config))
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if getattr(args, "steps", None) is not None:
        overrides.append(f"steps={args.steps}")
    if overrides:
        cfg = pipeline.parse_config_text("\n".join(overrides), base=cfg, source="--set")
    return cfg


def _build_parser():
    parser = _Parser(prog="stegowav",
                     description="Image-in-audio steganography on spectral containers.")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("synth", parents=[], help="synthesize a secret/cover dataset")
    _add_config_args(p)
    p.add_argument("--n", type=int, default=16, help="number of sample pairs")
    p.add_argument("--profile", default="desk", choices=sorted(pipeline.PROFILES))
    p.add_argument("--out", type=Path, required=True, help="output directory")

    p = subs.add_parser("train", help="train a model on a dataset directory")
    _add_config_args(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="checkpoint path")
    p.add_argument("--log", type=Path, help="per-step loss CSV path")

    p = subs.add_parser("embed", help="hide an image in a cover audio file")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--image", type=Path, required=True, help="secret image (P6 .ppm)")
    p.add_argument("--audio", type=Path, required=True, help="cover audio (PCM16 mono .wav)")
    p.add_argument("--out", type=Path, required=True, help="stego .wav path")

    p = subs.add_parser("reveal", help="decode the hidden image from stego audio")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--audio", type=Path, required=True, help="stego .wav")
    p.add_argument("--out", type=Path, required=True, help="revealed image .ppm path")
    p.add_argument("--reference", type=Path,
                   help="original secret (P6); prints a metrics row when given")

    p = subs.add_parser("eval", help="metrics row over a dataset")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, help="append CSV here (header if new)")

    p = subs.add_parser("robustness", help="frame-dropout sweep")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--fractions", default="1.0,0.75,0.5,0.25,0.125")
    p.add_argument("--modes", default="sequential,random")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--dump-dir", type=Path, help="optionally dump revealed images per cell")

    p = subs.add_parser("cost", help="parameter/MAC cost table")
    _add_config_args(p)
    p.add_argument("--out", type=Path, help="CSV path (text table prints to stdout)")

    p = subs.add_parser("spectrogram", help="dump a log-magnitude raster (P5)")
    _add_config_args(p)
    p.add_argument("--audio", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    return parser


def _require(path):
    if not path.exists():
        raise DataError(f"{path}: file not found")
    return path


def _cmd_synth(args):
    cfg = _load_config(args, base=pipeline.profile_config(args.profile))
    pairs = pipeline.synth_dataset(args.n, profile=args.profile, seed=cfg.seed, cfg=cfg)
    pipeline.save_dataset(pairs, args.out)
    print(f"wrote {len(pairs)} pairs to {args.out}")
    return 0


def _cmd_train(args):
    cfg = _load_config(args)
    pairs = pipeline.load_dataset(_require(args.data))
    bundle, log = pipeline.train(pairs, cfg)
    pipeline.save_checkpoint(bundle, args.out)
    if args.log is not None:
        args.log.write_text(log.to_csv(), encoding="utf-8")
    totals = log.totals()
    if totals:
        print(f"trained {cfg.steps} steps: loss {totals[0]:.6g} -> {totals[-1]:.6g}")
    print(f"checkpoint: {args.out} ({bundle.param_count()} parameters)")
    return 0


def _cmd_embed(args):
    bundle = pipeline.load_checkpoint(_require(args.model))
    secret = imageops.read_ppm(_require(args.image))
    cover = wavio.read_wav(_require(args.audio))
    stego, diag = pipeline.embed(secret, cover, bundle)
    wavio.write_wav(stego, args.out)
    print(f"stego: {args.out}  snr_db={diag['stego_snr_db']:.3f}  "
          f"container_l2={diag['container_l2']:.6g}")
    return 0


def _cmd_reveal(args):
    bundle = pipeline.load_checkpoint(_require(args.model))
    stego = wavio.read_wav(_require(args.audio))
    revealed = pipeline.reveal(stego, bundle)
    imageops.write_ppm(revealed, args.out)
    print(f"revealed: {args.out}")
    if args.reference is not None:
        secret = imageops.read_ppm(_require(args.reference))
        cfg = bundle.cfg
        row = metrics.MetricsRow(
            method=cfg.method, container=cfg.container, beta=cfg.beta, lam=cfg.lam,
            revealed_ssim=metrics.ssim(secret, revealed),
            revealed_psnr=metrics.psnr_db(secret, revealed),
            stego_snr=float("nan"),
            waveform_loss=float("nan"),
            histogram_l1=metrics.histogram_l1(metrics.rgb_histogram(secret),
                                              metrics.rgb_histogram(revealed)),
        )
        print(metrics.METRICS_CSV_HEADER)
        print(row.to_csv())
    return 0


def _cmd_eval(args):
    bundle = pipeline.load_checkpoint(_require(args.model))
    pairs = pipeline.load_dataset(_require(args.data))
    row = pipeline.evaluate(bundle, pairs)
    line = row.to_csv()
    print(metrics.METRICS_CSV_HEADER)
    print(line)
    if args.out is not None:
        fresh = not args.out.exists()
        with open(args.out, "a", encoding="utf-8") as f:
            if fresh:
                f.write(metrics.METRICS_CSV_HEADER + "\n")
            f.write(line + "\n")
    return 0


def _cmd_robustness(args):
    try:
        fractions = [float(x) for x in args.fractions.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"bad --fractions list: {args.fractions!r}") from None
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    for mode in modes:
        if mode not in robustness.MODES:
            raise UsageError(f"unknown mode {mode!r}; choose from {robustness.MODES}")
    bundle = pipeline.load_checkpoint(_require(args.model))
    pairs = pipeline.load_dataset(_require(args.data))
    rows = robustness.robustness_sweep(bundle, pairs, fractions, modes, seed=args.seed)
    args.out.write_text(robustness.sweep_to_csv(rows), encoding="utf-8")
    if args.dump_dir is not None:
        _dump_cells(bundle, pairs, fractions, modes, args.seed, args.dump_dir)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def _dump_cells(bundle, pairs, fractions, modes, seed, directory):
    directory.mkdir(parents=True, exist_ok=True)
    cfg = bundle.cfg
    for mode in modes:
        for fraction in fractions:
            for i, pair in enumerate(pairs):
                stego, _ = pipeline.embed(pair.secret, pair.cover, bundle)
                spec = dsp.transform(stego, cfg.stft_config(), cfg.transform)
                attacked = robustness.apply_frame_dropout(
                    spec, robustness.DropoutSpec(fraction, mode, seed))
                revealed = pipeline.reveal_from_spectrogram(attacked, bundle)
                name = f"revealed_{mode}_p{fraction:g}_{i:03d}.ppm"
                imageops.write_ppm(revealed, directory / name)


def _cmd_cost(args):
    cfg = _load_config(args)
    rows = costing.cost_table(costing.standard_variants(cfg))
    print(costing.cost_to_text(rows))
    if args.out is not None:
        args.out.write_text(costing.cost_to_csv(rows), encoding="utf-8")
    return 0


def _cmd_spectrogram(args):
    cfg = _load_config(args)
    wave = wavio.read_wav(_require(args.audio))
    spec = dsp.transform(wave, cfg.stft_config(), cfg.transform)
    dsp.write_spectrogram_pgm(spec, args.out)
    print(f"wrote {spec.shape[0]}x{spec.shape[1]} raster to {args.out}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "embed": _cmd_embed,
    "reveal": _cmd_reveal,
    "eval": _cmd_eval,
    "robustness": _cmd_robustness,
    "cost": _cmd_cost,
    "spectrogram": _cmd_spectrogram,
}


def run(argv):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
