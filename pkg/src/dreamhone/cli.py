"""Command line front end.

Subcommands cover the batch workflow (tile a corpus, train a style
classifier, dream, paint, score metrics) plus `serve` for the live
session service. Exit codes: 0 success, 2 usage error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .dream import DreamSession, config_from_dict, schedule_from_json
from .errors import DreamhoneError, InputError
from .imageio import load_image, png_bytes, save_image
from .metrics import compute_report, encode_corpus
from .network import build_reference_net, load_checkpoint, save_checkpoint, train_classifier
from .painterly import PaintConfig, alternate_passes, paint_config_from_dict
from .runstore import write_trajectory_csv
from .tiling import TilingConfig, build_manifest, load_manifest, manifest_digest, save_manifest

_FLAT_FLAGS = (
    ("layer", "layer_name"),
    ("mode", "mode"),
    ("iterations", "iterations"),
    ("step_size", "step_size"),
    ("patch_size", "patch_size"),
    ("jitter", "jitter"),
    ("guide_blend", "guide_blend"),
    ("dream_seed", "seed"),
)


def _add_dream_flags(p: argparse.ArgumentParser):
    p.add_argument("--schedule", help="JSON file: list of phase objects")
    p.add_argument("--layer", help="layer to dream at (flat single-phase form)")
    p.add_argument("--mode", choices=["DotMax", "DistMin"])
    p.add_argument("--iterations", type=int)
    p.add_argument("--step-size", type=float, dest="step_size")
    p.add_argument("--patch-size", type=int, dest="patch_size")
    p.add_argument("--jitter", type=int)
    p.add_argument("--guide-blend", type=float, dest="guide_blend")
    p.add_argument("--dream-seed", type=int, dest="dream_seed")
    p.add_argument("--no-clamp", action="store_true")


def _schedule_from_args(args) -> list:
    flat = {cfg_key: getattr(args, flag) for flag, cfg_key in _FLAT_FLAGS if getattr(args, flag) is not None}
    if args.no_clamp:
        flat["clamp"] = False
    if args.schedule:
        if flat:
            raise InputError("--schedule and flat config flags are mutually exclusive")
        phases = json.loads(Path(args.schedule).read_text())
        return schedule_from_json(phases)
    if "layer_name" not in flat:
        raise InputError("either --schedule or --layer is required")
    return [config_from_dict(flat)]


def _load_net_and_images(args):
    net = load_checkpoint(args.net)
    source = load_image(args.source)
    guide = load_image(args.guide) if args.guide else None
    return net, source, guide


def cmd_tile(args) -> int:
    config = TilingConfig(
        tiles_per_level=tuple(args.tiles_per_level),
        min_tile=args.min_tile,
        tile_out_size=tuple(args.tile_size),
    )
    manifest = build_manifest(args.corpus, config, seed=args.seed)
    save_manifest(manifest, args.out)
    print(
        f"wrote {args.out}: {len(manifest.records)} tiles, "
        f"{len(manifest.categories)} categories, digest {manifest_digest(manifest)[:12]}"
    )
    return 0


def cmd_train(args) -> int:
    manifest = load_manifest(args.manifest, root=args.corpus_root)
    h, w = manifest.tile_out_size
    net = build_reference_net(len(manifest.categories), input_dims=(3, h, w), seed=args.seed)
    net, history = train_classifier(
        net,
        manifest,
        epochs=args.epochs,
        lr=args.lr,
        seed=args.seed,
        batch_size=args.batch_size,
        target_accuracy=args.target_accuracy,
        verbose=not args.quiet,
    )
    save_checkpoint(net, args.out)
    final = history[-1]
    print(
        f"wrote {args.out}: {final['epoch']} epochs, "
        f"holdout accuracy {final['holdout_accuracy']:.3f}"
    )
    return 0


def _run_session(net, source, guide, schedule):
    """Shared dream path so CLI output is bit-identical to a service session."""
    session = DreamSession(net, source, guide, schedule)
    rows = [(0, session.initial_loss(), session.phase_index)]
    canvas, trajectory = session.run()
    rows.extend(trajectory)
    return canvas, rows


def cmd_dream(args) -> int:
    net, source, guide = _load_net_and_images(args)
    schedule = _schedule_from_args(args)
    canvas, rows = _run_session(net, source, guide, schedule)
    Path(args.out).write_bytes(png_bytes(canvas))
    if args.trajectory:
        write_trajectory_csv(args.trajectory, rows)
    print(f"wrote {args.out}: {rows[-1][0]} iterations, final loss {rows[-1][1]:.6g}")
    return 0


def cmd_paint(args) -> int:
    net, source, guide = _load_net_and_images(args)
    schedule = _schedule_from_args(args)
    if args.paint_config:
        paint_cfg = paint_config_from_dict(json.loads(Path(args.paint_config).read_text()))
    else:
        paint_cfg = PaintConfig()
    out = alternate_passes(net, source, guide, schedule, paint_cfg, rounds=args.rounds)
    save_image(out, args.out)
    print(f"wrote {args.out}: {args.rounds} dream/paint rounds")
    return 0


def _corpus_images(directory) -> list:
    root = Path(directory)
    if not root.is_dir():
        raise InputError(f"corpus directory {root} does not exist")
    paths = sorted(root.glob("*.png"))
    if not paths:
        raise InputError(f"no .png files in {root}")
    return [(p.name, load_image(p)) for p in paths]


def cmd_metrics(args) -> int:
    net = load_checkpoint(args.net)
    image = load_image(args.image)
    training = encode_corpus(net, _corpus_images(args.training), args.layer, source="training")
    inspiring = encode_corpus(net, _corpus_images(args.inspiring), args.layer, source="inspiring")
    genre = encode_corpus(net, _corpus_images(args.genre), args.layer, source="genre")
    report = compute_report(net, image, training, inspiring, genre)
    text = report.as_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    net = load_checkpoint(args.net)
    app = create_app(net, data_dir=args.data_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dreamhone", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tile", help="cut a corpus of images into a tile manifest")
    p.add_argument("--corpus", required=True, help="root dir with one subdir per category")
    p.add_argument("--out", required=True, help="manifest output path (JSONL)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tiles-per-level", type=int, nargs="+", default=[4, 10, 40])
    p.add_argument("--min-tile", type=int, default=16)
    p.add_argument("--tile-size", type=int, nargs=2, default=[64, 64], metavar=("H", "W"))
    p.set_defaults(func=cmd_tile)

    p = sub.add_parser("train", help="train the style classifier on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument(
        "--corpus-root",
        default=None,
        help="directory tile source paths resolve against (default: the manifest's directory)",
    )
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--target-accuracy", type=float, default=None, help="stop early at this holdout accuracy")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("dream", help="run a dream schedule over a source image")
    p.add_argument("--net", required=True, help="trained checkpoint")
    p.add_argument("--source", required=True, help="source PNG")
    p.add_argument("--out", required=True, help="output PNG")
    p.add_argument("--guide", default=None, help="guide PNG")
    p.add_argument("--trajectory", default=None, help="write (iteration, loss, phase) CSV here")
    _add_dream_flags(p)
    p.set_defaults(func=cmd_dream)

    p = sub.add_parser("paint", help="alternate dream and painterly passes")
    p.add_argument("--net", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--guide", default=None)
    p.add_argument("--rounds", type=int, default=1)
    p.add_argument("--paint-config", default=None, help="JSON file of stroke parameters")
    _add_dream_flags(p)
    p.set_defaults(func=cmd_paint)

    p = sub.add_parser("metrics", help="score an image against corpora")
    p.add_argument("--net", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--layer", default="pool2", help="encoding layer")
    p.add_argument("--training", required=True, help="dir of training-set PNGs")
    p.add_argument("--inspiring", required=True, help="dir of inspiring-set PNGs")
    p.add_argument("--genre", required=True, help="dir of genre PNGs (>= 2 images)")
    p.add_argument("--out", default=None, help="also write the JSON report here")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("serve", help="start the live session service")
    p.add_argument("--net", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8321)
    p.add_argument("--data-dir", default=None, help="persistence root (default $DREAMHONE_DATA_DIR)")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DreamhoneError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
