"""Exporter CLI: export-images, export-prompts, export-classes."""

from __future__ import annotations

import argparse
import sys

from .encoders import (
    IMAGE_ENCODERS,
    TEXT_ENCODERS,
    EncoderUnavailableError,
    load_image_encoder,
    load_text_encoder,
)
from .export import (
    ExportError,
    ExportManifest,
    export_class_templates,
    export_images,
    export_prompts,
)


def cmd_export_images(args) -> int:
    manifest = ExportManifest.read(args.manifest)
    encoder = load_image_encoder(args.encoder)
    n, dim = export_images(manifest, encoder, args.out, batch_size=args.batch)
    print(f"wrote {n} x {dim} features from {args.encoder} to {args.out}")
    return 0


def cmd_export_prompts(args) -> int:
    encoder = load_text_encoder(args.encoder)
    n = export_prompts(args.prompts, encoder, args.out, batch_size=args.batch)
    print(f"wrote {n} prompt embeddings to {args.out}")
    return 0


def cmd_export_classes(args) -> int:
    encoder = load_text_encoder(args.encoder)
    n = export_class_templates(args.classes, args.template_file, encoder,
                               args.out_dir, batch_size=args.batch)
    print(f"wrote {n} template embedding sets to {args.out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="zoomshot-export",
        description="Serialize pretrained-encoder features into ZSEB files "
                    "for alignment training and evaluation.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("export-images", formatter_class=fmt,
                       help="embed every image in a manifest, in order")
    p.add_argument("--manifest", required=True,
                   help="text file, one image path per line; row i of the "
                        "output corresponds to line i")
    p.add_argument("--encoder", required=True, choices=IMAGE_ENCODERS)
    p.add_argument("--out", required=True)
    p.add_argument("--batch", type=int, default=64)
    p.set_defaults(func=cmd_export_images)

    p = sub.add_parser("export-prompts", formatter_class=fmt,
                       help="embed a prompt bank (one prompt per line)")
    p.add_argument("--prompts", required=True)
    p.add_argument("--encoder", default="clip-vit-b16-text", choices=TEXT_ENCODERS)
    p.add_argument("--out", required=True)
    p.add_argument("--batch", type=int, default=64)
    p.set_defaults(func=cmd_export_prompts)

    p = sub.add_parser("export-classes", formatter_class=fmt,
                       help="embed class names under prompt templates into a "
                            "class bundle directory")
    p.add_argument("--classes", required=True, help="one class name per line")
    p.add_argument("--template-file", required=True,
                   help="one template per line, each containing {}")
    p.add_argument("--encoder", default="clip-vit-b16-text", choices=TEXT_ENCODERS)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--batch", type=int, default=64)
    p.set_defaults(func=cmd_export_classes)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except EncoderUnavailableError as exc:
        print(f"error: encoder unavailable: {exc}", file=sys.stderr)
        return 2
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
