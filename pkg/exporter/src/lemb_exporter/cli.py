"""Command line: export LEMB files from a sentence cache, or materialize a
random-weight encoder for offline runs."""
from __future__ import annotations

import argparse
import sys

from .export import ExportError, export_cache, make_random_model


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="lemb-export", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export", help="dump hidden states for a prepared cache")
    p.add_argument("--cache", required=True)
    p.add_argument("--model", required=True,
                   help="pretrained model name or local directory")
    p.add_argument("--out", required=True)

    p = sub.add_parser("init-random", help="build a random-weight encoder "
                                           "around an existing vocabulary")
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--layers", type=int, default=12)
    p.add_argument("--hidden", type=int, default=768)
    p.add_argument("--heads", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)

    args = parser.parse_args(argv)
    try:
        if args.command == "export":
            manifest = export_cache(args.cache, args.model, args.out)
            print(f"wrote {manifest['file_count']} files "
                  f"(m={manifest['m']}, D={manifest['dim']}) to {args.out}")
        else:
            make_random_model(args.vocab, args.out, layers=args.layers,
                              hidden=args.hidden, heads=args.heads, seed=args.seed)
            print(f"random encoder written to {args.out}")
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
