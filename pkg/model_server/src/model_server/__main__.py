"""Entry point: load the requested model, then serve until the client hangs up.

An unservable model (unknown name, missing checkpoint, unobtainable weights)
is reported both as a wire-protocol error line on stdout, so a connected
client sees a structured message instead of silence, and as plain text on
stderr, then the process exits nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional

from .protocol import serve_stdio, serve_tcp
from .registry import ModelError, known_models, load_bundle


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="model-server",
        description="Serve an image classifier over the newline-delimited JSON protocol.",
    )
    parser.add_argument("model", help=f"one of: {', '.join(known_models())}")
    parser.add_argument("--checkpoint", help="local checkpoint path (demo-cnn only)")
    parser.add_argument("--mean", nargs=3, type=float, metavar=("R", "G", "B"),
                        help="override normalization mean")
    parser.add_argument("--std", nargs=3, type=float, metavar=("R", "G", "B"),
                        help="override normalization std")
    parser.add_argument("--port", type=int,
                        help="serve over TCP on 127.0.0.1 instead of stdio (0 picks a free port)")
    args = parser.parse_args(argv)

    try:
        bundle = load_bundle(args.model, checkpoint=args.checkpoint,
                             mean=args.mean, std=args.std)
    except ModelError as exc:
        print(json.dumps({"type": "error", "message": str(exc)}), flush=True)
        print(f"model-server: {exc}", file=sys.stderr)
        return 1

    try:
        if args.port is not None:
            return serve_tcp(bundle, args.port)
        return serve_stdio(bundle)
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
