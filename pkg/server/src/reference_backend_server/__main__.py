"""Command-line entry: ``python3 -m reference_backend_server [options]``.

Exit codes: 0 clean shutdown or successful verification, 1 failed
verification, 2 configuration error.
"""

from __future__ import annotations

import argparse
import sys

from .app import BackendApp
from .config import MODES, ConfigError, load_config_file, resolve_config
from .server import serve
from .verify import verify_golden


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reference-backend-server",
        description="Reference denoise/upscale/score backend over HTTP.")
    parser.add_argument("--config", metavar="FILE",
                        help="JSON config file; command-line flags override it")
    parser.add_argument("--host", help="bind address (default 127.0.0.1)")
    parser.add_argument("--port", type=int, help="bind port (default 8787; 0 picks a free one)")
    parser.add_argument("--mode", choices=MODES,
                        help="stub: denoise returns zeros; oracle: analytic mixture; "
                             "hook: delegate to --hook object")
    parser.add_argument("--native-resolution", type=int, metavar="N",
                        help="resolution reported by /v1/health (default 64)")
    parser.add_argument("--hook", metavar="MODULE:ATTR",
                        help="import path of the model object (or factory) for hook mode")
    parser.add_argument("--verbose", action="store_true", default=None,
                        help="log each request to stderr")
    parser.add_argument("--verify-golden", metavar="DIR",
                        help="check the oracle against a golden-vector directory and exit")
    return parser


def entrypoint(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        file_values = load_config_file(args.config) if args.config else {}
        cfg = resolve_config(file_values, {
            "host": args.host,
            "port": args.port,
            "mode": args.mode,
            "native_resolution": args.native_resolution,
            "hook": args.hook,
            "verbose": args.verbose,
        })
        app = BackendApp(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.verify_golden:
        return 0 if verify_golden(args.verify_golden) else 1
    serve(app)
    return 0


if __name__ == "__main__":
    sys.exit(entrypoint())
