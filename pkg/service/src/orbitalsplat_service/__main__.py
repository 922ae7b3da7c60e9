"""Launcher: `orbitalsplat-service --mode stub --port 8090`."""

from __future__ import annotations

import argparse

import uvicorn

from .app import DEFAULT_MAX_REQUEST_BYTES, ServiceConfig, create_app


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="orbitalsplat-service")
    parser.add_argument("--mode", choices=["stub", "model"], default="stub")
    parser.add_argument("--checkpoint", help="model checkpoint path (model mode)")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8090)
    parser.add_argument("--max-request-bytes", type=int,
                        default=DEFAULT_MAX_REQUEST_BYTES)
    args = parser.parse_args(argv)

    config = ServiceConfig(mode=args.mode, checkpoint=args.checkpoint,
                           host=args.host, port=args.port,
                           max_request_bytes=args.max_request_bytes)
    uvicorn.run(create_app(config), host=config.host, port=config.port,
                log_level="warning")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
