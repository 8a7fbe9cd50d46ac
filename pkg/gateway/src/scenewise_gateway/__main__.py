"""Run the gateway under uvicorn: ``python -m scenewise_gateway``."""

from __future__ import annotations

import argparse

import uvicorn

from .app import GatewayConfig, create_app


def main() -> None:
    parser = argparse.ArgumentParser(description="scenewise model gateway")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8799)
    parser.add_argument("--dim", type=int, default=384, help="embedding dimension")
    parser.add_argument(
        "--frame-command",
        default="",
        help="command template with {media} {timestamp} {output} placeholders",
    )
    args = parser.parse_args()
    app = create_app(GatewayConfig(embedding_dim=args.dim, frame_command=args.frame_command))
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")


if __name__ == "__main__":
    main()
