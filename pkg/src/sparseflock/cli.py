"""Thin command-line client for the experiment service.

``run`` submits a config to the service layer (in process by default, over
HTTP with --server) and reports the artifacts; ``serve`` starts the HTTP
service.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path


def _print_response(payload: dict) -> None:
    for diag in payload.get("diagnostics", []):
        print(f"error[{diag['code']}] {diag['path']}: {diag['message']}", file=sys.stderr)
    if payload.get("failure"):
        print(f"run failed: {payload['failure']}", file=sys.stderr)
    summary = payload.get("summary") or {}
    if summary:
        print(json.dumps(summary, sort_keys=True, default=str))
    if payload.get("run_dir"):
        print(f"artifacts in {payload['run_dir']}: {', '.join(payload.get('artifacts', []))}")


def _cmd_run(args) -> int:
    path = Path(args.config)
    if not path.is_file():
        print(f"error[parse-error] <file>: no such file: {path}", file=sys.stderr)
        return 2
    toml_text = path.read_text()
    request = {
        "toml_text": toml_text,
        "out_dir": args.out,
        "seed": args.seed,
        "threads": args.threads,
        "validate_only": args.validate_only,
    }
    if args.server:
        import httpx

        resp = httpx.post(
            args.server.rstrip("/") + "/experiments/run", json=request, timeout=None
        )
        resp.raise_for_status()
        payload = resp.json()
    else:
        from .service import RunRequest, handle_run

        payload = handle_run(RunRequest(**request)).model_dump()
    _print_response(payload)
    return int(payload["exit_code"])


def _cmd_serve(args) -> int:
    import uvicorn

    uvicorn.run("sparseflock.service:app", host=args.host, port=args.port)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="sparseflock",
        description="Leader-follower sparse control laboratory",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="validate and execute an experiment config")
    run_p.add_argument("config", help="path to a TOML experiment config")
    run_p.add_argument("--out", help="output directory (overrides config and env)")
    run_p.add_argument("--seed", type=int, help="seed override")
    run_p.add_argument("--threads", type=int, help="worker thread count")
    run_p.add_argument("--validate-only", action="store_true", help="validate and exit")
    run_p.add_argument("--server", help="URL of a running service; default is in-process")
    run_p.set_defaults(func=_cmd_run)

    serve_p = sub.add_parser("serve", help="start the HTTP service")
    serve_p.add_argument("--host", default="127.0.0.1")
    serve_p.add_argument("--port", type=int, default=8000)
    serve_p.set_defaults(func=_cmd_serve)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
