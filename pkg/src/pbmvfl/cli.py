"""Command-line front end.

Every subcommand except `serve` is a thin client of the HTTP API: by default
it talks to an in-process application instance (no server required, same
results), and with --server it sends identical requests to a remote host.

Subcommands:
  run <spec.json>      train per an experiment spec; writes trace + summary CSVs
  account --T ... --alpha ...   query privacy budgets (C0 units)
  gen <gen.json>       generate a synthetic vertical dataset as CSV files
  serve                start the HTTP API
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Any

import httpx

from .errors import SpecError


def make_client(server: str | None) -> httpx.Client:
    """HTTP client for the API: in-process by default, remote with --server."""
    if server is not None:
        return httpx.Client(base_url=server)
    from starlette.testclient import TestClient

    from .service import create_app

    return TestClient(create_app())


def _request_error(exc: httpx.HTTPStatusError) -> str:
    try:
        detail = exc.response.json().get("detail")
    except (ValueError, AttributeError):
        detail = None
    if isinstance(detail, (list, dict)):
        detail = json.dumps(detail)
    return str(detail) if detail else f"{exc.response.status_code}: {exc.response.text}"


def _post(client: httpx.Client, path: str, payload: dict[str, Any]) -> dict[str, Any]:
    response = client.post(path, json=payload)
    response.raise_for_status()
    return response.json()


def _fmt(value: float | None, unavailable: str = "n/a") -> str:
    return f"{value:.6g}" if value is not None else unavailable


def cmd_account(args: argparse.Namespace) -> int:
    payload = {
        "iters": args.T,
        "batch": args.B,
        "embed_dim": args.P,
        "trials": args.b,
        "beta": args.beta,
        "parties": args.M,
        "samples": args.N,
        "alphas": args.alpha,
    }
    with make_client(args.server) as client:
        body = _post(client, "/account", payload)
    print("privacy budgets (C0 units)")
    header = f"{'alpha':>8}  {'feature/round':>14}  {'feature final':>14}  {'sample/disclosure':>18}"
    print(header)
    for row in body["rows"]:
        sample = _fmt(row["sample_per_disclosure"], unavailable="n/a (needs >= 2 parties)")
        print(
            f"{row['alpha']:>8g}  {row['feature_per_round']:>14.6g}  "
            f"{row['feature_final']:>14.6g}  {sample:>18}"
        )
    return 0


def _load_json(path) -> dict[str, Any]:
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SpecError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc


def cmd_gen(args: argparse.Namespace) -> int:
    payload = _load_json(args.spec)
    with make_client(args.server) as client:
        body = _post(client, "/datasets", payload)
    print(f"wrote {body['train_path']} ({body['n_train']} rows)")
    print(f"wrote {body['test_path']} ({body['n_test']} rows)")
    print(f"wrote {body['parties_path']} ({body['parties']} parties)")
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    spec_obj = _load_json(args.spec)
    payload = {"spec": spec_obj, "output_dir": args.output_dir, "wait": True}
    with make_client(args.server) as client:
        body = _post(client, "/experiments", payload)
    print(f"experiment {body['id']} ({body['name']}, mode={body['mode']}): {body['state']}")
    for path in body["trace_paths"]:
        print(f"trace: {path}")
    print(f"summary: {body['summary_path']}")
    print(f"{'metric':<20} {'mean':>14} {'std':>14}")
    for metric, (mean, std) in body["summary"].items():
        print(f"{metric:<20} {_fmt(mean):>14} {_fmt(std):>14}")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pbmvfl",
        description="Simulator for quantized, secure-aggregated vertical federated learning.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a training spec; writes trace and summary CSVs")
    run.add_argument("spec", type=_spec_path, help="experiment spec JSON file")
    run.add_argument("--output-dir", default=None, help="override the spec's output_dir")
    run.add_argument("--server", default=None, help="remote API base URL (default: in-process)")
    run.set_defaults(func=cmd_run)

    account = sub.add_parser("account", help="print privacy budgets in C0 units")
    account.add_argument("--T", type=int, required=True, help="training iterations")
    account.add_argument("--B", type=int, required=True, help="minibatch size")
    account.add_argument("--P", type=int, required=True, help="embedding width")
    account.add_argument("--b", type=int, required=True, help="binomial trials per value")
    account.add_argument("--beta", type=float, required=True, help="quantizer slope")
    account.add_argument("--M", type=int, required=True, help="party count")
    account.add_argument("--N", type=int, required=True, help="training-set size")
    account.add_argument(
        "--alpha", type=float, action="append", required=True,
        help="divergence order (repeatable)",
    )
    account.add_argument("--server", default=None, help="remote API base URL (default: in-process)")
    account.set_defaults(func=cmd_account)

    gen = sub.add_parser("gen", help="generate a synthetic vertical dataset")
    gen.add_argument("spec", type=_spec_path, help="generator spec JSON file")
    gen.add_argument("--server", default=None, help="remote API base URL (default: in-process)")
    gen.set_defaults(func=cmd_gen)

    serve = sub.add_parser("serve", help="start the HTTP API")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    serve.set_defaults(func=cmd_serve)
    return parser


def _spec_path(value: str):
    from pathlib import Path

    path = Path(value)
    if not path.is_file():
        raise argparse.ArgumentTypeError(f"spec file not found: {path}")
    return path


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SpecError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except json.JSONDecodeError as exc:
        print(f"invalid JSON: line {exc.lineno} column {exc.colno}: {exc.msg}", file=sys.stderr)
        return 2
    except httpx.HTTPStatusError as exc:
        print(_request_error(exc), file=sys.stderr)
        return 1
    except httpx.TransportError as exc:
        print(f"cannot reach server: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
