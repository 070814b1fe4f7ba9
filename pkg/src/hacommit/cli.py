"""Command line front end.

Every subcommand is a thin client of the HTTP service: it builds a
request, posts it to the app (in-process by default, ``--server`` for a
remote instance), and writes the response to disk. Simulations run
inside the service either way, so results are identical in both modes.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional

from .simnet import parse_fault_schedule
from .store import ISOLATION_MODES, SERIALIZABLE

PROTOCOL_CHOICES = ("hacommit", "hacommit-rc", "2pc", "rcommit")


class ServiceClient:
    """POST to the in-process app or to a remote server, same surface."""

    def __init__(self, server: Optional[str] = None) -> None:
        if server:
            import httpx

            self._client = httpx.Client(base_url=server, timeout=600.0)
        else:
            from fastapi.testclient import TestClient

            from .service import app

            self._client = TestClient(app)

    def post(self, path: str, payload: dict) -> dict:
        resp = self._client.post(path, json=payload)
        if resp.status_code != 200:
            raise SystemExit(f"service error {resp.status_code}: {resp.text}")
        return resp.json()


def _write_outputs(out_dir: str, body: dict) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(body["csv"])
    (out / "audit.json").write_text(json.dumps(body["audit"], indent=2, sort_keys=True) + "\n")
    trace = body.get("trace")
    if trace:
        with open(out / "trace.jsonl", "w") as f:
            for line in trace:
                f.write(line + "\n")


def _print_audit(audit: dict) -> None:
    verdict = "PASS" if audit["ok"] else "FAIL"
    print(f"audit: {verdict} ({len(audit['violations'])} violations, {len(audit['findings'])} findings)")
    for v in audit["violations"]:
        print(f"  VIOLATION {v['check']}: {v['detail']}")


def cmd_run(args: argparse.Namespace) -> int:
    faults = []
    if args.fault_schedule:
        text = Path(args.fault_schedule).read_text()
        faults = [
            {"at_us": fe.at, "action": fe.action, "target": fe.target}
            for fe in parse_fault_schedule(text)
        ]
    payload = {
        "protocol": args.protocol,
        "ops_per_txn": args.ops_per_txn,
        "read_fraction": args.read_fraction,
        "shards": args.shards,
        "replicas": args.replicas,
        "clients": args.clients,
        "seed": args.seed,
        "txn_count": args.txn_count,
        "duration_s": args.duration_s,
        "key_space": args.key_space,
        "think_time_us": args.think_time_us,
        "isolation": args.isolation,
        "one_way_us": args.one_way_us,
        "drop_rate": args.drop_rate,
        "fault_schedule": faults,
        "include_trace": not args.no_trace,
    }
    if args.timeout_us is not None:
        payload["timeout_us"] = args.timeout_us
    body = ServiceClient(args.server).post("/run", payload)
    _write_outputs(args.out, body)
    print(body["csv"], end="")
    _print_audit(body["audit"])
    print(f"wrote {args.out}/metrics.csv audit.json" + ("" if args.no_trace else " trace.jsonl"))
    return 0 if body["audit"]["ok"] else 1


def cmd_audit(args: argparse.Namespace) -> int:
    lines = Path(args.trace).read_text().splitlines()
    body = ServiceClient(args.server).post("/audit", {"trace": lines})
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "audit.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
    _print_audit(body)
    return 0 if body["ok"] else 1


def cmd_sweep(args: argparse.Namespace) -> int:
    payload = json.loads(Path(args.config).read_text())
    body = ServiceClient(args.server).post("/sweep", payload)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.csv").write_text(body["csv"])
    print(body["csv"], end="")
    print(f"wrote {args.out}/sweep.csv")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import app

    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bench", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one seeded experiment and audit its trace")
    run.add_argument("--protocol", choices=PROTOCOL_CHOICES, default="hacommit")
    run.add_argument("--ops-per-txn", type=int, default=4)
    run.add_argument("--read-fraction", type=float, default=0.5)
    run.add_argument("--shards", type=int, default=2)
    run.add_argument("--replicas", type=int, default=3)
    run.add_argument("--clients", type=int, default=1)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--txn-count", type=int, default=None, help="fixed transaction budget (default 100 when --duration-s is absent)")
    run.add_argument("--duration-s", type=float, default=None, help="fixed wall-clock horizon in simulated seconds")
    run.add_argument("--key-space", type=int, default=10_000)
    run.add_argument("--think-time-us", type=int, default=0)
    run.add_argument("--isolation", choices=ISOLATION_MODES, default=SERIALIZABLE)
    run.add_argument("--one-way-us", type=int, default=50)
    run.add_argument("--drop-rate", type=float, default=0.0)
    run.add_argument("--timeout-us", type=int, default=None, help="unended-transaction detection timeout")
    run.add_argument("--fault-schedule", default=None, help="file of '<time_us> <action> [target]' lines")
    run.add_argument("--no-trace", action="store_true", help="skip writing trace.jsonl")
    run.add_argument("--out", default="results")
    run.add_argument("--server", default=None, help="base URL of a running service (default: in-process)")
    run.set_defaults(func=cmd_run)

    audit = sub.add_parser("audit", help="audit a previously written trace file")
    audit.add_argument("--trace", required=True)
    audit.add_argument("--out", default=None)
    audit.add_argument("--server", default=None)
    audit.set_defaults(func=cmd_audit)

    swp = sub.add_parser("sweep", help="protocol x ops-per-txn cross product from a JSON config")
    swp.add_argument("--config", required=True)
    swp.add_argument("--out", default="results")
    swp.add_argument("--server", default=None)
    swp.set_defaults(func=cmd_sweep)

    serve = sub.add_parser("serve", help="start the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    serve.set_defaults(func=cmd_serve)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
