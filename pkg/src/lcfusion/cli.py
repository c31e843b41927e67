"""Batch CLI: a thin client over the service API.

Every subcommand builds a typed request and sends it to the FastAPI app,
in-process by default (no sockets) or to a remote server via --server.
All artifacts are written client-side from response payloads, so runs are
byte-deterministic regardless of transport.

Exit codes: 0 success, 1 validation error, 2 numerical failure,
3 acceptance-check failure.
"""

import argparse
import asyncio
import json
import os
import sys

import httpx

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2
EXIT_ACCEPTANCE = 3

_ERROR_EXIT = {"validation": EXIT_VALIDATION, "numerical": EXIT_NUMERICAL,
               "acceptance": EXIT_ACCEPTANCE}


class CliFailure(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _call(server, path, payload):
    """POST to the service; in-process ASGI when no server is given."""
    if server:
        with httpx.Client(base_url=server, timeout=None) as client:
            resp = client.post(path, json=payload)
            status, body = resp.status_code, resp.json()
    else:
        from .service import app

        async def go():
            transport = httpx.ASGITransport(app=app)
            async with httpx.AsyncClient(transport=transport,
                                         base_url="http://lcfusion.internal",
                                         timeout=None) as client:
                resp = await client.post(path, json=payload)
                return resp.status_code, resp.json()

        status, body = asyncio.run(go())
    if status != 200:
        etype = body.get("error_type") if isinstance(body, dict) else None
        message = body.get("message", json.dumps(body)) if isinstance(body, dict) else str(body)
        code = _ERROR_EXIT.get(etype, EXIT_VALIDATION)
        raise CliFailure(message, code)
    return body


def _read_config(path):
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
        return json.loads(text) if text.strip() else {}
    except FileNotFoundError:
        raise CliFailure(f"config file not found: {path}", EXIT_VALIDATION)
    except json.JSONDecodeError as e:
        raise CliFailure(f"config is not valid JSON: {e}", EXIT_VALIDATION)


def _read_scene_docs(data_dir):
    try:
        names = sorted(n for n in os.listdir(data_dir)
                       if n.startswith("scene_") and n.endswith(".json"))
    except FileNotFoundError:
        raise CliFailure(f"data directory not found: {data_dir}", EXIT_VALIDATION)
    if not names:
        raise CliFailure(f"no scene files in {data_dir}", EXIT_VALIDATION)
    docs = []
    for n in names:
        with open(os.path.join(data_dir, n), "r", encoding="utf-8") as f:
            docs.append(json.load(f))
    return docs


def _canonical(doc):
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def _write_text(path, text):
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)


def _write_bytes(path, blob):
    with open(path, "wb") as f:
        f.write(blob)


def _b64decode(text):
    import base64
    return base64.b64decode(text.encode("ascii"))


def _b64encode(blob):
    import base64
    return base64.b64encode(blob).decode("ascii")


# -- subcommands -------------------------------------------------------------


def cmd_gen(args):
    config = _read_config(args.config)
    body = _call(args.server, "/config/validate", {"config": config})
    n_scenes = body["config"]["dataset"]["n_scenes"]
    os.makedirs(args.out, exist_ok=True)
    resp = _call(args.server, "/scenes/generate",
                 {"config": config, "scene_id": 0, "count": n_scenes})
    for item in resp["scenes"]:
        _write_text(os.path.join(args.out, item["filename"]), _canonical(item["doc"]))
    print(f"wrote {len(resp['scenes'])} scenes to {args.out}")
    return EXIT_OK


def cmd_train(args):
    config = _read_config(args.config)
    docs = _read_scene_docs(args.data)
    payload = {"config": config, "scenes": docs}
    if args.resume:
        with open(args.resume, "rb") as f:
            payload["resume_checkpoint_b64"] = _b64encode(f.read())
    resp = _call(args.server, "/train", payload)
    _write_bytes(args.out, _b64decode(resp["checkpoint_b64"]))
    _write_text(args.out + ".losses.csv", resp["losses_csv"])
    first = resp["losses"][0]["total"] if resp["losses"] else float("nan")
    last = resp["losses"][-1]["total"] if resp["losses"] else float("nan")
    print(f"trained {len(resp['losses'])} steps, loss {first:.6f} -> {last:.6f}")
    print(f"checkpoint: {args.out}")
    return EXIT_OK


def cmd_eval(args):
    config = _read_config(args.config)
    docs = _read_scene_docs(args.data)
    with open(args.ckpt, "rb") as f:
        ckpt64 = _b64encode(f.read())
    resp = _call(args.server, "/evaluate",
                 {"config": config, "scenes": docs, "checkpoint_b64": ckpt64})
    _write_text(args.report, resp["report"])
    print(resp["report"], end="")
    return EXIT_OK


def cmd_ablate(args):
    config = _read_config(args.config)
    docs = _read_scene_docs(args.data)
    os.makedirs(args.ckpt_dir, exist_ok=True)
    existing = {}
    for name in sorted(os.listdir(args.ckpt_dir)):
        if name.startswith("variant_") and name.endswith(".ckpt"):
            with open(os.path.join(args.ckpt_dir, name), "rb") as f:
                existing[name[len("variant_"):-len(".ckpt")]] = _b64encode(f.read())
    resp = _call(args.server, "/ablate",
                 {"config": config, "scenes": docs, "checkpoints_b64": existing,
                  "train_missing": args.train_missing})
    for name, blob64 in resp["checkpoints_b64"].items():
        _write_bytes(os.path.join(args.ckpt_dir, f"variant_{name}.ckpt"), _b64decode(blob64))
    _write_text(args.report, resp["report"])
    print(resp["report"], end="")
    return EXIT_OK


def cmd_gradcheck(args):
    payload = {"n_seeds": args.seeds}
    if args.op:
        payload["op"] = args.op
    resp = _call(args.server, "/gradcheck", payload)
    if args.report:
        _write_text(args.report, resp["report"])
    print(resp["report"], end="")
    return EXIT_OK if resp["all_passed"] else EXIT_ACCEPTANCE


def cmd_selftest(args):
    resp = _call(args.server, "/selftest", {})
    if args.report:
        _write_text(args.report, resp["report"])
    print(resp["report"], end="")
    return EXIT_OK if resp["all_passed"] else EXIT_ACCEPTANCE


def cmd_serve(args):
    import uvicorn

    from .service import app
    uvicorn.run(app, host=args.host, port=args.port)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="lcfusion",
        description="Desk-scale LiDAR-camera fusion 3D detection pipeline")
    parser.add_argument("--server", default=None,
                        help="base URL of a running service (default: run in-process)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic scene dataset")
    p.add_argument("--config", required=False, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train the detector")
    p.add_argument("--config", required=False, default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--config", required=False, default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="evaluate all ablation variants")
    p.add_argument("--config", required=False, default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt-dir", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--train-missing", action="store_true",
                   help="train any missing variant checkpoints first")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--op", default=None)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("selftest", help="run all oracle suites")
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_selftest)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliFailure as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
