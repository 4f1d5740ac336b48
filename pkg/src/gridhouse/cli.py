"""Command line entry points: generate, run, serve, replay.

Exit code 0 whenever the harness itself completes (regardless of SR);
nonzero only for harness errors. GRIDHOUSE_OUT overrides output directories.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .agent import EpisodeTrace
from .harness import (NOISE_PRESETS, SuiteConfig, generate_dataset,
                      load_manifest, run_suite, verify_replay)


def _out_dir(arg_value) -> Path:
    override = os.environ.get("GRIDHOUSE_OUT")
    return Path(override) if override else Path(arg_value)


def cmd_generate(args) -> int:
    if args.config:
        with open(args.config) as f:
            config = SuiteConfig.from_json(json.load(f))
    else:
        config = SuiteConfig()
    manifest = generate_dataset(config)
    out = _out_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "manifest.json"
    with open(path, "w") as f:
        json.dump(manifest, f)
    print(f"wrote {path} ({len(manifest['episodes'])} episodes)")
    return 0


def cmd_run(args) -> int:
    manifest = load_manifest(args.manifest)
    out = _out_dir(args.out)
    report = run_suite(manifest, noise_preset=args.noise, seed_offset=args.seeds,
                       out_dir=out, workers=args.workers)
    print(report.text_table())
    print(f"report written to {out}/report.json")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import build_app
    manifest = load_manifest(args.manifest)
    app = build_app(manifest)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_replay(args) -> int:
    with open(args.trace) as f:
        trace = EpisodeTrace.from_json(json.load(f))
    ok = verify_replay(trace)
    print(f"{trace.episode_id}: recorded gc={trace.gc} success={trace.success}; "
          f"replay {'matches' if ok else 'DIVERGES'}")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridhouse",
        description="Desk-scale household-task benchmark and plan-review agent")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a dataset manifest")
    g.add_argument("--config", help="suite config JSON (splits, tasks_per_type, seed)")
    g.add_argument("--out", default="out", help="output directory")
    g.set_defaults(fn=cmd_generate)

    r = sub.add_parser("run", help="run a benchmark suite")
    r.add_argument("--manifest", required=True)
    r.add_argument("--noise", default="gt_all", choices=sorted(NOISE_PRESETS))
    r.add_argument("--seeds", type=int, default=0,
                   help="offset added to every episode rng seed")
    r.add_argument("--out", default="out", help="output directory")
    r.add_argument("--workers", type=int, default=1)
    r.set_defaults(fn=cmd_run)

    s = sub.add_parser("serve", help="serve the review/monitoring API")
    s.add_argument("--manifest", required=True)
    s.add_argument("--port", type=int, default=8008)
    s.add_argument("--host", default="127.0.0.1")
    s.set_defaults(fn=cmd_serve)

    p = sub.add_parser("replay", help="re-simulate a recorded trace")
    p.add_argument("--trace", required=True)
    p.set_defaults(fn=cmd_replay)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as e:  # harness errors -> nonzero exit
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
