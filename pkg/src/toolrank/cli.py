"""Command-line entry point.

    toolrank pipeline --config run.yaml
    toolrank evaluate --config run.yaml
    toolrank synthesize --out data/

The LLM token is read from the environment variable named by
``llm.token_env`` (default ``TOOLRANK_API_KEY``); there is no flag for it.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .catalog import write_dataset
from .config import STAGES, ConfigError, load_config
from .pipeline import Pipeline, StageError
from .synthetic import block_dataset, segment_dataset


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--workers", type=int, help="threads for per-user work")
    common.add_argument("--workdir", help="directory holding stage outputs")
    common.add_argument("--llm-endpoint", help="chat-completion URL; selects the http backend")
    common.add_argument("--llm-cache", help="JSONL replay cache of LLM responses")
    common.add_argument("--replay-only", action="store_true", help="fail on prompts missing from the cache")
    common.add_argument("--sc-mode", choices=("dual", "exclusive", "off"), help="substitute/complement reranking")
    common.add_argument("--force", action="store_true", help="rerun stages that are up to date")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="toolrank",
                                description="Per-user agents that combine recommendation tools")
    sub = p.add_subparsers(dest="command", required=True)
    for stage in STAGES:
        sub.add_parser(stage, parents=[common], help=f"run the {stage} stage")
    pipe = sub.add_parser("pipeline", parents=[common], help="run several stages in order (default: all)")
    pipe.add_argument("stages", nargs="*", metavar="STAGE", help=f"any of: {', '.join(STAGES)}")
    exp = sub.add_parser("export-memories", parents=[common], help="write per-user memory weights as CSV")
    exp.add_argument("--out", help="output CSV (default: inside the agents stage directory)")
    sub.add_parser("verify", parents=[common], help="re-hash stage outputs and check them against manifests")
    syn = sub.add_parser("synthesize", help="write a synthetic dataset to CSV files")
    syn.add_argument("--kind", choices=("segment", "block"), default="segment")
    syn.add_argument("--users", type=int, default=200)
    syn.add_argument("--seed", type=int, default=0)
    syn.add_argument("--out", required=True, help="output directory")
    return p


def _overrides(args) -> dict:
    out = {
        "seed": args.seed,
        "workers": args.workers,
        "workdir": args.workdir,
        "llm.cache": args.llm_cache,
        "ablation.sc_mode": args.sc_mode,
    }
    if args.llm_endpoint:
        out["llm.endpoint"] = args.llm_endpoint
        out["llm.backend"] = "http"
    return out


def _synthesize(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    maker = segment_dataset if args.kind == "segment" else block_dataset
    data, _ = maker(args.users, seed=args.seed)
    write_dataset(data.catalog, data.sequences, out / "interactions.csv", out / "items.csv")
    print(f"wrote {len(data.sequences)} users and {len(data.catalog)} items to {out}")
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "synthesize":
        return _synthesize(args)
    try:
        cfg = load_config(args.config, _overrides(args))
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    pipe = Pipeline(cfg, replay_only=args.replay_only, force=args.force)
    try:
        if args.command in STAGES:
            pipe.run([args.command])
        elif args.command == "pipeline":
            pipe.run(args.stages or STAGES)
        elif args.command == "export-memories":
            print(pipe.export_memories(args.out))
        elif args.command == "verify":
            problems = pipe.verify()
            for line in problems:
                print(f"MISMATCH {line}")
            if problems:
                return 1
            print(f"verified {cfg.workdir}")
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, RuntimeError, OSError) as exc:
        logging.getLogger(__name__).debug("stage failed", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
