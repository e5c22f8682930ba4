"""Command line entry point.

    warpbench train|design|eval --config FILE [--output DIR] [--seed N] [--workers N]
    warpbench serve --config FILE

Exit codes: 0 success, 1 configuration error, 2 runtime failure (artifacts
written so far are kept).
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

from .config import ConfigError, parse_config

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

logger = logging.getLogger("warpbench")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="warpbench", description="Recommender experimentation engine")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("train", "tune, fit and evaluate the configured models"),
                        ("design", "fit and evaluate each model's fixed configuration"),
                        ("eval", "evaluate saved checkpoints without training")):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True, type=Path)
        sp.add_argument("--output", type=Path, help="output directory (overrides reporting.output_dir)")
        sp.add_argument("--seed", type=int, help="master seed (overrides config)")
        sp.add_argument("--workers", type=int, help="parallel trials (overrides tuning.workers)")
        if name == "eval":
            sp.add_argument("--checkpoints", type=Path, help="directory of .npz checkpoints to evaluate")
    sp = sub.add_parser("serve", help="serve checkpoints over REST or MCP stdio")
    sp.add_argument("--config", required=True, type=Path)
    sp.add_argument("--transport", choices=("rest", "stdio"), help="overrides serve.transport")
    return p


def _log_event(ev) -> None:
    logger.info("[%s] %s", ev.stage, ", ".join(f"{k}={v}" for k, v in ev.payload.items() if k != "metrics"))


def _run_experiment(args) -> int:
    from .pipeline import checkpoints_in, run_design_pipeline, run_eval_pipeline, run_train_pipeline

    cfg = parse_config(args.config)
    kw = {"output": args.output, "seed": args.seed, "workers": args.workers}
    if args.command == "train":
        outcome = run_train_pipeline(cfg, [_log_event], **kw)
    elif args.command == "design":
        outcome = run_design_pipeline(cfg, [_log_event], **kw)
    else:
        refs = checkpoints_in(args.checkpoints) if args.checkpoints else None
        if args.checkpoints and not refs:
            raise ConfigError(f"no .npz checkpoints in {args.checkpoints}")
        outcome = run_eval_pipeline(cfg, [_log_event], checkpoints=refs, **kw)
    for name, err in outcome.failures.items():
        print(f"model {name} failed: {err}", file=sys.stderr)
    print(f"artifacts written to {outcome.output_dir}")
    return outcome.exit_code


def _serve(args) -> int:
    from .serve import InferenceService, McpServer, ServeConfig, serve_stdio

    cfg = parse_config(args.config)
    if cfg.serve is None:
        raise ConfigError(f"{args.config}: missing 'serve' section")
    sb = cfg.serve
    scfg = ServeConfig({k: str(v) for k, v in sb.checkpoints.items()}, sb.host, sb.port,
                       args.transport or sb.transport, sb.default_k, sb.filter_seen,
                       str(sb.aliases) if sb.aliases else None, sb.protocol_version)
    service = InferenceService.from_config(scfg)
    if scfg.transport == "stdio":
        serve_stdio(McpServer(service, scfg.protocol_version))
    else:
        from .serve.rest import run

        run(service, scfg.host, scfg.port)
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors; those are config errors here
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    # logs go to stderr so stdout stays clean for the MCP stdio transport
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return _serve(args) if args.command == "serve" else _run_experiment(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as exc:
        logger.debug("runtime failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
