"""
Main entry point for the egoqa dataset toolkit

Usage:
    python main.py align --config run.toml
    python main.py fuse --config run.toml --jobs 4
    python main.py facts --config run.toml
    python main.py forge --config run.toml --seed 7
    python main.py balance --config run.toml
    python main.py score --config run.toml --live-llm
    python main.py describe --config run.toml --live-llm
"""
import argparse
import logging
import sys
from datetime import datetime
from pathlib import Path

from egoqa.commands import COMMANDS
from egoqa.config import Config, PipelineConfig
from egoqa.errors import EgoQAError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Build and score egocentric video QA datasets from reconstructed scenes"
    )
    parser.add_argument(
        "command",
        choices=sorted(COMMANDS),
        help="Pipeline stage to run"
    )
    parser.add_argument(
        "--config",
        type=Path,
        required=True,
        help="Pipeline config file (TOML)"
    )
    parser.add_argument(
        "--seed",
        type=int,
        default=None,
        help="Override the config seed (unsigned 64-bit)"
    )
    parser.add_argument(
        "--jobs",
        type=int,
        default=None,
        help="Scene worker pool size (default: config value, else logical cores)"
    )
    parser.add_argument(
        "--live-llm",
        action="store_true",
        help="Send chat requests to the configured endpoint instead of recorded fixtures"
    )
    parser.add_argument(
        "--debug",
        action="store_true",
        help="Enable debug logging and tracebacks"
    )
    return parser


def load_config(args: argparse.Namespace) -> PipelineConfig:
    """Load the config file and apply command-line overrides"""
    config = PipelineConfig.load(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    if args.live_llm:
        overrides["live_llm"] = True
    if overrides:
        config = PipelineConfig.from_mapping({**config.model_dump(), **overrides})
    return config


def main(argv=None) -> int:
    """Main entry point"""
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.DEBUG if args.debug else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    start_time = datetime.now()
    try:
        config = load_config(args)

        print("\n" + "="*80)
        print(f"EGOQA - {args.command}")
        print("="*80)
        print(f"Scenes: {len(config.scenes)}")
        print(f"Seed: {config.seed}")
        print(f"Jobs: {config.jobs}")
        print(f"Output: {config.output_dir}")
        if config.live_llm:
            llm_info = Config.get_llm_info()
            print(f"Live LLM: {llm_info['primary']['model']} @ {llm_info['primary']['endpoint']}")
        else:
            print("Live LLM: off (recorded fixtures only)")
        print("="*80)

        COMMANDS[args.command](config)

    except EgoQAError as e:
        stage = e.stage or args.command
        print(f"\n❌ {type(e).__name__} in stage '{stage}': {e}", file=sys.stderr)
        if args.debug:
            import traceback
            traceback.print_exc()
        return e.exit_code

    except KeyboardInterrupt:
        print("\n\n⚠️  Interrupted by user")
        return 130

    duration_seconds = (datetime.now() - start_time).total_seconds()
    print(f"\n⏱️  Total execution time: {duration_seconds:.1f} seconds")
    print(f"\n✅ {args.command} completed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
