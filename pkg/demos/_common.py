"""Shared helpers for the demo scripts: locate configs and run them like the CLI does."""

from pathlib import Path

from nvdd.cli import run_experiment
from nvdd.config import load_config

CONFIGS = Path(__file__).resolve().parent / "configs"


def run(name: str, **overrides):
    """Load ``configs/<name>`` and run it; ``overrides`` replace experiment parameters."""
    cfg = load_config(CONFIGS / name)
    cfg.params.update(overrides)
    return cfg, run_experiment(cfg)


def heading(text: str) -> None:
    print(f"\n== {text} " + "=" * max(0, 72 - len(text)))
