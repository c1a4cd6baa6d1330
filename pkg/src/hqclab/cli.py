"""Command-line driver: hqc-lab <experiment> [--config PATH] [--out PATH] ...

Experiments: converge-1d, stochastic-2d, dynamics-1d, equivalence.
Writes a CSV table (17 significant digits for floats) and prints a summary
with fitted slopes.  Exit codes: 0 success, 1 solver failure, 2 config error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .experiments import (
    ConfigError,
    ExperimentResult,
    run_converge_1d,
    run_dynamics_1d,
    run_equivalence,
    run_stochastic_2d,
)

EXPERIMENTS = {
    "converge-1d": run_converge_1d,
    "stochastic-2d": run_stochastic_2d,
    "dynamics-1d": run_dynamics_1d,
    "equivalence": run_equivalence,
}


def parse_config_file(path: str) -> dict:
    """Flat `key = value` lines; '#' starts a comment; blank lines ignored."""
    cfg = {}
    text = Path(path).read_text()
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{ln}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if key in cfg:
            raise ConfigError(f"{path}:{ln}: duplicate key {key!r}")
        cfg[key] = value.strip()
    return cfg


def format_value(v) -> str:
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def write_csv(path: str, result: ExperimentResult) -> None:
    lines = [",".join(result.columns)]
    for row in result.rows:
        lines.append(",".join(format_value(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="hqc-lab", description=__doc__)
    parser.add_argument("experiment", choices=sorted(EXPERIMENTS))
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--out", help="CSV output path (default <experiment>.csv)")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--threads", type=int, help="worker threads for independent rows")
    args = parser.parse_args(argv)

    try:
        cfg = parse_config_file(args.config) if args.config else {}
        if args.seed is not None:
            cfg["seed"] = str(args.seed)
        if args.threads is not None:
            cfg["threads"] = str(args.threads)
        result = EXPERIMENTS[args.experiment](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    out = args.out or f"{args.experiment}.csv"
    write_csv(out, result)
    print(f"{args.experiment}: {len(result.rows)} rows -> {out}")
    for key, value in result.summary.items():
        print(f"  {key} = {format_value(value)}")
    if result.failures:
        print(f"  FAILED rows: {result.failures}", file=sys.stderr)
        return 1
    print("  status: PASS" if _summary_ok(args.experiment, result) else "  status: CHECK SLOPES")
    return 0


def _summary_ok(name: str, result: ExperimentResult) -> bool:
    s = result.summary
    try:
        if name == "converge-1d":
            return 0.85 <= s["slope_uhc_h1"] <= 1.15 and 1.8 <= s["slope_uh_l2"] <= 2.2
        if name == "stochastic-2d":
            return 1.6 <= s.get("slope_hqc_full", float("nan")) <= 2.4
        if name == "dynamics-1d":
            return 1.6 <= s["slope_linf_l2"] <= 2.4 and 0.7 <= s["slope_l2_h1"] <= 1.3
        if name == "equivalence":
            return bool(s["all_within_tolerance"])
    except (KeyError, TypeError):
        return False
    return False


if __name__ == "__main__":
    sys.exit(main())
