"""Command-line entry point: headless runs, paired batches, the live
gateway, scenario tooling, and replay analysis."""
from __future__ import annotations

import argparse
import json
import pathlib
import sys

from . import __version__
from .config import TICKS_PER_MINUTE
from .engine import run_game
from .harness import (
    AdvisoryObserver,
    BlueAdvisedBot,
    BlueBaselineBot,
    ExperimentConfig,
    RedBot,
    RedProfile,
    generate_scenario,
    run_batch,
    run_pair,
)
from .metrics import results_csv, run_csv_row, score, summary_table
from .replay import ReplayLog
from .world import (
    InvariantViolation,
    MalformedDocument,
    Scenario,
    load_scenario,
    render_scenario,
)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

MISSIONS = ("point-defense", "area-defense", "point-attack", "area-attack", "withdrawal")


def _load_or_generate(args) -> Scenario:
    if getattr(args, "scenario", None):
        return load_scenario(pathlib.Path(args.scenario).read_text())
    return generate_scenario(
        args.mission, args.seed,
        duration_min=args.duration_min, cadence_min=args.cadence_min,
        fearful=args.fearful, zealous=args.zealous)


def _add_scenario_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", help="scenario JSON file (raid-scenario/1)")
    p.add_argument("--mission", choices=MISSIONS, default="point-defense")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--duration-min", type=int, default=120)
    p.add_argument("--cadence-min", type=int, default=15)
    p.add_argument("--fearful", type=int, default=0)
    p.add_argument("--zealous", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="raidsim", description=__doc__)
    parser.add_argument("--version", action="version", version=f"raidsim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="emit a deterministic scenario document")
    _add_scenario_args(p)
    p.add_argument("--out", help="write to file instead of stdout")

    p = sub.add_parser("validate", help="schema-check a scenario document")
    p.add_argument("file")

    p = sub.add_parser("run", help="run one headless game")
    _add_scenario_args(p)
    p.add_argument("--arm", choices=("advised", "baseline"), default="advised")
    p.add_argument("--aggression", type=float, default=0.8)
    p.add_argument("--feints", type=int, default=0)
    p.add_argument("--out", help="directory for the replay file")

    p = sub.add_parser("pair", help="run an advised/baseline pair on one scenario")
    _add_scenario_args(p)
    p.add_argument("--aggression", type=float, default=0.8)
    p.add_argument("--feints", type=int, default=0)
    p.add_argument("--out", help="directory for replays and metrics")

    p = sub.add_parser("batch", help="run a paired experiment batch")
    p.add_argument("--pairs", type=int, default=20)
    p.add_argument("--seed", type=int, default=1000)
    p.add_argument("--config", help="raid-experiment/1 JSON config")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", help="output directory (runs.csv, summary.txt)")

    p = sub.add_parser("replay", help="recompute metrics from a replay file")
    p.add_argument("file")
    p.add_argument("--scenario", required=True)

    p = sub.add_parser("serve", help="serve an interactive game to the console")
    _add_scenario_args(p)
    p.add_argument("--port", type=int, default=8642)
    p.add_argument("--pace", type=float, default=1.0,
                   help="simulated minutes per wall-clock second (0 = unthrottled)")
    p.add_argument("--free-replan", action="store_true",
                   help="accept task commands while the clock runs")
    return parser


def cmd_gen(args) -> int:
    scenario = _load_or_generate(args)
    text = render_scenario(scenario)
    if args.out:
        pathlib.Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        load_scenario(pathlib.Path(args.file).read_text())
    except (MalformedDocument, InvariantViolation, OSError) as e:
        print(f"invalid: {e}", file=sys.stderr)
        return EXIT_USAGE
    print("ok")
    return EXIT_OK


def cmd_run(args) -> int:
    scenario = _load_or_generate(args)
    profile = RedProfile(aggression=args.aggression, feints=args.feints)
    advised = args.arm == "advised"
    result = run_game(
        scenario,
        RedBot(scenario, profile),
        BlueAdvisedBot(scenario) if advised else BlueBaselineBot(scenario),
        observers=(AdvisoryObserver(scenario),) if advised else (),
    )
    card = score(result.replay, scenario)
    print(f"{scenario.name} [{args.arm}] total {card.total:.2f}")
    for name, (raw, weight) in card.components.items():
        print(f"  {name:>22}: {raw:.3f} (x{weight:.2f})")
    if args.out:
        out = pathlib.Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        path = out / f"{scenario.name}-{args.arm}.jsonl"
        result.replay.write(path)
        print(f"replay: {path} ({result.replay.digest()[:16]})")
    return EXIT_OK


def cmd_pair(args) -> int:
    scenario = _load_or_generate(args)
    cfg = ExperimentConfig(n_pairs=1, aggression=args.aggression, feints=args.feints,
                           duration_min=args.duration_min, cadence_min=args.cadence_min)
    pair = run_pair(scenario, cfg)
    print(f"{scenario.name}: advised {pair.advised.score.total:.2f} "
          f"vs baseline {pair.unadvised.score.total:.2f} "
          f"({'advised' if pair.advised_won else 'baseline'} ahead)")
    if args.out:
        out = pathlib.Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "pair.csv").write_text(results_csv([pair]))
        print(f"metrics: {out / 'pair.csv'}")
    return EXIT_OK


def cmd_batch(args) -> int:
    if args.config:
        raw = json.loads(pathlib.Path(args.config).read_text())
        cfg = ExperimentConfig.from_dict(raw)
    else:
        cfg = ExperimentConfig()
    overrides = {}
    if args.pairs is not None:
        overrides["n_pairs"] = args.pairs
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out:
        overrides["out_dir"] = args.out
    if args.jobs:
        overrides["jobs"] = args.jobs
    if overrides:
        from dataclasses import replace

        cfg = replace(cfg, **overrides)

    def progress(done, total, pair):
        print(f"[{done}/{total}] {pair.scenario_name}: "
              f"advised {pair.advised.score.total:.1f} "
              f"baseline {pair.unadvised.score.total:.1f}", flush=True)

    results, summary, csv_text = run_batch(cfg, progress=progress)
    print(summary_table(summary))
    return EXIT_OK


def cmd_replay(args) -> int:
    replay = ReplayLog.read(args.file)
    scenario = load_scenario(pathlib.Path(args.scenario).read_text())
    card = score(replay, scenario)
    print(f"replay {replay.digest()[:16]} total {card.total:.2f}")
    for name, (raw, weight) in card.components.items():
        print(f"  {name:>22}: {raw:.3f} (x{weight:.2f})")
    return EXIT_OK


def cmd_serve(args) -> int:
    from .service import ServeOptions, serve_game

    scenario = _load_or_generate(args)
    options = ServeOptions(minutes_per_second=args.pace, free_replan=args.free_replan)
    print(f"serving {scenario.name} on ws://127.0.0.1:{args.port}/ws")
    serve_game(scenario, args.port, options)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "gen": cmd_gen, "validate": cmd_validate, "run": cmd_run,
        "pair": cmd_pair, "batch": cmd_batch, "replay": cmd_replay,
        "serve": cmd_serve,
    }
    try:
        return handlers[args.command](args)
    except (MalformedDocument, InvariantViolation) as e:
        print(f"invalid input: {e}", file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as e:  # noqa: BLE001 - single CLI boundary
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
