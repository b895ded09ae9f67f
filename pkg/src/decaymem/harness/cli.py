"""Command line: run, trace-decay, ablate, replay."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from decaymem.gateway import GatewayError, RemoteTransport, SchemaViolation, ScriptExhausted
from decaymem.harness.ablation import ablate
from decaymem.harness.scenario import ScenarioError, bundled_scenarios, load_scenario, run_scenario
from decaymem.harness.trace import DEFAULT_TEMPERATURES, trace_decay
from decaymem.model import MODES, ConfigError, EngineConfig
from decaymem.store import MemoryStore, RemoteEmbedder, StoreError, replay

# EngineConfig fields exposed as flags; enabled_levels and initial_topics come via --mode / scenario files.
_SCALAR_FIELDS = [f for f in dataclasses.fields(EngineConfig) if f.name not in ("enabled_levels", "initial_topics")]


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("engine config (defaults come from the scenario, then built-in defaults)")
    g.add_argument("--mode", choices=sorted(MODES), help="layer ablation mode (enabled levels)")
    for f in _SCALAR_FIELDS:
        flag = "--" + f.name.replace("_", "-")
        if f.type in ("bool", bool):
            g.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=None)
        else:
            conv = int if f.type in ("int", int) else float
            g.add_argument(flag, dest=f.name, type=conv, default=None, metavar=f.name.upper())


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    out = {f.name: getattr(args, f.name) for f in _SCALAR_FIELDS if getattr(args, f.name, None) is not None}
    if getattr(args, "mode", None):
        out["mode"] = args.mode
    return out


def _csv_floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="decaymem", description="Decay-driven memory control engine harness.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one scenario file or bundled scenario")
    run.add_argument("scenario", help=f"path to a YAML scenario, or one of: {', '.join(bundled_scenarios())}")
    run.add_argument("--span-tokens", type=int, default=None, help="distractor span between key fact and probe")
    run.add_argument("--store", type=Path, default=None, help="directory for the persistent store (default: memory)")
    run.add_argument("--json", type=Path, default=None, help="write the structured report here")
    run.add_argument("--remote", action="store_true",
                     help="use the HTTP chat/embedding endpoints configured by DECAYMEM_* variables")
    run.add_argument("--embed-dim", type=int, default=256)
    _add_config_flags(run)

    tr = sub.add_parser("trace-decay", help="emit retention traces for a temperature grid as CSV")
    tr.add_argument("--temperatures", type=_csv_floats, default=list(DEFAULT_TEMPERATURES))
    tr.add_argument("--turns", type=int, default=150)
    group = tr.add_mutually_exclusive_group()
    group.add_argument("--reinforce-at", type=_csv_floats, default=[20.0], help="comma-separated access turns")
    group.add_argument("--reinforce-every", action="store_true", help="access every turn")
    group.add_argument("--no-reinforce", action="store_true")
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--every", type=int, default=10, help="sampling stride in turns")
    tr.add_argument("--out", type=Path, default=None, help="CSV path (default: stdout)")
    _add_config_flags(tr)

    ab = sub.add_parser("ablate", help="compare layer modes over scenarios")
    ab.add_argument("--modes", default="M1,M2,M3,M4,M5")
    ab.add_argument("--scenario", action="append", default=None, help="repeatable; default: all bundled")
    ab.add_argument("--json", type=Path, default=None)
    _add_config_flags(ab)

    rp = sub.add_parser("replay", help="rebuild a store from its journal and verify every checksum")
    rp.add_argument("source", type=Path, help="store directory (holding journal.jsonl)")
    rp.add_argument("dest", type=Path, help="empty directory for the rebuilt store")
    rp.add_argument("--dim", type=int, default=256)
    return parser


def _cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    overrides = _overrides(args)
    cfg = scenario.engine_config(**overrides)
    transport = embedder = None
    if args.remote:
        transport = RemoteTransport()
        embedder = RemoteEmbedder(dim=args.embed_dim)
    dim = embedder.dim if embedder is not None else 256
    store = MemoryStore(args.store, dim=dim) if args.store is not None else None
    report = run_scenario(scenario, cfg, transport=transport, embedder=embedder, store=store,
                          span_tokens=args.span_tokens)
    print(report.human())
    if args.json is not None:
        args.json.write_text(report.to_json() + "\n", encoding="utf-8")
    return 0 if report.solved == len(report.probes) else 1


def _cmd_trace(args) -> int:
    cfg = EngineConfig(**{k: v for k, v in _overrides(args).items() if k != "mode"})
    if args.reinforce_every:
        schedule = "every"
    elif args.no_reinforce:
        schedule = None
    else:
        schedule = [int(t) for t in args.reinforce_at]
    samples = sorted(set(range(0, args.turns + 1, max(1, args.every))) | {t for t in (50, 100, 150) if t <= args.turns})
    table = trace_decay(args.temperatures, args.turns, schedule, cfg, seed=args.seed, sample_times=samples)
    text = table.to_csv()
    if args.out is None:
        sys.stdout.write(text)
    else:
        args.out.write_text(text, encoding="utf-8")
        for T in args.temperatures:
            means = ", ".join(f"t={t}: {table.mean_retention(T, t):.4f}" for t in (50, 100, 150) if t <= args.turns)
            print(f"T={T:g}  mean retention  {means}")
    return 0


def _cmd_ablate(args) -> int:
    names = args.scenario or bundled_scenarios()
    scenarios = [load_scenario(n) for n in names]
    overrides = {k: v for k, v in _overrides(args).items() if k != "mode"}
    table = ablate([m.strip() for m in args.modes.split(",") if m.strip()], scenarios, **overrides)
    print(table.human())
    if args.json is not None:
        args.json.write_text(table.to_json() + "\n", encoding="utf-8")
    return 0 if all(r.structure_ok for r in table.rows) else 1


def _cmd_replay(args) -> int:
    rebuilt = replay(args.source, args.dest, dim=args.dim)
    print(f"replayed {len(rebuilt.journal)} committed turns, {len(rebuilt)} records into {args.dest}")
    for name in ("records.jsonl", "updates.jsonl", "journal.jsonl"):
        a, b = args.source / name, args.dest / name
        same = (a.read_bytes() if a.exists() else b"") == (b.read_bytes() if b.exists() else b"")
        print(f"  {name}: {'identical' if same else 'DIFFERENT'}")
        if not same:
            return 1
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": _cmd_run, "trace-decay": _cmd_trace, "ablate": _cmd_ablate, "replay": _cmd_replay}
    try:
        return handlers[args.command](args)
    except (ScenarioError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ScriptExhausted as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (GatewayError, SchemaViolation, StoreError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    raise SystemExit(main())
