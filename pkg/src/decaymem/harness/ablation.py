"""Layer ablation: the same scripted scenarios under different enabled-level sets."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Any, Sequence

from decaymem.harness.scenario import Scenario, ScenarioReport, run_scenario
from decaymem.model import MODES, ConfigError, Level


@dataclass
class AblationRow:
    mode: str
    scenario: str
    solved: int
    total: int
    tokens_per_query: float
    l2_records: int
    l3_records: int
    links_symmetric: bool
    structure_ok: bool


@dataclass
class AblationTable:
    rows: list[AblationRow] = field(default_factory=list)
    reports: list[ScenarioReport] = field(default_factory=list, repr=False)

    def by_mode(self) -> dict[str, dict[str, Any]]:
        out: dict[str, dict[str, Any]] = {}
        for r in self.rows:
            agg = out.setdefault(r.mode, {"solved": 0, "total": 0, "tokens_per_query": [], "structure_ok": True})
            agg["solved"] += r.solved
            agg["total"] += r.total
            agg["tokens_per_query"].append(r.tokens_per_query)
            agg["structure_ok"] &= r.structure_ok
        for agg in out.values():
            tpq = agg["tokens_per_query"]
            agg["tokens_per_query"] = round(sum(tpq) / len(tpq), 3)
        return out

    def to_json(self) -> str:
        return json.dumps({"rows": [asdict(r) for r in self.rows], "modes": self.by_mode()}, sort_keys=True, indent=1)

    def human(self) -> str:
        head = f"{'mode':<5} {'scenario':<14} {'solved':>6} {'tok/query':>10} {'L2':>4} {'L3':>4} {'links':>6} {'ok':>3}"
        lines = [head, "-" * len(head)]
        for r in self.rows:
            lines.append(f"{r.mode:<5} {r.scenario:<14} {r.solved:>3}/{r.total:<2} {r.tokens_per_query:>10.1f} "
                         f"{r.l2_records:>4} {r.l3_records:>4} {str(r.links_symmetric):>6} "
                         f"{'yes' if r.structure_ok else 'NO':>3}")
        return "\n".join(lines)


def ablate(modes: Sequence[str], scenarios: Sequence[Scenario], **overrides) -> AblationTable:
    """Run every scenario under every mode with fresh scripted transports.

    ``structure_ok`` holds when disabled levels wrote nothing and all links
    are symmetric.
    """
    labels = [m.upper() for m in modes]
    for m in labels:
        if m not in MODES:
            raise ConfigError(f"unknown mode {m!r}; expected one of {sorted(MODES)}")
    table = AblationTable()
    for mode in labels:
        for sc in scenarios:
            cfg = sc.engine_config(**overrides)
            cfg.enabled_levels = MODES[mode]
            report = run_scenario(sc, cfg)
            counts = report.level_counts
            ok = report.links_symmetric and all(
                counts[lv.value] == 0 for lv in (Level.L2, Level.L3) if lv not in MODES[mode])
            s = report.summary()
            table.rows.append(AblationRow(mode, sc.name, s["solved"], s["total"], s["tokens_per_query"],
                                          counts["L2"], counts["L3"], report.links_symmetric, ok))
            table.reports.append(report)
    return table
