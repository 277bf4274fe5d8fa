"""The module on/off sweep in the classic 16-row ablation layout."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

from .config import RunConfig
from .data import synth_splits
from .runner import RunOutcome, run_training

MODULES = ("C2f_EMA", "FasterPW", "WFPN", "CARAFE")

# baseline, singles, pairs, triples, all four
TABLE_ORDER: tuple[tuple[bool, bool, bool, bool], ...] = tuple(
    tuple(bool(int(ch)) for ch in row) for row in (
        "0000", "1000", "0100", "0010", "0001",
        "1100", "1010", "1001", "0110", "0101", "0011",
        "1110", "0111", "1011", "1101", "1111"))

# first-block variants, each on top of the baseline
PLACEMENT_ROWS = (
    ("C2f_EMA in first C2f", {"first_block": "c2f_ema"}),
    ("C2f_FasterPW_EMA in first C2f", {"first_block": "c2f_fasterpw_ema"}),
    ("C3_FasterPW_EMA in first C2f", {"first_block": "c3_fasterpw_ema"}),
    ("C2f_EMA in every C2f", {"ema_placement": "all"}),
)


class AblationError(RuntimeError):
    """One combination of the sweep failed; the message names it."""


@dataclass
class AblationRow:
    label: str
    switches: tuple[bool, bool, bool, bool]
    map50: float
    map5095: float
    params: int
    flops: int
    extra: bool = False


@dataclass
class AblationTable:
    rows: list[AblationRow] = field(default_factory=list)

    @property
    def main_rows(self) -> list[AblationRow]:
        return [r for r in self.rows if not r.extra]

    def markdown(self) -> str:
        head = "| " + " | ".join(MODULES) + " | mAP@0.5 (%) | Para (M) | FLOPs(G) |"
        sep = "|" + "---|" * (len(MODULES) + 3)
        lines = [head, sep]
        for r in self.main_rows:
            lines.append(_md_row(r))
        extras = [r for r in self.rows if r.extra]
        if extras:
            lines += ["", "| Variant | mAP@0.5 (%) | Para (M) | FLOPs(G) |", "|---|---|---|---|"]
            for r in extras:
                lines.append(f"| {r.label} | {100 * r.map50:.1f} | {r.params / 1e6:.4f} | {r.flops / 1e9:.4f} |")
        return "\n".join(lines) + "\n"

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["label", *MODULES, "extra", "map50", "map5095", "params", "flops", "params_m", "flops_g"])
            for r in self.rows:
                w.writerow([r.label, *("1" if s else "0" for s in r.switches), int(r.extra), repr(r.map50),
                            repr(r.map5095), r.params, r.flops, f"{r.params / 1e6:.6f}", f"{r.flops / 1e9:.6f}"])


def _md_row(r: AblationRow) -> str:
    marks = " | ".join("✓" if s else " " for s in r.switches)
    return f"| {marks} | {100 * r.map50:.1f} | {r.params / 1e6:.4f} | {r.flops / 1e9:.4f} |"


def combo_label(sw: tuple[bool, bool, bool, bool]) -> str:
    on = [m for m, s in zip(MODULES, sw) if s]
    return "+".join(on) if on else "baseline"


def _row(label: str, sw, out: RunOutcome, extra: bool) -> AblationRow:
    r = out.report
    return AblationRow(label, tuple(sw), r.map50, r.map5095, out.cost.params, out.cost.flops, extra)


def ablate(base: RunConfig, epochs: int | None = None, out_dir: str | Path | None = None,
           extra_rows: bool = True, progress: Callable[[AblationRow], None] | None = None) -> AblationTable:
    """Train every combination with the shared seed and collect the summary table."""
    root = Path(out_dir) if out_dir is not None else Path(base.out_dir) / f"{base.name}_ablation"
    root.mkdir(parents=True, exist_ok=True)
    train_cfg = base.train if epochs is None else replace(base.train, epochs=epochs)
    data = base.data
    if data is None:
        s = base.synth
        synth_splits(root / "data", s.seed, s.n_train, s.n_val, s.resolution, s.classes)
        data = str(root / "data")
    plan = [(combo_label(sw), base.model.with_switches(*sw), sw, False) for sw in TABLE_ORDER]
    if extra_rows:
        on = (True, False, False, False)
        for label, kw in PLACEMENT_ROWS[1:]:
            plan.append((label, replace(base.model.with_switches(*on), **kw), on, True))
    table = AblationTable()
    for i, (label, model_cfg, sw, extra) in enumerate(plan):
        run = replace(base, model=model_cfg, train=train_cfg, data=data, out_dir=str(root / "runs"),
                      name=f"{i:02d}_{label.replace(' ', '_').replace('+', '_')}")
        try:
            outcome = run_training(run)
        except Exception as e:  # noqa: BLE001 - name the failing combination, keep the cause
            raise AblationError(f"ablation run {label!r} failed: {e}") from e
        row = _row(label, sw, outcome, extra)
        table.rows.append(row)
        if progress is not None:
            progress(row)
    table.write_csv(root / "ablation.csv")
    (root / "ablation.md").write_text(table.markdown())
    return table
