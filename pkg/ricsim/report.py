"""
Markdown reports rebuilt from the CSV files of a run or a sweep.
"""

from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union

import pandas as pd


def _cell(value: Any) -> str:
    if isinstance(value, float):
        if value != value:
            return ""
        return f"{value:.6g}"
    return str(value)


def markdown_table(df: pd.DataFrame) -> str:
    """GitHub-flavored markdown rendering of a small table."""
    header = [str(c) for c in df.columns]
    lines = [
        "| " + " | ".join(header) + " |",
        "|" + "|".join("---" for _ in header) + "|",
    ]
    for row in df.itertuples(index=False):
        lines.append("| " + " | ".join(_cell(v) for v in row) + " |")
    return "\n".join(lines)


def _read(out_dir: Path, name: str) -> Optional[pd.DataFrame]:
    path = out_dir / f"{name}.csv"
    if not path.exists():
        return None
    try:
        return pd.read_csv(path)
    except pd.errors.EmptyDataError:
        return None


def association_section(df: pd.DataFrame) -> str:
    """Per policy phase, the percentage of time the UEs spent on each cell."""
    phases = list(dict.fromkeys(df["phase"]))
    cells = list(dict.fromkeys(df["cell"]))
    pivot = df.pivot_table(index="phase", columns="cell", values="fraction", aggfunc="sum", sort=False)
    pivot = pivot.reindex(index=phases, columns=cells).fillna(0.0) * 100.0
    table = pivot.round(1).reset_index()
    table.columns = ["policy"] + [f"{c} [%]" for c in cells]
    return "## UE association\n\n" + markdown_table(table)


def allocation_section(df: pd.DataFrame) -> str:
    """Per-UE bandwidth share under each allocation schema (last split of each schema)."""
    last = df.drop_duplicates(subset=["schema", "ue"], keep="last")
    schemas = list(dict.fromkeys(last["schema"]))
    ues = sorted(dict.fromkeys(last["ue"]), key=lambda u: (len(u), u))
    pivot = last.pivot(index="ue", columns="schema", values="share_pct").reindex(index=ues, columns=schemas)
    table = pivot.reset_index()
    table.columns = ["UE"] + [f"{s} [%]" for s in schemas]
    return "## Radio resource allocation\n\n" + markdown_table(table)


def render_report(out_dir: Union[str, Path], name: str, summary: Mapping[str, float]) -> str:
    out_dir = Path(out_dir)
    parts: List[str] = [f"# {name}"]
    parts.append("## Summary\n\n" + markdown_table(pd.DataFrame(sorted(summary.items()), columns=["metric", "value"])))

    association = _read(out_dir, "ts_association")
    if association is not None and len(association):
        parts.append(association_section(association))

    shares = _read(out_dir, "qra_ue_shares")
    if shares is not None and len(shares):
        parts.append(allocation_section(shares))

    rejections = _read(out_dir, "ssd_rejections")
    if rejections is not None and len(rejections):
        parts.append("## Rejected legitimate connection attempts\n\n" + markdown_table(rejections))

    windows = _read(out_dir, "ssd_windows")
    if windows is not None and len(windows):
        storms = windows[windows["storm"]]
        parts.append(f"## Storm detection\n\n{len(storms)} of {len(windows)} windows flagged.")

    events = _read(out_dir, "beam_events")
    if events is not None and len(events):
        counts = events.groupby("reason").size().reset_index(name="count")
        parts.append("## Beam events\n\n" + markdown_table(counts))

    conflicts = _read(out_dir, "conflicts")
    if conflicts is not None and len(conflicts):
        counts = conflicts.groupby(["entity", "parameter", "winner"]).size().reset_index(name="conflicts")
        parts.append("## Control conflicts\n\n" + markdown_table(counts))
    return "\n\n".join(parts) + "\n"


def render_sweep_report(table: pd.DataFrame, name: str, param: str) -> str:
    means = [c for c in table.columns if c.endswith("_mean")]
    shown = table[["value", "seeds"] + means].rename(columns={"value": param})
    return f"# {name}: sweep of {param}\n\n" + markdown_table(shown) + "\n"
