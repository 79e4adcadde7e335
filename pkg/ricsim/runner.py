"""
Wiring of one scenario run: xApps, the simulated Non-RT RIC pre-pass
(KPI profiles, REMs), the run itself and its output files. Sweeps repeat
runs over parameter values and seeds.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .report import render_report, render_sweep_report
from .ransim import SimulationTrace, Simulator
from .ric import EiKind, XApp
from .scenario import ScenarioConfig, apply_overrides, from_dict
from .utils import sha256_files, write_frames, write_ndjson
from .xapp_bmm import BmmXApp, build_rems
from .xapp_qra import QraXApp
from .xapp_ssd import SsdXApp, train_profile
from .xapp_ts import TsXApp

logger = logging.getLogger(__name__)


@dataclass
class RunResult:
    cfg: ScenarioConfig
    trace: SimulationTrace
    tables: Dict[str, pd.DataFrame]
    summary: Dict[str, float]
    messages: List[Dict[str, Any]] = field(default_factory=list)


def build_xapps(cfg: ScenarioConfig) -> List[XApp]:
    """The enabled xApps of a scenario."""
    cell_ids = [c.cell_id for c in cfg.cells]
    xapps: List[XApp] = []
    x = cfg.xapps
    if x.ts.enabled:
        xapps.append(TsXApp(x.ts, cell_ids, cfg.propagation.exponent, cfg.tick_s))
    if x.qra.enabled:
        xapps.append(QraXApp(x.qra, cell_ids))
    if x.ssd.enabled:
        xapps.append(SsdXApp(x.ssd, cell_ids))
    if x.bmm.enabled:
        beamformed = [c.cell_id for c in cfg.cells if c.beams is not None]
        xapps.append(BmmXApp(x.bmm, beamformed, cfg.beam_failure.threshold_dbm, cfg.tick_s))
    return xapps


def non_rt_prepass(sim: Simulator, xapps: Sequence[XApp]):
    """Learn the offline models the enabled xApps need and hand them over as A1 EI."""
    cfg = sim.cfg
    ids = {x.xapp_id for x in xapps}
    if "ssd" in ids:
        profiles = train_profile(sim.iot_attachments(), cfg.traffic.legit_rate_per_hour, cfg.xapps.ssd,
                                 sim.rngs["training_ssd"])
        sim.ric.publish_ei(EiKind.KPI_PROFILE, profiles, 0.0)
    if "bmm" in ids and cfg.xapps.bmm.mode == "rem":
        bmm = cfg.xapps.bmm
        rng = sim.rngs["training_bmm"]
        traces = sim.beam_training_trace(bmm.training_s, bmm.training_sample_period_s, rng)
        rems = build_rems(traces, cfg.localization, cfg.bounds, bmm, rng)
        sim.ric.publish_ei(EiKind.REM, rems, 0.0)


def run_config(cfg: ScenarioConfig) -> RunResult:
    """Execute one scenario and collect its tables and headline metrics."""
    xapps = build_xapps(cfg)
    sim = Simulator(cfg, xapps)
    if cfg.duration_s > 0:
        non_rt_prepass(sim, xapps)
    trace = sim.run()

    tables = trace.frames()
    summary: Dict[str, float] = {
        "events": float(trace.n_events),
        "conflicts": float(len(trace.conflicts)),
    }
    for xapp in xapps:
        tables.update(xapp.export(trace))
        summary.update(xapp.summary(trace))
    return RunResult(cfg, trace, tables, summary, list(sim.ric.message_log))


def write_run(result: RunResult, out_dir: Union[str, Path]) -> Dict[str, Any]:
    """
    Write the CSV tables, the optional message log and report.md.

    Returns:
        {"dir", "files", "checksum"} where checksum covers the CSV files
    """
    out_dir = Path(out_dir)
    paths = write_frames(result.tables, out_dir)
    checksum = sha256_files(paths)
    files = list(paths)
    if result.cfg.ric.log_messages:
        files.append(write_ndjson(result.messages, out_dir / "messages.ndjson"))
    report = out_dir / "report.md"
    report.write_text(render_report(out_dir, result.cfg.name, result.summary), encoding="utf-8")
    files.append(report)
    logger.info("wrote %d files to %s", len(files), out_dir)
    return {"dir": out_dir, "files": files, "checksum": checksum}


def sweep(
    doc: Dict[str, Any],
    param: str,
    values: Sequence[Any],
    seeds: int,
    out_dir: Union[str, Path],
    on_run: Optional[Callable[[Any, int], None]] = None,
) -> pd.DataFrame:
    """
    Run a scenario document once per (value, seed) and aggregate the summaries.

    Seeds are the scenario's seed plus 0..seeds-1, so every value sees the
    same random draws. Each run writes into `<out>/<param>=<value>/seed<seed>`.

    Returns:
        One row per value: value, seeds, then `<metric>_mean` and
        `<metric>_std` for every summary metric
    """
    if seeds < 1:
        raise ValueError("seeds must be >= 1")
    out_dir = Path(out_dir)
    rows = []
    for value in values:
        summaries = []
        for i in range(seeds):
            run_doc = apply_overrides(doc, [(param, value)])
            run_doc["seed"] = int(doc.get("seed", 0)) + i
            cfg = from_dict(run_doc)
            result = run_config(cfg)
            write_run(result, out_dir / f"{param}={value}" / f"seed{cfg.seed}")
            summaries.append(result.summary)
            if on_run is not None:
                on_run(value, cfg.seed)
        row: Dict[str, Any] = {"value": value, "seeds": seeds}
        for metric in sorted(summaries[0]):
            samples = np.array([s[metric] for s in summaries], dtype=float)
            row[f"{metric}_mean"] = float(samples.mean())
            row[f"{metric}_std"] = float(samples.std())
        rows.append(row)
    table = pd.DataFrame(rows)
    out_dir.mkdir(parents=True, exist_ok=True)
    table.to_csv(out_dir / "sweep.csv", index=False, lineterminator="\n")
    (out_dir / "report.md").write_text(render_sweep_report(table, doc.get("name", ""), param), encoding="utf-8")
    return table
