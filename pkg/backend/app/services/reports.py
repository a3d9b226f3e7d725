import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Union

import pandas as pd

from app.models.network import BatteryTrace, FlowAssignment, NetworkInstance, RateMatrix

logger = logging.getLogger(__name__)


def rates_frame(inst: NetworkInstance, rates: RateMatrix) -> pd.DataFrame:
    rows = [
        {"node": i, "slot": t, "rate": float(rates.values[i, t])}
        for i in inst.sources
        for t in range(inst.horizon)
    ]
    return pd.DataFrame(rows, columns=["node", "slot", "rate"])


def flows_frame(inst: NetworkInstance, flows: FlowAssignment) -> pd.DataFrame:
    rows = [
        {"edge": f"{i}->{j}", "slot": t, "flow": float(flows.values[k, t])}
        for k, (i, j) in enumerate(inst.edges)
        for t in range(inst.horizon)
    ]
    return pd.DataFrame(rows, columns=["edge", "slot", "flow"])


def battery_frame(inst: NetworkInstance, battery: BatteryTrace) -> pd.DataFrame:
    rows = [
        {"node": i, "slot": t, "level": float(battery.levels[i, t])}
        for i in inst.sources
        for t in range(battery.levels.shape[1])
    ]
    return pd.DataFrame(rows, columns=["node", "slot", "level"])


def build_summary(
    inst: NetworkInstance,
    rates: RateMatrix,
    solver: str,
    iterations: int,
    wall_time: float,
    parameters: Optional[Dict[str, Any]] = None,
    extra: Optional[Dict[str, Any]] = None,
) -> Dict[str, Any]:
    summary = {
        "solver": solver,
        "min_rate": rates.min_rate(inst),
        "sorted_rates": [float(v) for v in rates.sorted_vector(inst)],
        "iterations": iterations,
        "wall_time": wall_time,
        "parameters": parameters or {},
    }
    if extra:
        summary.update(extra)
    return summary


def write_reports(
    out_dir: Union[str, Path],
    inst: NetworkInstance,
    rates: RateMatrix,
    summary: Dict[str, Any],
    flows: Optional[FlowAssignment] = None,
    battery: Optional[BatteryTrace] = None,
) -> Path:
    """Write rates.csv, flows.csv, battery.csv and summary.json into out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rates_frame(inst, rates).to_csv(out / "rates.csv", index=False)
    if flows is not None:
        flows_frame(inst, flows).to_csv(out / "flows.csv", index=False)
    if battery is not None:
        battery_frame(inst, battery).to_csv(out / "battery.csv", index=False)
    with open(out / "summary.json", "w", encoding="utf-8") as handle:
        json.dump(summary, handle, indent=2)
        handle.write("\n")
    logger.info(f"Reports written to {out}")
    return out
