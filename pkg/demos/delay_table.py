"""Rise time of the FC response for distributed and centralized FC across delays."""
import json
from pathlib import Path

from hfc.config import parse_config
from hfc.simkit import metrics, run

root = Path(__file__).resolve().parent.parent
raw = json.loads((root / "scenarios" / "delay_study.json").read_text())

print(f"{'delay (s)':>9} | {'distributed':>24} | {'centralized':>24}")
print(f"{'':>9} | {'t90-t10':>11} {'to 90%':>12} | {'t90-t10':>11} {'to 90%':>12}")
for delay in (0.0, 0.1, 1.0, 2.0):
    cells = []
    for mode in ("distributed", "centralized"):
        raw["mode"] = mode
        raw["delays"] = {"plant_to_asset": {"profile": "constant", "t_max": delay}}
        m = metrics(run(parse_config(raw)), 20.0)
        cells.append(f"{m.rise_time:11.3f} {m.response_time:12.3f}")
    print(f"{delay:9.1f} | {cells[0]} | {cells[1]}")
