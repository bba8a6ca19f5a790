"""Plant PI integrating away the asset droop response, and the FROB preventing it."""
import json
import sys
from pathlib import Path

import numpy as np

from hfc.config import parse_config
from hfc.simkit import run
from hfc.svg import Panel, line_chart

root = Path(__file__).resolve().parent.parent
out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("counteraction_out")
out.mkdir(exist_ok=True)
raw = json.loads((root / "scenarios" / "counteraction.json").read_text())

series = {}
for strategy in ("NoCoordination", "FROB"):
    raw["plants"][0]["strategy"] = strategy
    rec = run(parse_config(raw))
    t = np.asarray(rec.t)
    tail = t >= 540.0
    fc = float(np.mean(rec["p_fc_poc_pu"][tail]))
    droop = float(np.mean(rec["p_ess_fcr_pu"][tail]))
    print(f"{strategy:15s} FC at PoC {fc:.5f} pu of droop {droop:.5f} pu ({100 * fc / droop:.1f}%)")
    series[strategy] = rec["p_fc_poc_pu"]

line_chart(out / "counteraction.svg", t, [Panel(series, "FC at PoC (pu)")],
           "Droop response seen at the plant PoC", "t (s)")
print(f"plot written to {out / 'counteraction.svg'}")
