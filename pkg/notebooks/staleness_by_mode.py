"""
Read staleness per consistency mode
===================================

Writes land at one edge site and reads come from another, for a strong, a
bounded (10 s) and a read-your-writes class.  Staleness is measured against
the simulator's record of every acknowledged write.

Run with ``python3 notebooks/staleness_by_mode.py`` (a few seconds).
"""

from pathlib import Path

import slagrid
from slagrid.harness import ScenarioRun, check_ryw, check_strong_reads, load_script

scenario = Path(slagrid.__file__).parent / "scenarios" / "staleness_modes.yaml"
run = ScenarioRun(load_script(scenario))
report = run.execute()

# %%
# Maximum and mean staleness per mode, and the median write latency.
for mode, s in report.summary["staleness"].items():
    w = report.summary["write_latency"].get(mode, {})
    print(f"{mode:8s} reads={s['count']:6d} max={s['max_ms']:6d} ms mean={s['mean_ms']:8.2f} ms write p50={w.get('p50_ms')} ms")

# %%
# The trace checkers should report nothing.
print("strong violations:", len(check_strong_reads(run.trace)))
print("ryw violations:", len(check_ryw(run.trace)))
