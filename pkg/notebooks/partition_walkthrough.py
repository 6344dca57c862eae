"""
Throughput across a partition
=============================

Three functions of one class share an edge site and a cloud site.  One
works under read-your-writes, one also holds reserved edge slots, and one
needs strong consistency.  The edge loses the cloud for 30 simulated
seconds.  This prints each function's committed rate per second.

Run with ``python3 notebooks/partition_walkthrough.py`` (about two minutes).
"""

from pathlib import Path

import slagrid
from slagrid.harness import load_script, run_scenario

scenario = Path(slagrid.__file__).parent / "scenarios" / "partition_throughput.yaml"
report = run_scenario(load_script(scenario))

# %%
# One row per second; the partition spans seconds 10 to 39.
names = report.functions()
print("t_sec " + " ".join(f"{n.split('.')[1]:>8}" for n in names))
columns = [report.series(n) for n in names]
for t, values in enumerate(zip(*columns)):
    print(f"{t:5d} " + " ".join(f"{v:8.0f}" for v in values))

# %%
# The strong function stops while its replicas cannot form a quorum; the
# reserved function keeps its rate because its slots never leave the edge.
print(report.summary["invocations"])
