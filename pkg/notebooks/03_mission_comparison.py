"""
Three ways to fly the same mission
==================================

The jointly optimised plan, a leader-follower baseline where the USV chases a
fixed UAV timeline, and a sequential baseline that hovers straight above each
cluster.  Every result is written to disk and re-audited from the files.
"""

import tempfile
from pathlib import Path

from airsea.pipeline import emit_outputs, run_strategy, sweep_scenario, validate
from airsea.scenario import table_one

template = table_one([[150.0, 150.0]], obstacles=[[110.0, 100.0], [200.0, 205.0]])
scenario = sweep_scenario(template, "sigma", 50.0, seed=0)

out_root = Path(tempfile.mkdtemp(prefix="missions-"))
for strategy in ("proposed", "leader-follower", "sequential"):
    r = run_strategy(strategy, scenario, seed=0)
    m = r.metrics()
    print(f"{strategy:16s} {r.total_energy / 1e3:7.2f} kJ  "
          f"UAV {(m['uav_propulsion_J'] + m['uav_transmit_J']) / 1e3:6.2f} kJ  USV {m['usv_propulsion_J'] / 1e3:6.2f} kJ  "
          f"{m['duration_s']:5.0f} s  {m['num_hover_points']} hovers")
    emit_outputs(r, out_root / strategy)
    report = validate(out_root / strategy)
    print(f"{'':16s} re-audit {'passed' if report['passed'] else 'FAILED'}; files in {out_root / strategy}")
