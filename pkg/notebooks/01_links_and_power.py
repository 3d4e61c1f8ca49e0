"""
Link budgets and the rotary-wing power curve
============================================

How far the UAV may stray from the USV, how far it can sense a target, and
what flying costs per metre under the standard parameters.
"""

import numpy as np

from airsea.channel import comm_distance_threshold, sensing_distance_threshold
from airsea.energy import max_range_speed, uav_power_flying, xi_from_speed
from airsea.scenario import SystemParams, Requirements, linear_to_db

sp, req = SystemParams(), Requirements()

# distance thresholds: the comm link binds long before sensing does
d_c = comm_distance_threshold(req.rate_fly, sp.comm_power, sp)
d_s = sensing_distance_threshold(req.inst_snr, sp.sense_power, sp)
print(f"comm range at {req.rate_fly} bit/s/Hz: {d_c:8.1f} m")
print(f"sensing range at {linear_to_db(req.inst_snr):.0f} dB:    {d_s:8.1f} m")

# sensing power splits across the targets of a cluster, so the radius shrinks
for n in (1, 2, 4, 8):
    r = sensing_distance_threshold(req.inst_snr, sp.sense_power / n, sp)
    print(f"  {n} targets per hover -> {r:7.1f} m")

# propulsion power against speed; hover power sits at v = 0
v = np.linspace(0, 30, 7)
for vi, p in zip(v, uav_power_flying(v, sp)):
    print(f"v = {vi:4.1f} m/s   P = {p:7.2f} W")

# the speed that minimises energy per metre
v_mr = max_range_speed(sp)
print(f"max-range speed {v_mr:.3f} m/s, {uav_power_flying(v_mr, sp) / v_mr:.3f} J/m")

# the induced-velocity auxiliary variable used by the convex reformulation
print("xi at 0, 10, 20 m/s:", np.round(xi_from_speed(np.array([0.0, 10.0, 20.0]), sp), 4))
