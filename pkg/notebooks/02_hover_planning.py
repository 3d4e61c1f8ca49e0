"""
Clustering, visit order and hover refinement
============================================

Fifteen targets scattered around the field centre are grouped into at most
eight per hover point, visited in the cheapest order, and the hover points are
then pulled toward the vehicles' route while each stage gets its time budget.
"""

import numpy as np

from airsea.hover import cost_matrix, held_karp, mtz_branch_and_bound, sensing_radii, vbsc_cluster
from airsea.pipeline import gaussian_layout, plan_hovers
from airsea.scenario import table_one

rng = np.random.default_rng(7)
scenario = table_one(gaussian_layout(15, 50.0, rng))
w, sp = scenario.world, scenario.system

# capacity- and coverage-constrained clustering
assignment = vbsc_cluster(w.targets, sensing_radii(scenario), sp.max_simultaneous_targets, seed=7, altitude=sp.altitude)
print(f"{assignment.num_clusters} hover points")
for c, cen in zip(assignment.clusters, assignment.centroids):
    print(f"  centroid ({cen[0]:6.1f}, {cen[1]:6.1f})  targets {[int(j) for j in c]}")

# visit order from start to end; both exact solvers agree
nodes = np.vstack([w.uav_start, assignment.centroids, w.uav_end])
cm = cost_matrix(nodes, scenario.current, sp)
dp, bb = held_karp(cm), mtz_branch_and_bound(cm)
print(f"order {dp.order}  cost {dp.cost:.1f} J  (branch and bound: {bb.cost:.1f} J)")

# hover-point refinement with time allocation, discretised to slots.
# The USV sets the mission length, and cruising near 10 m/s draws less power
# than hovering, so the UAV may swing wide of the field rather than wait.
notes = []
plan = plan_hovers(assignment, dp, scenario, notes)
print("refined hover points:\n", np.round(plan.hover_points, 1))
print("flight times (s):", np.round(plan.t_fly, 2))
print("hover times (s): ", np.round(plan.t_hover, 2))
print("slots fly/hover:", plan.fly_slots, plan.hover_slots)
for n in notes:
    print("note:", n)
