#!/usr/bin/env python3
"""A walking tour of the intersection geometry.

Builds the default four-arm junction, lists its connections, and shows where
the conflict points fall. Run it to sanity-check a modified geometry spec.
"""

from harlsim.geometry import IntersectionSpec, build_intersection, locate

spec = IntersectionSpec()
inter = build_intersection(spec)

print("Intersection: %d approaches x %d entry lanes, lane width %.1f m" % (
    spec.approaches, spec.entry_lanes_per_approach, spec.lane_width))
print("Inner box half-extent %.1f m, optimization zone %.0f m deep" % (
    spec.inner_box_half_extent, spec.optimization_zone_depth))
print()
print("%d connections:" % inter.n_connections)
for c in inter.connections:
    print("  #%02d lane %d -> lane %d  %-8s  length %6.1f m, %d conflict points" % (
        c.id, c.entrance_lane, c.exit_lane, c.movement, c.length, len(c.conflict_point_ids)))

print()
print("%d conflict points (position, involved connections):" % inter.n_conflict_points)
for p in inter.conflict_points:
    print("  q%02d at (%6.2f, %6.2f): %s" % (
        p.id, p.position[0], p.position[1], sorted(p.involved_connections)))

print()
conn = inter.connections[1]
print("Zone walk along connection #%d (%s):" % (conn.id, conn.movement))
for s in (0.0, conn.stop_s - spec.optimization_zone_depth - 5.0,
          conn.stop_s - 50.0, conn.stop_s + 1.0, conn.exit_s + 5.0):
    print("  s = %6.1f m -> %s" % (s, locate(s, conn, spec)))
