#!/usr/bin/env python3
"""The shared timetable in action: assignment, clash, and be-clashed.

Two vehicles on crossing routes demand the same slots at a shared conflict
point. Watch the holder keep its standing (and freeze its speed) while the
newcomer is marked as the clasher.
"""

from harlsim.geometry import IntersectionSpec, build_intersection
from harlsim.reservation import ReservationScheduler, VehicleView

inter = build_intersection(IntersectionSpec())
sched = ReservationScheduler(inter)

point = next(p for p in inter.conflict_points if len(p.involved_connections) >= 2)
ca, cb = sorted(point.involved_connections)[:2]
da = point.distance_along[ca]
db = point.distance_along[cb]
print("Conflict point q%d at (%.2f, %.2f), shared by connections %d and %d" % (
    point.id, *point.position, ca, cb))

print("\nStep 1: vehicle A alone requests and is assigned.")
views = [VehicleView(1, ca, da - 40.0, 10.0, 5.0)]
statuses = sched.reassignment_pass(views)
print("  A:", statuses[1].status)
print("  occupied cells:", len(sched.table.occupied_triples()))

print("\nStep 2: vehicle B arrives wanting the same window.")
views = [
    VehicleView(1, ca, da - 40.0, 10.0, 5.0),
    VehicleView(2, cb, db - 40.0, 10.0, 5.0),
]
statuses = sched.reassignment_pass(views)
for vid in (1, 2):
    st = statuses[vid]
    print("  vehicle %d: %-14s kept_prior=%-5s conflicted=%s" % (
        vid, st.status, st.kept_prior, st.conflicted))
print("  conflict set:", sorted(sched.lc))

print("\nTimetable snapshot (point, bin, claimant):")
for row in sched.table.occupied_triples()[:12]:
    print("  q%02d bin %3d -> vehicle %d" % row)
print("  ... (%d cells total)" % len(sched.table.occupied_triples()))

print("\nStep 3: B slows down 0.8 s worth; its demand shifts clear of A's.")
views[1] = VehicleView(2, cb, db - 48.0, 10.0, 5.0)
statuses = sched.reassignment_pass(views)
for vid in (1, 2):
    print("  vehicle %d: %s" % (vid, statuses[vid].status))
