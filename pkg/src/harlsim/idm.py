"""Car-following acceleration for human-driven vehicles.

Two forms are available. The default "literal" form is linear in both the
speed ratio and the gap ratio:

    a = a_max * (1 - v/v0 - s_star/s)
    s_star = s0 + v*T + v*dv / (2*sqrt(a_max*b))

with dv the approach rate (ego speed minus leader speed). The "standard" form
is the canonical model with exponent 4 on the speed ratio, a squared gap term,
and a non-negative dynamic headway. Both use follower-speed variable roles.
Without a leader the gap term vanishes. The result is clamped to the vehicle
acceleration envelope [-5, 2.5] m/s^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

ACCEL_MAX = 2.5  # m/s^2
DECEL_MAX = -5.0  # m/s^2

FORM_LITERAL = "literal"
FORM_STANDARD = "standard"


@dataclass(frozen=True)
class IdmParams:
    a_max: float = 2.5  # maximum acceleration, m/s^2
    b: float = 2.5  # comfortable deceleration, m/s^2
    v0: float = 15.0  # desired speed, m/s
    s0: float = 2.0  # jam gap, m
    T: float = 1.5  # time headway, s
    form: str = FORM_LITERAL

    def validate(self) -> None:
        for name in ("a_max", "b", "v0", "s0", "T"):
            if not (getattr(self, name) > 0.0):
                raise ValueError("IdmParams.%s must be positive" % name)
        if self.form not in (FORM_LITERAL, FORM_STANDARD):
            raise ValueError("unknown IDM form %r" % (self.form,))


def desired_gap(v: float, dv: float, p: IdmParams) -> float:
    """Dynamic desired gap s_star for follower speed v and approach rate dv."""
    dyn = v * p.T + v * dv / (2.0 * math.sqrt(p.a_max * p.b))
    if p.form == FORM_STANDARD:
        dyn = max(0.0, dyn)
    return p.s0 + dyn


def idm_accel(v: float, gap: Optional[float], lead_v: Optional[float], p: IdmParams) -> float:
    """Acceleration of a follower at speed v with optional leader.

    gap is the bumper-to-bumper distance to the leader; a non-positive gap
    with a leader present returns the emergency clamp.
    """
    if gap is not None:
        if gap <= 0.0:
            return DECEL_MAX
        dv = v - (lead_v if lead_v is not None else 0.0)
        s_star = desired_gap(v, dv, p)
        if p.form == FORM_STANDARD:
            interaction = (s_star / gap) ** 2
        else:
            interaction = s_star / gap
    else:
        interaction = 0.0

    if p.form == FORM_STANDARD:
        free = (v / p.v0) ** 4
    else:
        free = v / p.v0

    a = p.a_max * (1.0 - free - interaction)
    return min(max(a, DECEL_MAX), ACCEL_MAX)
