"""Step-indexed cyclical learning-rate and momentum schedules.

Everything here is a pure function of the optimizer update index. The
trainer asks "what learning rate / momentum applies to update k?" and
never stores schedule state, so a run can be replayed or audited from
the update index alone.
"""
from __future__ import annotations

from dataclasses import dataclass

CONSTANT = "constant"
TRIANGULAR = "triangular"
EXP_RANGE = "exp_range"
KINDS = (CONSTANT, TRIANGULAR, EXP_RANGE)


@dataclass(frozen=True)
class SchedulePolicy:
    """A learning-rate policy: a fixed value or a cyclical triangle wave.

    For the cyclical kinds the rate ramps linearly from ``eta_min_0`` up
    to ``eta_max_0`` over ``stepsize`` updates and back down over another
    ``stepsize`` updates. ``exp_range`` additionally shrinks both bounds
    by a factor ``decay`` at every cycle boundary; ``triangular`` keeps
    them fixed. ``eta_fixed`` is only consulted when ``kind`` is
    ``constant``, and the bounds only when it is not.
    """

    kind: str
    eta_fixed: float = 0.0
    eta_min_0: float = 0.0
    eta_max_0: float = 0.0
    stepsize: int = 1
    decay: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}, expected one of {KINDS}")
        if self.kind == CONSTANT:
            if not self.eta_fixed > 0.0:
                raise ValueError("constant schedule needs eta_fixed > 0")
            return
        if not 0.0 < self.eta_min_0 <= self.eta_max_0:
            raise ValueError("need 0 < eta_min_0 <= eta_max_0")
        if self.stepsize < 1:
            raise ValueError("stepsize must be >= 1")
        if not 0.0 < self.decay <= 1.0:
            raise ValueError("decay must lie in (0, 1]")

    @classmethod
    def constant(cls, eta: float) -> "SchedulePolicy":
        return cls(kind=CONSTANT, eta_fixed=eta)

    @classmethod
    def triangular(cls, eta_min: float, eta_max: float, stepsize: int) -> "SchedulePolicy":
        return cls(kind=TRIANGULAR, eta_min_0=eta_min, eta_max_0=eta_max, stepsize=stepsize)

    @classmethod
    def exp_range(cls, eta_min: float, eta_max: float, stepsize: int,
                  decay: float) -> "SchedulePolicy":
        return cls(kind=EXP_RANGE, eta_min_0=eta_min, eta_max_0=eta_max,
                   stepsize=stepsize, decay=decay)


@dataclass(frozen=True)
class MomentumCycle:
    """Counter-cycled optimizer momentum: high when the LR is low and vice versa."""

    enabled: bool = True
    m_min: float = 0.8
    m_max: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.m_min <= self.m_max <= 1.0:
            raise ValueError("need 0 <= m_min <= m_max <= 1")

    @classmethod
    def disabled(cls) -> "MomentumCycle":
        return cls(enabled=False)


def cycle_index(step: int, stepsize: int) -> int:
    """Index of the cycle containing update ``step``.

    One cycle is an up-leg plus a down-leg, i.e. ``2 * stepsize`` updates.
    """
    if stepsize < 1:
        raise ValueError("stepsize must be >= 1")
    if step < 0:
        raise ValueError("step must be non-negative")
    return step // (2 * stepsize)


def bounds_at_cycle(policy: SchedulePolicy, k_cycle: int) -> tuple[float, float]:
    """LR bounds (eta_min, eta_max) in effect during cycle ``k_cycle``.

    Bounds are constant within a cycle. For ``exp_range`` the decayed
    envelope is built by repeated multiplication, so each cycle's bounds
    equal exactly the previous cycle's bounds times ``decay``.
    """
    if policy.kind == CONSTANT:
        raise ValueError("constant schedule has no cycle bounds")
    if k_cycle < 0:
        raise ValueError("k_cycle must be non-negative")
    lo, hi = policy.eta_min_0, policy.eta_max_0
    if policy.kind == EXP_RANGE:
        for _ in range(k_cycle):
            lo *= policy.decay
            hi *= policy.decay
    return lo, hi


def lr_at(policy: SchedulePolicy, step: int) -> float:
    """Learning rate for optimizer update ``step``.

    Cyclical kinds trace a triangle wave: the phase ``p = (step mod 2s)/s``
    maps to ``eta_min + (eta_max - eta_min) * p`` on the up-leg (p <= 1)
    and to the mirrored value on the down-leg. The result is clamped to
    the current cycle's bounds so the containment invariant holds exactly
    even at the last-ulp edges of the interpolation.
    """
    if step < 0:
        raise ValueError("step must be non-negative")
    if policy.kind == CONSTANT:
        return policy.eta_fixed
    lo, hi = bounds_at_cycle(policy, cycle_index(step, policy.stepsize))
    p = (step % (2 * policy.stepsize)) / policy.stepsize
    frac = p if p <= 1.0 else 2.0 - p
    lr = lo + (hi - lo) * frac
    return min(max(lr, lo), hi)


def momentum_at(policy: SchedulePolicy, cycle: MomentumCycle, step: int) -> float:
    """Optimizer momentum for update ``step``, cycled against the LR.

    Linear in the learning rate: exactly ``m_max`` when the LR sits at the
    cycle's minimum bound and exactly ``m_min`` at the maximum bound. A
    disabled cycle pins the momentum at ``m_max``.
    """
    if not cycle.enabled:
        return cycle.m_max
    if policy.kind == CONSTANT:
        raise ValueError("momentum cycling needs a cyclical schedule")
    lo, hi = bounds_at_cycle(policy, cycle_index(step, policy.stepsize))
    if hi == lo:
        raise ValueError("degenerate bounds: eta_max equals eta_min")
    frac = (lr_at(policy, step) - lo) / (hi - lo)
    return cycle.m_max - (cycle.m_max - cycle.m_min) * frac
