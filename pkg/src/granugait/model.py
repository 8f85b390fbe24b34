"""Robot geometry, terrain profiles, and the blended ground-reaction model.

Ground reaction on each contacting element is a depth-dependent linear
combination of two limiting force laws: dry Coulomb friction (rigid flat
ground) and anisotropic velocity-proportional drag standing in for granular
resistive forces (deep media).  Drag anisotropy (perpendicular > parallel)
is what lets an undulating body generate net thrust in the granular limit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .gait import LegId

GRAVITY = 9.81  # m/s^2

#: Deepest bead depth tested; the blend reaches the pure-drag limit here.
MAX_DEPTH_MM = 40.0


@dataclass(frozen=True)
class LegAttachment:
    segment: int        # segment index carrying the shoulder
    along: float        # m from the segment's head-end, toward the tail
    lateral: float      # m, positive = robot's left


def _default_leg_attachments():
    # Fore shoulders on segment 1, hind on segment 3 (head = segment 0,
    # tail = segment 3).  Offsets place the fore feet near the middle of
    # segment 1 and the hind feet at the tail joint, which spreads the
    # flat-ground reaction moments evenly over the three body joints.
    return {
        LegId.LF: LegAttachment(1, 0.09, 0.02),
        LegId.RF: LegAttachment(1, 0.09, -0.02),
        LegId.LH: LegAttachment(3, 0.0, 0.02),
        LegId.RH: LegAttachment(3, 0.0, -0.02),
    }


@dataclass(frozen=True)
class RobotModel:
    """Planar four-segment body with shoulder-mounted point feet."""

    n_segments: int = 4
    segment_length: float = 0.1125   # m; body length BL = 0.45 m
    mass: float = 0.6                # kg
    friction: float = 0.3            # Coulomb coefficient
    belly_elements_per_segment: int = 8
    belly_weight_frac: float = 0.15  # weight share on the belly on rigid ground
    foot_gm_weight_frac: float = 0.06  # weight left to the feet when immersed
    leg_attach: dict = field(default_factory=_default_leg_attachments)

    def __post_init__(self):
        if self.n_segments != 4:
            raise ValueError("the body model is fixed at four segments")
        if self.mass <= 0 or self.friction <= 0:
            raise ValueError("mass and friction must be positive")
        if self.belly_elements_per_segment < 2:
            raise ValueError("need at least two belly elements per segment")
        if not 0 <= self.belly_weight_frac < 1:
            raise ValueError("belly_weight_frac must lie in [0, 1)")
        if not 0 <= self.foot_gm_weight_frac < 1 - self.belly_weight_frac:
            raise ValueError(
                "foot_gm_weight_frac must lie in [0, 1 - belly_weight_frac)")
        for leg, att in self.leg_attach.items():
            if att.segment not in range(self.n_segments):
                raise ValueError(f"leg {leg} attached to invalid segment {att.segment}")

    @property
    def body_length(self):
        return self.n_segments * self.segment_length

    @property
    def weight(self):
        return self.mass * GRAVITY

    def mirrored(self):
        """Same robot with left/right leg geometry swapped."""
        attach = {
            leg: LegAttachment(a.segment, a.along, -a.lateral)
            for leg, a in self.leg_attach.items()
        }
        return RobotModel(
            self.n_segments, self.segment_length, self.mass, self.friction,
            self.belly_elements_per_segment, self.belly_weight_frac,
            self.foot_gm_weight_frac, attach,
        )


@dataclass(frozen=True)
class GroundModel:
    """Coefficients of the blended reaction-force law.

    ``rft_par``/``rft_perp`` are per-element drag coefficients (N*s/m) along
    and across an element's long axis; anisotropy requires perp > par > 0.
    ``slip_eps`` regularizes the Coulomb direction at zero slip.
    """

    rft_par: float = 1.5
    rft_perp: float = 3.75
    slip_eps: float = 1e-4

    def __post_init__(self):
        if not 0 < self.rft_par < self.rft_perp:
            raise ValueError("drag anisotropy requires rft_perp > rft_par > 0")
        if self.slip_eps <= 0:
            raise ValueError("slip_eps must be positive")


def blend_ratio(d):
    """Granular-drag fraction of the force blend at bead depth ``d`` (mm).

    0 at flat ground (pure Coulomb), 1 at 40 mm and beyond (pure drag).
    """
    if d < 0:
        raise ValueError(f"depth must be nonnegative, got {d}")
    return min(d / MAX_DEPTH_MM, 1.0)


def element_reaction_force(v, heading, normal_load, gm, mu, rho):
    """Reaction force (N, planar) on one element moving at velocity ``v``.

    Blend of regularized Coulomb friction (weight ``1 - rho``) and
    anisotropic linear drag (weight ``rho``) resolved along/across the
    element's long-axis ``heading``.  Always dissipative: F . v <= 0.
    """
    v = np.asarray(v, dtype=float)
    if normal_load < 0:
        raise ValueError("normal load must be nonnegative")
    speed = math.hypot(v[0], v[1])
    f_coulomb = -mu * normal_load * v / (speed + gm.slip_eps)
    axis = np.array([math.cos(heading), math.sin(heading)])
    v_par = float(v @ axis)
    v_perp = v - v_par * axis
    f_rft = -gm.rft_par * v_par * axis - gm.rft_perp * v_perp
    return (1.0 - rho) * f_coulomb + rho * f_rft


class TerrainProfile:
    """Bead depth (mm) as a function of arena x (m)."""

    def __init__(self, depth_fn, label):
        self._depth_fn = depth_fn
        self.label = label

    def depth_at(self, x):
        d = self._depth_fn(np.asarray(x, dtype=float))
        return np.clip(d, 0.0, MAX_DEPTH_MM)

    @staticmethod
    def flat():
        return TerrainProfile(lambda x: np.zeros_like(x), "flat")

    @staticmethod
    def constant(depth_mm):
        if not 0 <= depth_mm <= MAX_DEPTH_MM:
            raise ValueError(f"constant depth {depth_mm} mm outside [0, 40]")
        return TerrainProfile(
            lambda x: np.full_like(x, float(depth_mm)), f"constant-{depth_mm}mm"
        )

    @staticmethod
    def ramp(x_start, ramp_length, depth_mm=MAX_DEPTH_MM):
        """Flat, then a linear rise to ``depth_mm`` over ``ramp_length`` m."""
        if ramp_length <= 0:
            raise ValueError("ramp_length must be positive")

        def fn(x):
            return np.clip((x - x_start) / ramp_length, 0.0, 1.0) * depth_mm

        return TerrainProfile(fn, f"ramp-{x_start}m-{ramp_length}m-{depth_mm}mm")


@dataclass
class BodyState:
    """Planar pose of the head tip plus the internal joint configuration."""

    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0
    joint_angles: np.ndarray = field(default_factory=lambda: np.zeros(3))
    time: float = 0.0

    def pose(self):
        return np.array([self.x, self.y, self.theta])
