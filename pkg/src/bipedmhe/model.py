"""Robot description for a planar floating-base biped.

The robot is a rigid torso (3 DOF: x, z, pitch) with point-foot legs
attached at configurable hip points.  Each leg is a serial chain of
revolute links in the sagittal plane.  Joint angles are measured from
the straight-down direction, positive counterclockwise, so a leg with
all joint angles zero hangs vertically below its hip.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

GRAVITY_DEFAULT = 9.81


class ModelError(ValueError):
    """Invalid robot description or inconsistent state dimensions."""


@dataclass(frozen=True)
class LinkParams:
    mass: float          # kg
    com_offset: float    # m, distance from parent joint to link COM
    inertia: float       # kg m^2 about the link COM
    length: float        # m, parent joint to child joint / foot


@dataclass(frozen=True)
class LegModel:
    name: str
    hip_offset: tuple[float, float]      # body frame, m
    links: tuple[LinkParams, ...]


@dataclass(frozen=True)
class RobotModel:
    base_mass: float
    base_inertia: float
    legs: tuple[LegModel, ...]
    gravity: float = GRAVITY_DEFAULT

    def __post_init__(self):
        if self.base_mass <= 0.0 or self.base_inertia <= 0.0:
            raise ModelError("base mass and inertia must be positive")
        for leg in self.legs:
            for link in leg.links:
                if link.mass <= 0.0 or link.inertia <= 0.0 or link.length <= 0.0:
                    raise ModelError(f"leg '{leg.name}': masses, inertias and "
                                     "lengths must be positive")
                if link.com_offset < 0.0 or link.com_offset > link.length:
                    raise ModelError(f"leg '{leg.name}': COM offset outside link")
        names = [leg.name for leg in self.legs]
        if len(set(names)) != len(names):
            raise ModelError("duplicate leg names")

    @property
    def n_joints(self) -> int:
        return sum(len(leg.links) for leg in self.legs)

    @property
    def n_coords(self) -> int:
        """Generalized-coordinate dimension (3 base DOF + joints)."""
        return 3 + self.n_joints

    @property
    def foot_ids(self) -> tuple[str, ...]:
        return tuple(leg.name for leg in self.legs)

    @property
    def total_mass(self) -> float:
        return self.base_mass + sum(l.mass for leg in self.legs for l in leg.links)

    @property
    def actuation_map(self) -> np.ndarray:
        """Selection matrix mapping joint torques into generalized forces.

        Shape (3+n, n): zero rows for the unactuated base, one unit entry
        per joint column.
        """
        B = np.zeros((self.n_coords, self.n_joints))
        B[3:, :] = np.eye(self.n_joints)
        return B

    def leg(self, foot: str) -> LegModel:
        for leg in self.legs:
            if leg.name == foot:
                return leg
        raise KeyError(f"unknown foot id '{foot}' (have {list(self.foot_ids)})")

    def joint_slice(self, foot: str) -> slice:
        """Index range of this leg's joints within the joint vector."""
        start = 0
        for leg in self.legs:
            if leg.name == foot:
                return slice(start, start + len(leg.links))
            start += len(leg.links)
        raise KeyError(f"unknown foot id '{foot}'")

    def cache_key(self) -> tuple:
        return (self.base_mass, self.base_inertia, self.gravity,
                tuple((leg.name, leg.hip_offset,
                       tuple((l.mass, l.com_offset, l.inertia, l.length)
                             for l in leg.links))
                      for leg in self.legs))


@dataclass
class GeneralizedState:
    """q = [p_x, p_z, theta, alpha...], qdot = [v_x, v_z, omega, alphadot...]."""

    q: np.ndarray
    qdot: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        if self.qdot is None:
            self.qdot = np.zeros_like(self.q)
        self.qdot = np.asarray(self.qdot, dtype=float)
        if self.q.shape != self.qdot.shape or self.q.ndim != 1:
            raise ModelError("q and qdot must be 1-D and equal length")

    def check_model(self, model: RobotModel) -> None:
        if self.q.shape[0] != model.n_coords:
            raise ModelError(f"state dim {self.q.shape[0]} != model "
                             f"dim {model.n_coords}")

    @property
    def base_pos(self) -> np.ndarray:
        return self.q[0:2]

    @property
    def pitch(self) -> float:
        return float(self.q[2])

    @property
    def joint_angles(self) -> np.ndarray:
        return self.q[3:]

    @property
    def base_vel(self) -> np.ndarray:
        return self.qdot[0:2]

    @property
    def pitch_rate(self) -> float:
        return float(self.qdot[2])

    @property
    def joint_rates(self) -> np.ndarray:
        return self.qdot[3:]

    def copy(self) -> "GeneralizedState":
        return GeneralizedState(self.q.copy(), self.qdot.copy())


def rot2(angle: float) -> np.ndarray:
    """2-D rotation matrix (world from body for the base pitch)."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


def perp(v: np.ndarray) -> np.ndarray:
    """90-degree CCW rotation; planar cross product: w x v = w * perp(v)."""
    return np.array([-v[1], v[0]])


def default_model() -> RobotModel:
    """Reference planar biped: torso plus two 2-link (hip, knee) legs."""
    link_defaults = (
        LinkParams(mass=0.5, com_offset=0.11, inertia=0.003, length=0.22),
        LinkParams(mass=0.3, com_offset=0.10, inertia=0.002, length=0.22),
    )
    return RobotModel(
        base_mass=4.0,
        base_inertia=0.15,
        legs=(
            LegModel(name="left", hip_offset=(0.0, 0.0), links=link_defaults),
            LegModel(name="right", hip_offset=(0.0, 0.0), links=link_defaults),
        ),
    )


_BASE_KEYS = {"mass", "inertia", "gravity"}
_LEG_KEYS = {"hip_x", "hip_z", "link_masses", "link_com_offsets",
             "link_inertias", "link_lengths"}


def _floats(raw: str) -> list[float]:
    return [float(tok) for tok in raw.replace(",", " ").split()]


def load_robot_model(path: str | Path) -> RobotModel:
    """Parse a robot config file with [base] and [leg.<name>] sections."""
    parser = configparser.ConfigParser()
    read = parser.read(str(path))
    if not read:
        raise ModelError(f"cannot read model file '{path}'")
    if "base" not in parser:
        raise ModelError("model file missing [base] section")
    base = parser["base"]
    unknown = set(base) - _BASE_KEYS
    if unknown:
        raise ModelError(f"unknown keys in [base]: {sorted(unknown)}")

    legs = []
    for section in parser.sections():
        if section == "base":
            continue
        if not section.startswith("leg."):
            raise ModelError(f"unknown section [{section}]")
        sec = parser[section]
        unknown = set(sec) - _LEG_KEYS
        if unknown:
            raise ModelError(f"unknown keys in [{section}]: {sorted(unknown)}")
        masses = _floats(sec["link_masses"])
        coms = _floats(sec["link_com_offsets"])
        inertias = _floats(sec["link_inertias"])
        lengths = _floats(sec["link_lengths"])
        if not (len(masses) == len(coms) == len(inertias) == len(lengths)):
            raise ModelError(f"[{section}]: link lists have unequal lengths")
        links = tuple(LinkParams(m, c, i, l)
                      for m, c, i, l in zip(masses, coms, inertias, lengths))
        legs.append(LegModel(
            name=section[len("leg."):],
            hip_offset=(sec.getfloat("hip_x", 0.0), sec.getfloat("hip_z", 0.0)),
            links=links,
        ))
    if not legs:
        raise ModelError("model file defines no legs")
    return RobotModel(
        base_mass=base.getfloat("mass"),
        base_inertia=base.getfloat("inertia"),
        legs=tuple(legs),
        gravity=base.getfloat("gravity", GRAVITY_DEFAULT),
    )


def save_robot_model(model: RobotModel, path: str | Path) -> None:
    lines = ["[base]",
             f"mass = {model.base_mass!r}",
             f"inertia = {model.base_inertia!r}",
             f"gravity = {model.gravity!r}",
             ""]
    for leg in model.legs:
        lines.append(f"[leg.{leg.name}]")
        lines.append(f"hip_x = {leg.hip_offset[0]!r}")
        lines.append(f"hip_z = {leg.hip_offset[1]!r}")
        lines.append("link_masses = " + ", ".join(repr(l.mass) for l in leg.links))
        lines.append("link_com_offsets = " + ", ".join(repr(l.com_offset) for l in leg.links))
        lines.append("link_inertias = " + ", ".join(repr(l.inertia) for l in leg.links))
        lines.append("link_lengths = " + ", ".join(repr(l.length) for l in leg.links))
        lines.append("")
    Path(path).write_text("\n".join(lines))
