"""Skeleton topology and the default 25-joint humanoid used throughout."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Feature extraction is dimensioned for a 25-joint skeleton (24 bones).
FEATURE_JOINTS = 25
NUM_BONES = FEATURE_JOINTS - 1


@dataclass
class Skeleton:
    """Joint hierarchy in topological order (parent before child)."""

    names: list[str]
    parents: list[int | None]
    offsets: np.ndarray  # (J, 3) rest offsets from parent, meters
    end_effectors: tuple[int, int, int, int] = (0, 0, 0, 0)  # lhand, rhand, lfoot, rfoot
    feet: tuple[int, int] = (0, 0)  # lfoot, rfoot

    def __post_init__(self):
        self.offsets = np.asarray(self.offsets, dtype=np.float64)
        if len(self.names) != len(self.parents) or len(self.names) != len(self.offsets):
            raise ValueError("names, parents and offsets must have equal length")
        if self.parents[0] is not None:
            raise ValueError("joint 0 must be the root (parent None)")
        for j, p in enumerate(self.parents[1:], start=1):
            if p is None or p >= j:
                raise ValueError(f"joint {j} violates topological order (parent {p})")
        n = len(self.names)
        for idx in (*self.end_effectors, *self.feet):
            if not 0 <= idx < n:
                raise ValueError(f"end-effector/foot index {idx} out of range")

    @property
    def num_joints(self) -> int:
        return len(self.names)

    @property
    def bones(self) -> list[tuple[int, int]]:
        """(child, parent) pairs, one per tree edge."""
        return [(j, p) for j, p in enumerate(self.parents) if p is not None]

    def index(self, name: str) -> int:
        return self.names.index(name)

    def mirror_map(self) -> list[int]:
        """Per-joint index of the left/right mirror partner (self for spine joints).

        Raises if any joint with a Left/Right name prefix lacks a partner, or an
        unprefixed joint is ambiguous.
        """
        mapping = [-1] * self.num_joints
        unmatched = []
        for j, name in enumerate(self.names):
            partner = _mirror_name(name)
            if partner is None:
                mapping[j] = j
            elif partner in self.names:
                mapping[j] = self.names.index(partner)
            else:
                unmatched.append(name)
        if unmatched:
            raise ValueError(f"joints without a mirror partner: {unmatched}")
        return mapping


_PREFIX_PAIRS = [("Left", "Right"), ("left", "right"), ("L_", "R_"), ("l_", "r_")]


def _mirror_name(name: str) -> str | None:
    for a, b in _PREFIX_PAIRS:
        if name.startswith(a):
            return b + name[len(a):]
        if name.startswith(b):
            return a + name[len(b):]
    return None


def default_skeleton(hip_height: float = 0.95) -> Skeleton:
    """The synthetic 25-joint humanoid used by the procedural gait generator."""
    j = []  # (name, parent name or None, offset)
    j.append(("Hips", None, (0.0, hip_height, 0.0)))
    j.append(("Spine", "Hips", (0.0, 0.12, 0.0)))
    j.append(("Spine1", "Spine", (0.0, 0.12, 0.0)))
    j.append(("Spine2", "Spine1", (0.0, 0.12, 0.0)))
    j.append(("Spine3", "Spine2", (0.0, 0.12, 0.0)))
    j.append(("Neck", "Spine3", (0.0, 0.10, 0.0)))
    j.append(("Head", "Neck", (0.0, 0.12, 0.0)))
    for side, sx in (("Left", 1.0), ("Right", -1.0)):
        j.append((f"{side}Shoulder", "Spine3", (sx * 0.08, 0.05, 0.0)))
        j.append((f"{side}Arm", f"{side}Shoulder", (sx * 0.12, 0.0, 0.0)))
        j.append((f"{side}ForeArm", f"{side}Arm", (sx * 0.28, 0.0, 0.0)))
        j.append((f"{side}Hand", f"{side}ForeArm", (sx * 0.26, 0.0, 0.0)))
    for side, sx in (("Left", 1.0), ("Right", -1.0)):
        j.append((f"{side}UpLeg", "Hips", (sx * 0.10, -0.06, 0.0)))
        j.append((f"{side}Leg", f"{side}UpLeg", (0.0, -0.44, 0.0)))
        j.append((f"{side}Foot", f"{side}Leg", (0.0, -0.44, 0.0)))
        j.append((f"{side}Toe", f"{side}Foot", (0.0, -0.005, 0.12)))
        j.append((f"{side}ToeEnd", f"{side}Toe", (0.0, 0.0, 0.06)))
    names = [n for n, _, _ in j]
    parents = [None if p is None else names.index(p) for _, p, _ in j]
    offsets = np.array([o for _, _, o in j], dtype=np.float64)
    skel = Skeleton(
        names=names,
        parents=parents,
        offsets=offsets,
        end_effectors=(
            names.index("LeftHand"),
            names.index("RightHand"),
            names.index("LeftFoot"),
            names.index("RightFoot"),
        ),
        feet=(names.index("LeftFoot"), names.index("RightFoot")),
    )
    assert skel.num_joints == FEATURE_JOINTS
    return skel
