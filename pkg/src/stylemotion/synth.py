"""Deterministic procedural gait clips with exact ground-truth labels.

Feet follow a plant/swing schedule with known contact frames, hands swing on
shoulder arcs at specified frequencies, the root advances at constant speed.
Used as the desk-scale data source and as the oracle for the phase pipeline.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .clip import MotionClip
from .skeleton import Skeleton, default_skeleton


@dataclass
class StyleRecipe:
    name: str = "synthetic"
    gait: str = "FW"
    forward_speed: float = 0.0  # m/s
    foot_frequency: float = 1.0  # Hz, per-foot step cycle
    duty_cycle: float = 0.6  # fraction of the cycle in ground contact
    step_height: float = 0.05  # m
    hand_frequency: float = 1.0  # Hz
    hand_amplitude: float = 0.4  # rad swing about the shoulder
    left_hand_phase: float = 0.0  # rad
    right_hand_phase: float = np.pi
    arm_lift: float = 0.35  # rad, base angle of the hanging arm toward forward
    torso_lean: float = 0.0  # rad about x, positive leans forward


@dataclass
class GaitTruth:
    contacts: np.ndarray  # (N, 2) bool, left/right foot
    phases: dict[str, np.ndarray] = field(default_factory=dict)  # radians per frame
    frequencies: dict[str, float] = field(default_factory=dict)  # Hz


PLANT_Y = 0.005  # resting foot height, inside the contact ball radius


def _smoothstep(q):
    return q * q * (3.0 - 2.0 * q)


def synth_gait(
    recipe: StyleRecipe, n_frames: int, fps: float = 60.0
) -> tuple[MotionClip, GaitTruth]:
    if recipe.foot_frequency <= 0 or recipe.hand_frequency <= 0:
        raise ValueError("oscillation frequencies must be positive")
    if not 0.0 < recipe.duty_cycle < 1.0:
        raise ValueError("duty cycle must lie in (0, 1)")

    skel = default_skeleton()
    t = np.arange(n_frames) / fps
    pos = np.zeros((n_frames, skel.num_joints, 3))
    rot = np.zeros((n_frames, skel.num_joints, 4))
    rot[..., 3] = 1.0

    hip_y = 0.95
    root = np.zeros((n_frames, 3))
    root[:, 1] = hip_y
    root[:, 2] = recipe.forward_speed * t
    pos[:, skel.index("Hips")] = root

    # Spine chain, leaned about x at the hips.
    cl, sl = np.cos(recipe.torso_lean), np.sin(recipe.torso_lean)
    lean_q = np.array([np.sin(recipe.torso_lean / 2), 0.0, 0.0, np.cos(recipe.torso_lean / 2)])
    spine = ["Spine", "Spine1", "Spine2", "Spine3", "Neck", "Head"]
    acc = np.zeros(3)
    for name in spine:
        j = skel.index(name)
        acc = acc + skel.offsets[j]
        leaned = np.array([acc[0], cl * acc[1] - sl * acc[2], sl * acc[1] + cl * acc[2]])
        pos[:, j] = root + leaned
        rot[:, j] = lean_q

    truth = GaitTruth(contacts=np.zeros((n_frames, 2), dtype=bool))

    # Arms: shoulder-anchored pendulum in the sagittal plane.
    chest = pos[:, skel.index("Spine3")]
    for side, sign, phase0 in (
        ("Left", 1.0, recipe.left_hand_phase),
        ("Right", -1.0, recipe.right_hand_phase),
    ):
        sh = skel.index(f"{side}Shoulder")
        pos[:, sh] = chest + np.array([sign * 0.08, 0.05, 0.0])
        arm = skel.index(f"{side}Arm")
        pos[:, arm] = pos[:, sh] + np.array([sign * 0.12, 0.0, 0.0])
        theta = recipe.arm_lift + recipe.hand_amplitude * np.sin(
            2.0 * np.pi * recipe.hand_frequency * t + phase0
        )
        d = np.stack([np.zeros_like(theta), -np.cos(theta), np.sin(theta)], axis=1)
        pos[:, skel.index(f"{side}ForeArm")] = pos[:, arm] + 0.28 * d
        hand = skel.index(f"{side}Hand")
        pos[:, hand] = pos[:, arm] + 0.54 * d
        truth.phases[f"{side}Hand"] = np.mod(
            2.0 * np.pi * recipe.hand_frequency * t + phase0, 2.0 * np.pi
        )
        truth.frequencies[f"{side}Hand"] = recipe.hand_frequency

    # Legs: plant/swing schedule with exactly known contact frames.
    f = recipe.foot_frequency
    stride = recipe.forward_speed / f  # advance per cycle
    stepping = recipe.step_height > 0 or recipe.forward_speed > 0
    for side, sign, cycle_off in (("Left", 1.0, 0.0), ("Right", -1.0, 0.5)):
        hip = skel.index(f"{side}UpLeg")
        pos[:, hip] = root + np.array([sign * 0.10, -0.06, 0.0])
        u_all = f * t + cycle_off
        cyc = np.floor(u_all + 1e-9)
        u = u_all - cyc
        if stepping:
            # Epsilon keeps exact cycle-boundary frames on the swing side.
            in_contact = u < recipe.duty_cycle - 1e-9
        else:
            in_contact = np.ones(n_frames, dtype=bool)
        plant_z = cyc * stride - 0.5 * recipe.duty_cycle * stride
        next_plant_z = plant_z + stride
        q = np.clip((u - recipe.duty_cycle) / (1.0 - recipe.duty_cycle), 0.0, 1.0)
        foot_z = np.where(
            in_contact, plant_z, plant_z + _smoothstep(q) * (next_plant_z - plant_z)
        )
        foot_y = np.where(
            in_contact, PLANT_Y, PLANT_Y + recipe.step_height * np.sin(np.pi * q)
        )
        ankle = np.stack([np.full(n_frames, sign * 0.10), foot_y, foot_z], axis=1)
        foot = skel.index(f"{side}Foot")
        pos[:, foot] = ankle
        knee = 0.5 * (pos[:, hip] + ankle)
        knee[:, 2] += 0.04  # slight forward bend, keeps the knee plane defined
        pos[:, skel.index(f"{side}Leg")] = knee
        toe = skel.index(f"{side}Toe")
        pos[:, toe] = ankle + np.array([0.0, 0.0, 0.12])
        pos[:, skel.index(f"{side}ToeEnd")] = ankle + np.array([0.0, 0.0, 0.18])
        col = 0 if side == "Left" else 1
        truth.contacts[:, col] = in_contact
        truth.phases[f"{side}Foot"] = np.mod(2.0 * np.pi * u_all, 2.0 * np.pi)
        truth.frequencies[f"{side}Foot"] = f

    clip = MotionClip(
        skeleton=skel,
        fps=fps,
        positions=pos,
        rotations=rot,
        style_label=recipe.name,
        gait_label=recipe.gait,
    )
    return clip, truth
