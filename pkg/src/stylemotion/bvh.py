"""BVH reader: hierarchy parsing, forward kinematics, 60 fps resampling."""
from __future__ import annotations

import logging
import re

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from .clip import MotionClip
from .skeleton import Skeleton

log = logging.getLogger(__name__)

TARGET_FPS = 60.0

_POS_CHANNELS = {"Xposition": 0, "Yposition": 1, "Zposition": 2}
_ROT_CHANNELS = {"Xrotation": "X", "Yrotation": "Y", "Zrotation": "Z"}


class BVHParseError(ValueError):
    def __init__(self, message: str, lineno: int | None = None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class _Tokens:
    def __init__(self, text: str):
        self.items: list[tuple[str, int]] = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            for tok in line.split():
                self.items.append((tok, lineno))
        self.pos = 0

    def peek(self) -> str:
        if self.pos >= len(self.items):
            raise BVHParseError("unexpected end of file")
        return self.items[self.pos][0]

    def next(self) -> str:
        tok = self.peek()
        self.pos += 1
        return tok

    @property
    def lineno(self) -> int:
        idx = min(self.pos, len(self.items) - 1)
        return self.items[idx][1]

    def expect(self, value: str) -> None:
        tok = self.next()
        if tok != value:
            raise BVHParseError(f"expected {value!r}, got {tok!r}", self.lineno)


def parse_bvh(
    text: str,
    style_label: str = "",
    gait_label: str = "FW",
    scale: float = 1.0,
    resample: bool = True,
) -> MotionClip:
    """Parse a BVH document and run forward kinematics.

    Rotation channels may appear in any of the six Euler orders. Translation
    channels are honoured on the root only. Clips whose frame time is more
    than 10% away from 1/60 s are resampled to 60 fps (linear positions,
    slerp rotations) unless ``resample`` is false.
    """
    toks = _Tokens(text)
    toks.expect("HIERARCHY")

    names: list[str] = []
    parents: list[int | None] = []
    offsets: list[np.ndarray] = []
    channels: list[list[str]] = []  # per joint

    def parse_joint(parent: int | None) -> None:
        kind = toks.next()
        if kind not in ("ROOT", "JOINT"):
            raise BVHParseError(f"expected ROOT or JOINT, got {kind!r}", toks.lineno)
        name = toks.next()
        index = len(names)
        names.append(name)
        parents.append(parent)
        toks.expect("{")
        toks.expect("OFFSET")
        offsets.append(np.array([float(toks.next()) for _ in range(3)]) * scale)
        chans: list[str] = []
        if toks.peek() == "CHANNELS":
            toks.next()
            n = int(toks.next())
            for _ in range(n):
                ch = toks.next()
                if ch not in _POS_CHANNELS and ch not in _ROT_CHANNELS:
                    raise BVHParseError(f"unknown channel {ch!r}", toks.lineno)
                chans.append(ch)
        channels.append(chans)
        while True:
            tok = toks.peek()
            if tok == "JOINT":
                parse_joint(index)
            elif tok == "End":
                toks.next()
                site = toks.next()  # "Site"
                if site != "Site":
                    raise BVHParseError("malformed End Site", toks.lineno)
                toks.expect("{")
                toks.expect("OFFSET")
                end_off = np.array([float(toks.next()) for _ in range(3)]) * scale
                toks.expect("}")
                names.append(name + "_End")
                parents.append(index)
                offsets.append(end_off)
                channels.append([])
            elif tok == "}":
                toks.next()
                return
            else:
                raise BVHParseError(f"unexpected token {tok!r} in hierarchy", toks.lineno)

    parse_joint(None)
    toks.expect("MOTION")
    tok = toks.next()
    if tok != "Frames:":
        raise BVHParseError(f"expected 'Frames:', got {tok!r}", toks.lineno)
    num_frames = int(toks.next())
    tok = toks.next() + " " + toks.next()  # "Frame Time:"
    if tok != "Frame Time:":
        raise BVHParseError(f"expected 'Frame Time:', got {tok!r}", toks.lineno)
    frame_time = float(toks.next())

    per_frame = sum(len(c) for c in channels)
    values = []
    while toks.pos < len(toks.items):
        values.append(float(toks.next()))
    if len(values) != num_frames * per_frame:
        raise BVHParseError(
            f"frame data length mismatch: {len(values)} values for "
            f"{num_frames} frames x {per_frame} channels"
        )
    data = np.array(values, dtype=np.float64).reshape(num_frames, per_frame)

    num_joints = len(names)
    skel = Skeleton(names, parents, np.array(offsets))

    # Split channel columns per joint and warn on non-root translations.
    col = 0
    joint_cols: list[tuple[list[str], int]] = []
    for j, chans in enumerate(channels):
        joint_cols.append((chans, col))
        if j != 0 and any(c in _POS_CHANNELS for c in chans):
            log.warning("ignoring translation channels on non-root joint %s", names[j])
        col += len(chans)

    # Local transforms.
    local_rot = np.tile(np.array([0.0, 0.0, 0.0, 1.0]), (num_frames, num_joints, 1))
    root_trans = np.zeros((num_frames, 3))
    for j in range(num_joints):
        chans, c0 = joint_cols[j]
        order = "".join(_ROT_CHANNELS[c] for c in chans if c in _ROT_CHANNELS)
        if order:
            rot_cols = [c0 + k for k, c in enumerate(chans) if c in _ROT_CHANNELS]
            euler = data[:, rot_cols]
            local_rot[:, j] = Rotation.from_euler(order, euler, degrees=True).as_quat()
        if j == 0:
            for k, c in enumerate(chans):
                if c in _POS_CHANNELS:
                    root_trans[:, _POS_CHANNELS[c]] = data[:, c0 + k] * scale

    positions, rotations = _forward_kinematics(skel, local_rot, root_trans)
    fps = 1.0 / frame_time
    if resample and abs(frame_time - 1.0 / TARGET_FPS) > 0.1 / TARGET_FPS:
        positions, rotations = _resample(positions, rotations, fps, TARGET_FPS)
        fps = TARGET_FPS
    return MotionClip(skel, fps, positions, rotations, style_label, gait_label)


def _forward_kinematics(skel: Skeleton, local_rot: np.ndarray, root_trans: np.ndarray):
    """World positions and rotations from per-joint local rotations.

    local_rot: (N, J, 4) xyzw; root_trans: (N, 3). Offsets come from the skeleton.
    """
    n, j = local_rot.shape[:2]
    positions = np.zeros((n, j, 3))
    rotations = np.zeros((n, j, 4))
    world_r: list[Rotation] = [None] * j  # type: ignore[list-item]
    for idx in range(j):
        r_local = Rotation.from_quat(local_rot[:, idx])
        parent = skel.parents[idx]
        if parent is None:
            world_r[idx] = r_local
            positions[:, idx] = skel.offsets[idx] + root_trans
        else:
            world_r[idx] = world_r[parent] * r_local
            positions[:, idx] = positions[:, parent] + world_r[parent].apply(
                skel.offsets[idx]
            )
        rotations[:, idx] = world_r[idx].as_quat()
    return positions, rotations


def _resample(positions, rotations, src_fps: float, dst_fps: float):
    n, j = positions.shape[:2]
    duration = (n - 1) / src_fps
    new_n = int(np.floor(duration * dst_fps)) + 1
    t_src = np.arange(n) / src_fps
    t_dst = np.arange(new_n) / dst_fps
    new_pos = np.empty((new_n, j, 3))
    new_rot = np.empty((new_n, j, 4))
    for idx in range(j):
        for axis in range(3):
            new_pos[:, idx, axis] = np.interp(t_dst, t_src, positions[:, idx, axis])
        slerp = Slerp(t_src, Rotation.from_quat(rotations[:, idx]))
        new_rot[:, idx] = slerp(np.clip(t_dst, t_src[0], t_src[-1])).as_quat()
    return new_pos, new_rot
