"""Character-space features and training-example assembly.

Every quantity fed to the networks lives in the character's local frame:
ground-projected root origin, heading-aligned (+z forward, y up). Input
frames are 348 values plus an 8-value phase vector, output frames 342
values, style clips 240x300.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clip import MotionClip
from .skeleton import FEATURE_JOINTS

# Input frame layout (348 + 8 phase channels).
TRAJ_SAMPLES_IN = list(range(-60, 51, 10))  # 12 samples, includes current frame
TRAJ_SAMPLES_OUT = list(range(10, 61, 10))  # 6 future samples, relative to i+1
X_DIM = 348
P_DIM = 8
Z_DIM = 342
CLIP_LEN = 240
CLIP_DIM = 300

_J = FEATURE_JOINTS
assert 2 * len(TRAJ_SAMPLES_IN) * 2 + 3 * _J + 3 * _J + 6 * _J == X_DIM
assert 2 * len(TRAJ_SAMPLES_OUT) * 2 + 12 * _J + 2 + 2 * P_DIM == Z_DIM
assert 12 * _J == CLIP_DIM

# Output frame slices.
Z_TRAJ_POS = slice(0, 12)
Z_TRAJ_DIR = slice(12, 24)
Z_JOINT_POS = slice(24, 99)
Z_JOINT_VEL = slice(99, 174)
Z_JOINT_ROT = slice(174, 324)
Z_CONTACTS = slice(324, 326)
Z_PHASE_NEXT = slice(326, 334)
Z_PHASE_UPDATE = slice(334, 342)

# Input frame slices.
X_TRAJ_POS = slice(0, 24)
X_TRAJ_DIR = slice(24, 48)
X_JOINT_POS = slice(48, 123)
X_JOINT_VEL = slice(123, 198)
X_JOINT_ROT = slice(198, 348)


class FeatureError(ValueError):
    pass


def _rotate_y(vectors: np.ndarray, angle) -> np.ndarray:
    """Rotate 3-vectors about +y by ``angle`` (radians). Broadcasts over angle."""
    c, s = np.cos(angle), np.sin(angle)
    x, y, z = vectors[..., 0], vectors[..., 1], vectors[..., 2]
    return np.stack([c * x + s * z, y, -s * x + c * z], axis=-1)


def _rotate_xz(vectors: np.ndarray, angle) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    x, z = vectors[..., 0], vectors[..., 1]
    return np.stack([c * x + s * z, -s * x + c * z], axis=-1)


def _quat_apply(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Apply unit quaternions (..., 4) xyzw to vectors (..., 3)."""
    u, w = q[..., :3], q[..., 3:4]
    uv = np.cross(u, v)
    return v + 2.0 * (w * uv + np.cross(u, uv))


@dataclass
class CharacterFrame:
    root_position_xz: np.ndarray  # (2,)
    root_forward_xz: np.ndarray  # (2,) unit
    joint_positions_local: np.ndarray  # (25, 3)
    joint_velocities_local: np.ndarray  # (25, 3), root-relative
    joint_rotations_local: np.ndarray  # (25, 6) forward + up vectors


class ClipFeatures:
    """Vectorized per-frame character-space features for a whole clip."""

    def __init__(self, clip: MotionClip):
        if clip.skeleton.num_joints != FEATURE_JOINTS:
            raise FeatureError(
                f"feature extraction needs {FEATURE_JOINTS} joints, "
                f"clip has {clip.skeleton.num_joints}"
            )
        self.clip = clip
        pos = clip.positions.astype(np.float64)
        rot = clip.rotations.astype(np.float64)
        n = pos.shape[0]

        self.root_xz = pos[:, 0][:, [0, 2]]
        fwd3 = _quat_apply(rot[:, 0], np.array([0.0, 0.0, 1.0]))
        fwd = fwd3[:, [0, 2]]
        norms = np.linalg.norm(fwd, axis=1)
        if norms[0] < 1e-6:
            raise FeatureError("degenerate forward direction at frame 0")
        for i in range(1, n):  # reuse previous heading when the projection collapses
            if norms[i] < 1e-6:
                fwd[i] = fwd[i - 1] * norms[i - 1]
                norms[i] = norms[i - 1]
        self.forward = fwd / norms[:, None]
        self.yaw = np.arctan2(self.forward[:, 0], self.forward[:, 1])

        root3 = np.zeros((n, 3))
        root3[:, [0, 2]] = self.root_xz
        rel = pos - root3[:, None, :]
        local_pos = _rotate_y(rel, -self.yaw[:, None])

        rel_vel = np.empty_like(rel)
        rel_vel[:-1] = (rel[1:] - rel[:-1]) * clip.fps
        rel_vel[-1] = rel_vel[-2] if n > 1 else 0.0
        local_vel = _rotate_y(rel_vel, -self.yaw[:, None])

        jf = _quat_apply(rot, np.array([0.0, 0.0, 1.0]))
        ju = _quat_apply(rot, np.array([0.0, 1.0, 0.0]))
        local_rot = np.concatenate(
            [
                _rotate_y(jf, -self.yaw[:, None]),
                _rotate_y(ju, -self.yaw[:, None]),
            ],
            axis=-1,
        )

        self.local_pos = local_pos
        self.local_vel = local_vel
        self.local_rot = local_rot
        # One 300-value pose row per frame, in that frame's own character space.
        self.pose_rows = np.concatenate(
            [
                local_pos.reshape(n, -1),
                local_vel.reshape(n, -1),
                local_rot.reshape(n, -1),
            ],
            axis=1,
        )

    @property
    def num_frames(self) -> int:
        return self.pose_rows.shape[0]

    def frame(self, i: int) -> CharacterFrame:
        return CharacterFrame(
            root_position_xz=self.root_xz[i].copy(),
            root_forward_xz=self.forward[i].copy(),
            joint_positions_local=self.local_pos[i].copy(),
            joint_velocities_local=self.local_vel[i].copy(),
            joint_rotations_local=self.local_rot[i].reshape(FEATURE_JOINTS, 6).copy(),
        )

    def traj_sample(self, i: int, j: int) -> tuple[np.ndarray, np.ndarray]:
        """Root position and facing of frame j in frame i's character space."""
        j = int(np.clip(j, 0, self.num_frames - 1))
        delta = self.root_xz[j] - self.root_xz[i]
        c, s = np.cos(-self.yaw[i]), np.sin(-self.yaw[i])
        pos = np.array([c * delta[0] + s * delta[1], -s * delta[0] + c * delta[1]])
        f = self.forward[j]
        direction = np.array([c * f[0] + s * f[1], -s * f[0] + c * f[1]])
        return pos, direction

    def pose_in_frame(self, i: int, j: int) -> np.ndarray:
        """Frame j's 300-value pose row re-expressed in frame i's character space."""
        dyaw = self.yaw[j] - self.yaw[i]
        pos = _rotate_y(self.local_pos[j], dyaw)
        offset = np.zeros(3)
        delta, _ = self.traj_sample(i, j)
        offset[[0, 2]] = delta
        pos = pos + offset
        vel = _rotate_y(self.local_vel[j], dyaw)
        rot6 = self.local_rot[j].reshape(FEATURE_JOINTS, 2, 3)
        rot6 = _rotate_y(rot6, dyaw)
        return np.concatenate([pos.ravel(), vel.ravel(), rot6.reshape(-1)])


def character_space(clip: MotionClip, i: int) -> CharacterFrame:
    """Character-space features of one frame (vectorized path: ClipFeatures)."""
    if not 0 <= i < clip.num_frames:
        raise FeatureError(f"frame {i} out of range")
    return ClipFeatures(clip).frame(i)


@dataclass
class TrainingExample:
    x: np.ndarray  # (348,)
    phase: np.ndarray  # (8,)
    z: np.ndarray  # (342,)
    y: np.ndarray  # (240, 300)
    style: str = ""


class WindowError(ValueError):
    """Raised when a frame's required windows fall outside the clip."""


def assemble_example(
    feats: ClipFeatures,
    i: int,
    phase_features: np.ndarray,
    contacts: np.ndarray,
) -> TrainingExample:
    """Build the (x, phase, z, y) triple for frame ``i``.

    phase_features: (N, 8) per-frame end-effector phase features;
    contacts: (N, 2) per-frame foot contact labels in [0, 1].
    """
    n = feats.num_frames
    if i - 60 < 0 or i + 61 >= n:
        raise WindowError(f"frame {i}: trajectory window out of bounds for {n} frames")
    if n < CLIP_LEN:
        raise WindowError(f"clip too short for a {CLIP_LEN}-frame style window")
    if phase_features.shape != (n, P_DIM):
        raise FeatureError("phase feature track missing or mis-shaped")

    traj_pos = np.empty((12, 2))
    traj_dir = np.empty((12, 2))
    for k, off in enumerate(TRAJ_SAMPLES_IN):
        traj_pos[k], traj_dir[k] = feats.traj_sample(i, i + off)
    x = np.concatenate([traj_pos.ravel(), traj_dir.ravel(), feats.pose_rows[i]])

    fut_pos = np.empty((6, 2))
    fut_dir = np.empty((6, 2))
    for k, off in enumerate(TRAJ_SAMPLES_OUT):
        fut_pos[k], fut_dir[k] = feats.traj_sample(i, i + 1 + off)
    pose_next = feats.pose_in_frame(i, i + 1)
    phase_next = phase_features[i + 1]
    z = np.concatenate(
        [
            fut_pos.ravel(),
            fut_dir.ravel(),
            pose_next,
            contacts[i + 1],
            phase_next,
            phase_next - phase_features[i],
        ]
    )

    start = int(np.clip(i - CLIP_LEN // 2, 0, n - CLIP_LEN))
    y = feats.pose_rows[start : start + CLIP_LEN]
    return TrainingExample(
        x=x.astype(np.float32),
        phase=phase_features[i].astype(np.float32),
        z=z.astype(np.float32),
        y=y.astype(np.float32),
        style=feats.clip.style_label,
    )


def mirror_clip(clip: MotionClip) -> MotionClip:
    """Reflect a clip across the sagittal plane, swapping left/right joints."""
    mapping = clip.skeleton.mirror_map()
    pos = clip.positions[:, mapping].copy()
    pos[..., 0] *= -1.0
    rot = clip.rotations[:, mapping].copy()
    rot[..., 1] *= -1.0  # conjugate by diag(-1,1,1): axis (x,y,z) -> (x,-y,-z)
    rot[..., 2] *= -1.0
    return MotionClip(
        skeleton=clip.skeleton,
        fps=clip.fps,
        positions=pos,
        rotations=rot,
        style_label=clip.style_label,
        gait_label=clip.gait_label,
    )


# Channels are metre- or unit-scale. Near-constant channels must not be
# standardized by a vanishing std: at runtime the controller feeds its own
# output back, and millimetre drift on a 1e-5-std channel would turn into a
# hundred-sigma input that knocks the network off the motion manifold.
STD_FLOOR = 1e-2


@dataclass
class NormalizationStats:
    input_mean: np.ndarray  # (356,)
    input_std: np.ndarray
    output_mean: np.ndarray  # (342,)
    output_std: np.ndarray
    clip_mean: np.ndarray  # (300,)
    clip_std: np.ndarray

    def as_dict(self) -> dict[str, np.ndarray]:
        return {
            "input_mean": self.input_mean,
            "input_std": self.input_std,
            "output_mean": self.output_mean,
            "output_std": self.output_std,
            "clip_mean": self.clip_mean,
            "clip_std": self.clip_std,
        }


class _Welford:
    """Single-pass mean/variance; merges associatively (Chan et al. update)."""

    def __init__(self, dim: int):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def add(self, rows: np.ndarray) -> None:
        rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        for row in rows:
            self.n += 1
            delta = row - self.mean
            self.mean += delta / self.n
            self.m2 += delta * (row - self.mean)

    def add_batch(self, rows: np.ndarray) -> None:
        rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        k = rows.shape[0]
        if k == 0:
            return
        b_mean = rows.mean(axis=0)
        b_m2 = ((rows - b_mean) ** 2).sum(axis=0)
        delta = b_mean - self.mean
        total = self.n + k
        self.mean += delta * (k / total)
        self.m2 += b_m2 + delta**2 * (self.n * k / total)
        self.n = total

    def merge(self, other: "_Welford") -> None:
        if other.n == 0:
            return
        delta = other.mean - self.mean
        total = self.n + other.n
        self.mean = self.mean + delta * (other.n / total)
        self.m2 = self.m2 + other.m2 + delta**2 * (self.n * other.n / total)
        self.n = total

    def std(self) -> np.ndarray:
        var = self.m2 / max(self.n, 1)
        return np.maximum(np.sqrt(var), STD_FLOOR)


def compute_normalization(examples) -> NormalizationStats:
    """Streaming per-dimension mean/std over (x+phase, z, clip-row) channels."""
    w_in = _Welford(X_DIM + P_DIM)
    w_out = _Welford(Z_DIM)
    w_clip = _Welford(CLIP_DIM)
    count = 0
    for ex in examples:
        count += 1
        w_in.add_batch(np.concatenate([ex.x, ex.phase])[None, :])
        w_out.add_batch(ex.z[None, :])
        w_clip.add_batch(ex.y)
    if count < 2:
        raise FeatureError("need at least 2 examples for normalization statistics")
    return NormalizationStats(
        input_mean=w_in.mean,
        input_std=w_in.std(),
        output_mean=w_out.mean,
        output_std=w_out.std(),
        clip_mean=w_clip.mean,
        clip_std=w_clip.std(),
    )
