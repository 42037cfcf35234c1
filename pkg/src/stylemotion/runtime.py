"""Autoregressive character controller: trajectory blending, style
interpolation, stepping, and foot-contact IK."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .features import (
    P_DIM,
    TRAJ_SAMPLES_IN,
    TRAJ_SAMPLES_OUT,
    X_DIM,
    Z_CONTACTS,
    Z_JOINT_POS,
    Z_JOINT_ROT,
    Z_JOINT_VEL,
    Z_PHASE_NEXT,
    Z_PHASE_UPDATE,
    Z_TRAJ_DIR,
    Z_TRAJ_POS,
    _rotate_y,
)
from .model import StyleModel
from .skeleton import FEATURE_JOINTS, Skeleton

FPS = 60
GAIT_SPEED_CAP = {"idle": 0.0, "walk": 2.0, "run": 5.0}
PHASE_BLEND = 0.5  # weight on the predicted absolute phase vs integrated update
IK_RELEASE_FRAMES = 6  # 0.1 s blend-out
# First predicted trajectory sample sits 11 frames ahead of the current frame.
_FUT_OFFSETS = np.array([o + 1 for o in TRAJ_SAMPLES_OUT], dtype=np.float64)


class ControlError(ValueError):
    pass


@dataclass
class ControlInput:
    target_direction_xz: np.ndarray = field(default_factory=lambda: np.zeros(2))
    target_speed: float = 0.0
    gait: str = "idle"
    style_id: str | None = None
    triangle_ids: tuple[str, str, str] | None = None
    triangle_lambda: np.ndarray | None = None

    def validate(self) -> None:
        if self.gait not in GAIT_SPEED_CAP:
            raise ControlError(f"unknown gait {self.gait!r}")
        if self.triangle_ids is not None:
            lam = np.asarray(self.triangle_lambda, dtype=np.float64)
            _check_simplex(lam)


def _check_simplex(lam: np.ndarray) -> None:
    if lam.shape != (3,):
        raise ControlError("barycentric weights must have length 3")
    if np.any(lam < 0.0) or abs(float(lam.sum()) - 1.0) > 1e-6:
        raise ControlError(f"invalid simplex coordinates {lam.tolist()}")


def precompute_style(model: StyleModel, clips: list[np.ndarray]) -> np.ndarray:
    """Mean FiLM embedding over (240, 300) raw style-clip windows."""
    if not clips:
        raise ValueError("need at least one style clip")
    embs = [model.film_generate(c).data.astype(np.float64) for c in clips]
    return np.mean(embs, axis=0).astype(np.float32)


def interpolate_styles(e1, e2, e3, lam) -> np.ndarray:
    lam = np.asarray(lam, dtype=np.float64)
    _check_simplex(lam)
    e1, e2, e3 = (np.asarray(e) for e in (e1, e2, e3))
    if lam[0] == 1.0:
        return e1.copy()
    if lam[1] == 1.0:
        return e2.copy()
    if lam[2] == 1.0:
        return e3.copy()
    out = lam[0] * e1.astype(np.float64) + lam[1] * e2.astype(np.float64) + lam[2] * e3.astype(np.float64)
    return out.astype(e1.dtype)


def resolve_style(model: StyleModel, control: ControlInput) -> tuple[np.ndarray, str]:
    """Embedding plus a telemetry label for the active selection."""
    if control.triangle_ids is not None:
        embs = []
        for sid in control.triangle_ids:
            if sid not in model.embeddings:
                raise ControlError(f"unknown style {sid!r}")
            embs.append(model.embeddings[sid])
        emb = interpolate_styles(*embs, control.triangle_lambda)
        return emb, "triangle:" + ",".join(control.triangle_ids)
    sid = control.style_id
    if sid is None:
        if not model.embeddings:
            raise ControlError("no styles available")
        sid = next(iter(model.embeddings))
    if sid not in model.embeddings:
        raise ControlError(f"unknown style {sid!r}")
    return model.embeddings[sid], sid


def _xz_to_char(v: np.ndarray, yaw: float) -> np.ndarray:
    """World xz into the character frame of a heading ``yaw``."""
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])


def _xz_to_world(v: np.ndarray, yaw: float) -> np.ndarray:
    """Inverse of _xz_to_char."""
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([c * v[0] + s * v[1], -s * v[0] + c * v[1]])


@dataclass
class FootLock:
    locked: bool = False
    anchor: np.ndarray = field(default_factory=lambda: np.zeros(3))
    release: int = 0  # frames left in the blend-out


@dataclass
class ControllerState:
    root_xz: np.ndarray  # (2,) world
    yaw: float
    local_pos: np.ndarray  # (25, 3) character space
    local_vel: np.ndarray  # (25, 3)
    local_rot: np.ndarray  # (25, 6)
    phase: np.ndarray  # (8,)
    past_root: np.ndarray  # (60, 2) world, oldest first
    past_yaw: np.ndarray  # (60,)
    locks: tuple[FootLock, FootLock] = field(
        default_factory=lambda: (FootLock(), FootLock())
    )
    prev_contacts: np.ndarray = field(default_factory=lambda: np.zeros(2))
    pred_pos: np.ndarray = field(default_factory=lambda: np.zeros((6, 2)))
    pred_dir: np.ndarray = field(default_factory=lambda: np.tile([0.0, 1.0], (6, 1)))
    frozen: bool = False


def make_state(
    local_pos: np.ndarray,
    local_vel: np.ndarray,
    local_rot: np.ndarray,
    phase: np.ndarray,
    root_xz=(0.0, 0.0),
    yaw: float = 0.0,
    velocity_xz: np.ndarray | None = None,
) -> ControllerState:
    """Build a controller state; ``velocity_xz`` (world m/s) optionally
    prefills the trajectory history and predicted path as straight-line
    motion. Without it the history is a standstill and the first ~second of
    stepping sees an off-manifold input, which shows as a startup glitch."""
    root = np.asarray(root_xz, dtype=np.float64)
    state = ControllerState(
        root_xz=root.copy(),
        yaw=float(yaw),
        local_pos=np.asarray(local_pos, dtype=np.float64).reshape(FEATURE_JOINTS, 3).copy(),
        local_vel=np.asarray(local_vel, dtype=np.float64).reshape(FEATURE_JOINTS, 3).copy(),
        local_rot=np.asarray(local_rot, dtype=np.float64).reshape(FEATURE_JOINTS, 6).copy(),
        phase=np.asarray(phase, dtype=np.float64).copy(),
        past_root=np.tile(root, (60, 1)),
        past_yaw=np.full(60, float(yaw)),
    )
    if velocity_xz is not None:
        v = np.asarray(velocity_xz, dtype=np.float64)
        speed = float(np.linalg.norm(v))
        back = np.arange(-60, 0, dtype=np.float64)[:, None]
        state.past_root = root + back * (v / FPS)
        if speed > 1e-9:
            d = _xz_to_char(v / speed, state.yaw)
            state.pred_pos = d[None, :] * (speed * _FUT_OFFSETS / FPS)[:, None]
            state.pred_dir = np.tile(d, (6, 1))
    return state


def blend_user_trajectory(
    predicted_pos: np.ndarray,
    predicted_dir: np.ndarray,
    control: ControlInput,
    responsiveness: float = 0.5,
) -> tuple[np.ndarray, np.ndarray]:
    """Mix the network's 6 future samples with the user's desired path.

    Everything lives in the current character space. Near-future samples
    trust the network, far-future the user: w_k = tau^((6-k)/6), k = 1..6.
    """
    if not 0.0 < responsiveness <= 1.0:
        raise ControlError("responsiveness must be in (0, 1]")
    speed = min(max(control.target_speed, 0.0), GAIT_SPEED_CAP[control.gait])
    d = np.asarray(control.target_direction_xz, dtype=np.float64)
    n = np.linalg.norm(d)
    if n < 1e-9 or speed == 0.0:
        desired_dir = np.array([0.0, 1.0])  # keep heading
        desired_pos = np.zeros((6, 2))
        speed = 0.0
    else:
        desired_dir = d / n
        desired_pos = desired_dir[None, :] * (speed * _FUT_OFFSETS / FPS)[:, None]
    k = np.arange(1, 7)
    w = responsiveness ** ((6 - k) / 6.0)
    pos = (1.0 - w)[:, None] * predicted_pos + w[:, None] * desired_pos
    dirs = (1.0 - w)[:, None] * predicted_dir + w[:, None] * desired_dir[None, :]
    norms = np.linalg.norm(dirs, axis=1, keepdims=True)
    dirs = np.where(norms > 1e-9, dirs / np.maximum(norms, 1e-9), [[0.0, 1.0]])
    return pos, dirs


def _build_input(state: ControllerState, fut_pos, fut_dir) -> np.ndarray:
    traj_pos = np.zeros((12, 2))
    traj_dir = np.zeros((12, 2))
    fwd = np.array([np.sin(state.yaw), np.cos(state.yaw)])
    for k, off in enumerate(TRAJ_SAMPLES_IN):
        if off < 0:
            root = state.past_root[60 + off]
            yaw = state.past_yaw[60 + off]
            traj_pos[k] = _xz_to_char(root - state.root_xz, state.yaw)
            traj_dir[k] = _xz_to_char(np.array([np.sin(yaw), np.cos(yaw)]), state.yaw)
        elif off == 0:
            traj_dir[k] = np.array([0.0, 1.0])
        else:
            # Interpolate the blended 11..61-frame samples at +10..+50.
            j = off // 10 - 1  # target knots
            knots = np.concatenate([[0.0], _FUT_OFFSETS])
            px = np.concatenate([[0.0], fut_pos[:, 0]])
            pz = np.concatenate([[0.0], fut_pos[:, 1]])
            traj_pos[k] = [np.interp(off, knots, px), np.interp(off, knots, pz)]
            dx = np.concatenate([[0.0], fut_dir[:, 0]])
            dz = np.concatenate([[1.0], fut_dir[:, 1]])
            v = np.array([np.interp(off, knots, dx), np.interp(off, knots, dz)])
            nv = np.linalg.norm(v)
            traj_dir[k] = v / nv if nv > 1e-9 else np.array([0.0, 1.0])
    x = np.concatenate(
        [
            traj_pos.ravel(),
            traj_dir.ravel(),
            state.local_pos.ravel(),
            state.local_vel.ravel(),
            state.local_rot.ravel(),
        ]
    )
    assert x.shape == (X_DIM,)
    return x


def _world_pose(state: ControllerState) -> tuple[np.ndarray, np.ndarray]:
    """World joint positions (25, 3) and quaternions (25, 4) xyzw."""
    root3 = np.array([state.root_xz[0], 0.0, state.root_xz[1]])
    pos = _rotate_y(state.local_pos, state.yaw) + root3
    f = _rotate_y(state.local_rot[:, :3], state.yaw)
    u = _rotate_y(state.local_rot[:, 3:], state.yaw)
    f = f / np.maximum(np.linalg.norm(f, axis=1, keepdims=True), 1e-9)
    u = u - (u * f).sum(axis=1, keepdims=True) * f
    u = u / np.maximum(np.linalg.norm(u, axis=1, keepdims=True), 1e-9)
    r = np.cross(u, f)
    mats = np.stack([r, u, f], axis=-1)  # columns: right, up, forward
    quat = Rotation.from_matrix(mats).as_quat()
    return pos, quat


def solve_two_bone(hip, knee, foot, target):
    """Analytic hip-knee-foot IK; knee stays in its original bend plane.

    Returns new (knee, foot). Unreachable targets clamp to full extension
    along the hip-target ray.
    """
    l1 = np.linalg.norm(knee - hip)
    l2 = np.linalg.norm(foot - knee)
    to_target = target - hip
    dist = np.linalg.norm(to_target)
    if dist < 1e-9:
        return knee.copy(), foot.copy()
    reach = l1 + l2
    eps = 1e-5 * max(reach, 1e-9)
    dist = np.clip(dist, abs(l1 - l2) + eps, reach - eps)
    axis = to_target / np.linalg.norm(to_target)
    new_foot = hip + axis * dist
    # Bend direction from the current knee, projected off the hip-target axis.
    bend = (knee - hip) - np.dot(knee - hip, axis) * axis
    bn = np.linalg.norm(bend)
    if bn < 1e-9:
        ref = np.array([0.0, 0.0, 1.0])
        bend = ref - np.dot(ref, axis) * axis
        bn = np.linalg.norm(bend)
        if bn < 1e-9:
            bend = np.array([1.0, 0.0, 0.0]) - axis[0] * axis
            bn = np.linalg.norm(bend)
    bend = bend / bn
    # Law of cosines: distance of the knee along and off the axis.
    along = (l1 * l1 - l2 * l2 + dist * dist) / (2.0 * dist)
    off2 = max(l1 * l1 - along * along, 0.0)
    new_knee = hip + axis * along + bend * np.sqrt(off2)
    return new_knee, new_foot


def apply_foot_ik(
    skeleton: Skeleton,
    positions: np.ndarray,
    contacts: np.ndarray,
    locks: tuple[FootLock, FootLock],
    prev_contacts: np.ndarray,
) -> np.ndarray:
    """Pin feet to world anchors while their contact labels are active."""
    pos = positions.copy()
    parents = skeleton.parents
    for side, foot_idx in enumerate(skeleton.feet):
        lock = locks[side]
        knee_idx = parents[foot_idx]
        hip_idx = parents[knee_idx]
        c = float(contacts[side])
        if c >= 0.5 and prev_contacts[side] < 0.5:
            anchor = pos[foot_idx].copy()
            anchor[1] = max(anchor[1], 0.0)
            lock.locked = True
            lock.anchor = anchor
            lock.release = 0
        if c < 0.5 and lock.locked:
            lock.locked = False
            lock.release = IK_RELEASE_FRAMES
        target = None
        if lock.locked:
            target = lock.anchor
        elif lock.release > 0:
            t = lock.release / IK_RELEASE_FRAMES
            target = t * lock.anchor + (1.0 - t) * pos[foot_idx]
            lock.release -= 1
        if target is None:
            continue
        target = target.copy()
        target[1] = max(target[1], 0.0)
        old_foot = pos[foot_idx].copy()
        new_knee, new_foot = solve_two_bone(
            pos[hip_idx], pos[knee_idx], pos[foot_idx], target
        )
        pos[knee_idx] = new_knee
        pos[foot_idx] = new_foot
        delta = new_foot - old_foot
        # Toes ride along rigidly.
        for j in range(foot_idx + 1, skeleton.num_joints):
            a = parents[j]
            while a is not None and a != foot_idx:
                a = parents[a]
            if a == foot_idx:
                pos[j] = pos[j] + delta
    return pos


def _blend_phase(phase: np.ndarray, update: np.ndarray, phase_next: np.ndarray) -> np.ndarray:
    """Normalized blend of the integrated and the predicted absolute phase.

    Each bone's (sin, cos) pair is a 2D vector whose length carries the gait
    amplitude. A plain linear blend shrinks that length whenever the two
    estimates disagree in direction, and the shrinkage compounds over ticks
    until the limit cycle dies. Blend the directions linearly but restore the
    linearly blended amplitude per pair.
    """
    integ = (phase + update).reshape(-1, 2)
    nxt = phase_next.reshape(-1, 2)
    mixed = (1.0 - PHASE_BLEND) * integ + PHASE_BLEND * nxt
    amp = (1.0 - PHASE_BLEND) * np.linalg.norm(integ, axis=1) + \
        PHASE_BLEND * np.linalg.norm(nxt, axis=1)
    norm = np.linalg.norm(mixed, axis=1)
    safe = norm > 1e-9
    mixed[safe] *= (amp[safe] / norm[safe])[:, None]
    return mixed.reshape(-1)


@dataclass
class StepResult:
    positions: np.ndarray  # (25, 3) world, after IK
    rotations: np.ndarray  # (25, 4) world xyzw
    root: np.ndarray  # (3,) world
    yaw: float
    contacts: np.ndarray  # (2,)
    phase: np.ndarray  # (8,)
    frozen: bool = False


def step(
    state: ControllerState,
    control: ControlInput,
    model: StyleModel,
    responsiveness: float = 0.5,
) -> StepResult:
    """Advance the controller one 60 Hz tick. Mutates ``state``."""
    control.validate()
    if model.config.mode == "film":
        embedding, _ = resolve_style(model, control)
        kwargs = {"embedding": embedding}
    else:
        sid = control.style_id or model.config.styles[0]
        kwargs = {"style": sid}

    fut_pos, fut_dir = blend_user_trajectory(
        state.pred_pos, state.pred_dir, control, responsiveness
    )

    x = _build_input(state, fut_pos, fut_dir)
    z = model.predict(x[None, :], state.phase[None, :], **kwargs).data[0].astype(np.float64)

    if not np.all(np.isfinite(z)):
        state.frozen = True
        pos, quat = _world_pose(state)
        root3 = np.array([state.root_xz[0], 0.0, state.root_xz[1]])
        return StepResult(pos, quat, root3, state.yaw, state.prev_contacts.copy(),
                          state.phase.copy(), frozen=True)
    state.frozen = False

    pred_pos = z[Z_TRAJ_POS].reshape(6, 2)
    pred_dir = z[Z_TRAJ_DIR].reshape(6, 2)

    # Root advance: first future sample interpolated down to one frame.
    delta = pred_pos[0] / _FUT_OFFSETS[0]
    speed_cap = min(max(control.target_speed, 0.0), GAIT_SPEED_CAP[control.gait])
    max_step = speed_cap / FPS + 0.009
    dn = np.linalg.norm(delta)
    if dn > max_step:
        delta = delta * (max_step / dn)
    d0 = pred_dir[0]
    d0n = np.linalg.norm(d0)
    dyaw = np.arctan2(d0[0], d0[1]) / _FUT_OFFSETS[0] if d0n > 1e-9 else 0.0

    state.past_root = np.roll(state.past_root, -1, axis=0)
    state.past_root[-1] = state.root_xz
    state.past_yaw = np.roll(state.past_yaw, -1)
    state.past_yaw[-1] = state.yaw

    state.root_xz = state.root_xz + _xz_to_world(delta, state.yaw)
    state.yaw = float(state.yaw + dyaw)

    # Cache the prediction for the next tick's blend, re-expressed in the
    # advanced character frame.
    cs, sn = np.cos(-dyaw), np.sin(-dyaw)
    rot2 = np.array([[cs, sn], [-sn, cs]])
    state.pred_pos = (pred_pos - delta) @ rot2.T
    state.pred_dir = pred_dir @ rot2.T

    # Predicted pose is in the previous character frame; re-express in the new one.
    offset3 = np.array([delta[0], 0.0, delta[1]])
    new_pos = _rotate_y(z[Z_JOINT_POS].reshape(FEATURE_JOINTS, 3) - offset3, -dyaw)
    new_vel = _rotate_y(z[Z_JOINT_VEL].reshape(FEATURE_JOINTS, 3), -dyaw)
    rot6 = z[Z_JOINT_ROT].reshape(FEATURE_JOINTS, 2, 3)
    new_rot = _rotate_y(rot6, -dyaw).reshape(FEATURE_JOINTS, 6)
    state.local_pos = new_pos
    state.local_vel = new_vel
    state.local_rot = new_rot

    state.phase = _blend_phase(state.phase, z[Z_PHASE_UPDATE], z[Z_PHASE_NEXT])

    contacts = np.clip(z[Z_CONTACTS], 0.0, 1.0)
    pos, quat = _world_pose(state)
    pos = apply_foot_ik(model_skeleton(model), pos, contacts, state.locks, state.prev_contacts)
    state.prev_contacts = contacts.copy()

    root3 = np.array([state.root_xz[0], 0.0, state.root_xz[1]])
    return StepResult(pos, quat, root3, state.yaw, contacts, state.phase.copy())


_DEFAULT_SKELETON: Skeleton | None = None


def model_skeleton(model: StyleModel) -> Skeleton:
    """Runtime poses use the standard 25-joint skeleton."""
    global _DEFAULT_SKELETON
    if _DEFAULT_SKELETON is None:
        from .skeleton import default_skeleton

        _DEFAULT_SKELETON = default_skeleton()
    return _DEFAULT_SKELETON
