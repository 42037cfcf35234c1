"""Motion clips and the native binary clip container (magic "SMC1")."""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

from .skeleton import Skeleton

GAITS = ("BR", "BW", "FR", "FW", "SR", "SW", "Idle", "Transition")

_MAGIC = b"SMC1"


class ClipFormatError(ValueError):
    pass


@dataclass
class MotionClip:
    """Per-frame joint world transforms at a fixed frame rate.

    positions: (N, J, 3) meters; rotations: (N, J, 4) unit quaternions in
    x, y, z, w order (scipy convention). Joint 0 is the root.
    """

    skeleton: Skeleton
    fps: float
    positions: np.ndarray
    rotations: np.ndarray
    style_label: str = ""
    gait_label: str = "FW"
    aux: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float32)
        self.rotations = np.ascontiguousarray(self.rotations, dtype=np.float32)
        if self.gait_label not in GAITS:
            raise ValueError(f"unknown gait label {self.gait_label!r}")

    @property
    def num_frames(self) -> int:
        return self.positions.shape[0]

    def validate(self, max_step: float = 0.5, quat_tol: float = 1e-6) -> None:
        """Check unit quaternions and the teleport guard; raise on violation."""
        norms = np.linalg.norm(self.rotations.astype(np.float64), axis=-1)
        if not np.allclose(norms, 1.0, atol=quat_tol):
            worst = float(np.abs(norms - 1.0).max())
            raise ClipFormatError(f"non-unit quaternion (max deviation {worst:.2e})")
        if self.num_frames > 1:
            step = np.linalg.norm(np.diff(self.positions, axis=0), axis=-1)
            if step.max() >= max_step:
                f = int(np.unravel_index(step.argmax(), step.shape)[0])
                raise ClipFormatError(
                    f"teleport between frames {f} and {f + 1}: {step.max():.3f} m"
                )

    def sliced(self, start: int, stop: int) -> "MotionClip":
        return MotionClip(
            skeleton=self.skeleton,
            fps=self.fps,
            positions=self.positions[start:stop],
            rotations=self.rotations[start:stop],
            style_label=self.style_label,
            gait_label=self.gait_label,
            aux={k: v[start:stop] for k, v in self.aux.items()},
        )


def _write_str(buf, s: str) -> None:
    raw = s.encode("utf-8")
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)


def _read_str(buf) -> str:
    (n,) = struct.unpack("<H", buf.read(2))
    return buf.read(n).decode("utf-8")


def save_clip(clip: MotionClip, path: str) -> None:
    buf = io.BytesIO()
    buf.write(_MAGIC)
    skel = clip.skeleton
    buf.write(struct.pack("<III", round(clip.fps), skel.num_joints, clip.num_frames))
    for j in range(skel.num_joints):
        _write_str(buf, skel.names[j])
        parent = -1 if skel.parents[j] is None else skel.parents[j]
        buf.write(struct.pack("<i", parent))
        buf.write(np.asarray(skel.offsets[j], dtype="<f4").tobytes())
    buf.write(struct.pack("<4I", *skel.end_effectors))
    buf.write(struct.pack("<2I", *skel.feet))
    _write_str(buf, clip.style_label)
    _write_str(buf, clip.gait_label)
    buf.write(clip.positions.astype("<f4").tobytes())
    buf.write(clip.rotations.astype("<f4").tobytes())
    buf.write(struct.pack("<I", len(clip.aux)))
    for name, arr in clip.aux.items():
        _write_str(buf, name)
        arr = np.asarray(arr, dtype="<f4")
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    from .util import atomic_write_bytes

    atomic_write_bytes(path, buf.getvalue())


def load_clip(path: str) -> MotionClip:
    with open(path, "rb") as f:
        buf = io.BytesIO(f.read())
    magic = buf.read(4)
    if magic != _MAGIC:
        raise ClipFormatError(f"bad magic {magic!r}, expected {_MAGIC!r}")
    fps, num_joints, num_frames = struct.unpack("<III", buf.read(12))
    names, parents, offsets = [], [], []
    for _ in range(num_joints):
        names.append(_read_str(buf))
        (p,) = struct.unpack("<i", buf.read(4))
        parents.append(None if p < 0 else p)
        offsets.append(np.frombuffer(buf.read(12), dtype="<f4").astype(np.float64))
    end_effectors = struct.unpack("<4I", buf.read(16))
    feet = struct.unpack("<2I", buf.read(8))
    style = _read_str(buf)
    gait = _read_str(buf)
    skel = Skeleton(names, parents, np.array(offsets), end_effectors, feet)

    def read_f32(count):
        raw = buf.read(4 * count)
        if len(raw) != 4 * count:
            raise ClipFormatError("truncated clip file")
        return np.frombuffer(raw, dtype="<f4")

    positions = read_f32(num_frames * num_joints * 3).reshape(num_frames, num_joints, 3)
    rotations = read_f32(num_frames * num_joints * 4).reshape(num_frames, num_joints, 4)
    (n_aux,) = struct.unpack("<I", buf.read(4))
    aux = {}
    for _ in range(n_aux):
        name = _read_str(buf)
        (ndim,) = struct.unpack("<I", buf.read(4))
        shape = struct.unpack(f"<{ndim}I", buf.read(4 * ndim))
        aux[name] = read_f32(int(np.prod(shape))).reshape(shape)
    return MotionClip(skel, float(fps), positions, rotations, style, gait, aux)


@dataclass
class ManifestEntry:
    path: str
    style: str
    gait: str
    start: int = 0
    stop: int = -1  # -1 = end of clip


def parse_manifest(text: str) -> list[ManifestEntry]:
    """Line format: path<TAB>style<TAB>gait[<TAB>start:stop]. '#' starts a comment."""
    entries = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) < 3:
            raise ClipFormatError(f"manifest line {lineno}: expected at least 3 fields")
        start, stop = 0, -1
        if len(parts) >= 4 and parts[3]:
            a, _, b = parts[3].partition(":")
            start = int(a) if a else 0
            stop = int(b) if b else -1
        if parts[2] not in GAITS:
            raise ClipFormatError(f"manifest line {lineno}: unknown gait {parts[2]!r}")
        entries.append(ManifestEntry(parts[0], parts[1], parts[2], start, stop))
    return entries
