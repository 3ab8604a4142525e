"""22-joint body skeleton, forward kinematics and root-translation recovery."""

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError
from .rotmath import sixd_to_matrix

NUM_JOINTS = 22

JOINT_NAMES = (
    "pelvis",
    "left_hip",
    "right_hip",
    "spine1",
    "left_knee",
    "right_knee",
    "spine2",
    "left_ankle",
    "right_ankle",
    "spine3",
    "left_foot",
    "right_foot",
    "neck",
    "left_collar",
    "right_collar",
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
)

PARENTS = (-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19)

# Rest-pose bone vectors in meters, y up, character facing +z.  Approximate
# neutral adult proportions; substitute measured values via a skeleton file.
DEFAULT_OFFSETS = (
    (0.0, 0.0, 0.0),
    (0.058, -0.082, -0.018),
    (-0.060, -0.091, -0.014),
    (0.004, 0.124, -0.038),
    (0.043, -0.386, 0.008),
    (-0.043, -0.383, -0.005),
    (0.004, 0.138, 0.028),
    (-0.015, -0.427, -0.037),
    (0.019, -0.420, -0.035),
    (0.000, 0.056, 0.002),
    (0.041, -0.060, 0.122),
    (-0.035, -0.063, 0.130),
    (-0.013, 0.212, -0.033),
    (0.072, 0.114, -0.019),
    (-0.083, 0.112, -0.024),
    (0.010, 0.089, 0.050),
    (0.123, 0.045, -0.019),
    (-0.113, 0.047, -0.008),
    (0.255, -0.016, -0.023),
    (-0.260, -0.014, -0.031),
    (0.266, 0.009, -0.007),
    (-0.269, 0.007, -0.006),
)

TRACKED_NAMES = ("head", "left_wrist", "right_wrist")
FEET_NAMES = ("left_ankle", "right_ankle", "left_foot", "right_foot")

SKELETON_FORMAT_VERSION = 1


@dataclass(frozen=True)
class SkeletonDef:
    parent: tuple
    offset: np.ndarray
    names: tuple = JOINT_NAMES
    tracked: tuple = field(default=None)
    feet: tuple = field(default=None)
    head_device_offset: np.ndarray = field(default=None)

    def __post_init__(self):
        parent = tuple(int(p) for p in self.parent)
        offset = np.array(self.offset, dtype=np.float64)
        offset.setflags(write=False)
        names = tuple(self.names)
        object.__setattr__(self, "parent", parent)
        object.__setattr__(self, "offset", offset)
        object.__setattr__(self, "names", names)
        if self.tracked is None:
            object.__setattr__(self, "tracked", tuple(names.index(n) for n in TRACKED_NAMES))
        if self.feet is None:
            object.__setattr__(self, "feet", tuple(names.index(n) for n in FEET_NAMES))
        dev = np.zeros(3) if self.head_device_offset is None else np.array(self.head_device_offset, float)
        dev.setflags(write=False)
        object.__setattr__(self, "head_device_offset", dev)
        self.validate()

    def validate(self):
        n = len(self.parent)
        if n != NUM_JOINTS or len(self.names) != n or self.offset.shape != (n, 3):
            raise FormatError(f"skeleton must have {NUM_JOINTS} joints with 3-vector offsets")
        if self.parent[0] != -1:
            raise FormatError("joint 0 must be the root (parent -1)")
        for j in range(1, n):
            if not 0 <= self.parent[j] < j:
                raise FormatError(f"joint {j} has parent {self.parent[j]}; parents must precede children")
        if not np.all(np.isfinite(self.offset)):
            raise FormatError("offsets must be finite")
        idx = list(self.tracked) + list(self.feet)
        if len(set(idx)) != len(idx) or any(not 0 <= i < n for i in idx):
            raise FormatError("tracked and feet indices must be distinct joint indices")

    @property
    def head(self):
        return self.tracked[0]

    def digest(self):
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]

    def chain(self, j):
        """Joint indices from the root down to ``j`` inclusive."""
        out = []
        while j != -1:
            out.append(j)
            j = self.parent[j]
        return out[::-1]

    def rest_positions(self):
        pos = np.zeros((NUM_JOINTS, 3))
        for j in range(1, NUM_JOINTS):
            pos[j] = pos[self.parent[j]] + self.offset[j]
        return pos

    def to_dict(self):
        return {
            "version": SKELETON_FORMAT_VERSION,
            "names": list(self.names),
            "parent": list(self.parent),
            "offset": self.offset.tolist(),
            "tracked": list(self.tracked),
            "feet": list(self.feet),
            "head_device_offset": self.head_device_offset.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        for key in ("version", "names", "parent", "offset"):
            if key not in d:
                raise FormatError(f"skeleton document is missing field '{key}'")
        if d["version"] != SKELETON_FORMAT_VERSION:
            raise FormatError(f"unsupported skeleton version {d['version']}")
        try:
            return cls(
                parent=d["parent"],
                offset=d["offset"],
                names=d["names"],
                tracked=tuple(d["tracked"]) if "tracked" in d else None,
                feet=tuple(d["feet"]) if "feet" in d else None,
                head_device_offset=d.get("head_device_offset"),
            )
        except (ValueError, TypeError) as exc:
            if isinstance(exc, FormatError):
                raise
            raise FormatError(f"malformed skeleton document: {exc}") from exc


def default_skeleton():
    return SkeletonDef(parent=PARENTS, offset=DEFAULT_OFFSETS)


def save_skeleton(path, skel):
    Path(path).write_text(json.dumps(skel.to_dict(), indent=2) + "\n")


def load_skeleton(path):
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not a JSON document ({exc})") from exc
    return SkeletonDef.from_dict(d)


@dataclass
class FKResult:
    global_rot: np.ndarray  # (..., 22, 3, 3)
    global_pos: np.ndarray  # (..., 22, 3)


def forward_kinematics_mats(skel, local_rot, root_translation):
    """FK from local rotation matrices (..., 22, 3, 3) and root translation (..., 3)."""
    local_rot = np.asarray(local_rot, dtype=np.float64)
    root_translation = np.asarray(root_translation, dtype=np.float64)
    lead = local_rot.shape[:-3]
    G = np.empty(lead + (NUM_JOINTS, 3, 3))
    P = np.empty(lead + (NUM_JOINTS, 3))
    G[..., 0, :, :] = local_rot[..., 0, :, :]
    P[..., 0, :] = np.broadcast_to(root_translation, lead + (3,))
    for j in range(1, NUM_JOINTS):
        p = skel.parent[j]
        G[..., j, :, :] = G[..., p, :, :] @ local_rot[..., j, :, :]
        P[..., j, :] = P[..., p, :] + G[..., p, :, :] @ skel.offset[j]
    return FKResult(G, P)


def forward_kinematics(skel, local, root_translation):
    """Global joint rotations and positions.

    Args:
        skel: skeleton definition.
        local: local 6D rotations, shape (..., 22, 6); joint 0 is relative
            to the world frame.
        root_translation: pelvis position in meters, shape (..., 3).
    """
    return forward_kinematics_mats(skel, sixd_to_matrix(local), root_translation)


def tracked_head_position(skel, fk):
    """Head tracker position implied by an FK result (joint + rigid device offset)."""
    h = skel.head
    return fk.global_pos[..., h, :] + fk.global_rot[..., h, :, :] @ skel.head_device_offset


def solve_root_translation(skel, local, head_pos_tracked):
    """Root translation placing the head tracker exactly at ``head_pos_tracked``.

    FK is linear in the root translation, so the solve is a single
    subtraction of the head position obtained with zero translation.
    """
    local = np.asarray(local, dtype=np.float64)
    fk = forward_kinematics(skel, local, np.zeros(local.shape[:-2] + (3,)))
    return np.asarray(head_pos_tracked, dtype=np.float64) - tracked_head_position(skel, fk)
