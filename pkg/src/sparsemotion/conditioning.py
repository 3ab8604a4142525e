"""Sparse conditioning signal: head and wrist pose plus their velocities.

Per tracked joint the 18 features are ``[p(3), r(6), v(3), w(6)]``:
global position (m), global rotation (6D), linear velocity (m/s) and the 6D
encoding of the previous-to-current relative rotation ``R_prev^T R_cur``.
Velocities are backward differences; frame 0 holds zero velocity and the
identity relative rotation.  No normalisation is applied.

Device log format (CSV, header row required, fixed column order)::

    t, head_px, head_py, head_pz, head_r0..head_r5,
       lwrist_px, ..., lwrist_r5, rwrist_px, ..., rwrist_r5
    [, head_vx, head_vy, head_vz, head_w0..head_w5, lwrist_v..., rwrist_v...]

``t`` is a monotone timestamp in seconds.  The velocity block is optional and
all-or-nothing; when absent it is recomputed from the poses at
``fps = 1 / median(dt)``.
"""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError
from .rotmath import identity_sixd, is_rotation, matrix_to_sixd, relative_rotation, sixd_to_matrix
from .skeleton import forward_kinematics, tracked_head_position

NUM_TRACKED = 3
FEATURES_PER_JOINT = 18
SIGNAL_DIM = NUM_TRACKED * FEATURES_PER_JOINT

P, R, V, W = slice(0, 3), slice(3, 9), slice(9, 12), slice(12, 18)

DEVICE_PREFIXES = ("head", "lwrist", "rwrist")


@dataclass
class TrackingSignal:
    frames: np.ndarray  # (F, 3, 18)
    fps: float = 60.0

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3 or self.frames.shape[1:] != (NUM_TRACKED, FEATURES_PER_JOINT) or len(self.frames) < 1:
            raise FormatError(f"signal frames must have shape (F>=1, 3, 18), got {self.frames.shape}")
        self.fps = float(self.fps)

    def __len__(self):
        return len(self.frames)

    @property
    def positions(self):
        return self.frames[..., P]

    @property
    def rotations6d(self):
        return self.frames[..., R]

    @property
    def head_position(self):
        return self.frames[:, 0, P]

    def flat(self):
        """Model input layout, shape (F, 54)."""
        return self.frames.reshape(len(self.frames), SIGNAL_DIM)

    def validate(self):
        if not np.all(np.isfinite(self.frames)):
            raise FormatError("signal contains non-finite values")
        if not is_rotation(sixd_to_matrix(self.frames[..., R]), tol=1e-5):
            raise FormatError("signal rotation blocks do not decode to rotations")
        if not is_rotation(sixd_to_matrix(self.frames[..., W]), tol=1e-5):
            raise FormatError("signal angular-velocity blocks do not decode to rotations")


def velocities(pos, rot, fps):
    """Backward-difference linear velocity and relative-rotation 6D blocks.

    Args:
        pos: (F, K, 3) positions.
        rot: (F, K, 3, 3) global rotations.
    """
    v = np.zeros_like(pos)
    v[1:] = (pos[1:] - pos[:-1]) * fps
    w = identity_sixd(pos.shape[:2])
    if len(pos) > 1:
        w[1:] = matrix_to_sixd(relative_rotation(rot[:-1], rot[1:]), check=False)
    return v, w


def assemble(pos, rot6, v, w):
    return np.concatenate([pos, rot6, v, w], axis=-1)


def build_signal(skel, motion):
    """Conditioning signal computed by FK from a motion sequence."""
    fk = forward_kinematics(skel, motion.local, motion.root_translation)
    idx = list(skel.tracked)
    pos = fk.global_pos[:, idx].copy()
    pos[:, 0] = tracked_head_position(skel, fk)
    rot = fk.global_rot[:, idx]
    v, w = velocities(pos, rot, motion.fps)
    return TrackingSignal(assemble(pos, matrix_to_sixd(rot, check=False), v, w), motion.fps)


def signal_from_poses(pos, rot6, fps):
    """Signal from raw tracked poses (positions + 6D global rotations)."""
    pos = np.asarray(pos, dtype=np.float64)
    rot6 = np.asarray(rot6, dtype=np.float64)
    v, w = velocities(pos, sixd_to_matrix(rot6), fps)
    return TrackingSignal(assemble(pos, rot6, v, w), fps)


# -- device logs ----------------------------------------------------------------


def _pose_columns():
    cols = []
    for pre in DEVICE_PREFIXES:
        cols += [f"{pre}_p{a}" for a in "xyz"] + [f"{pre}_r{i}" for i in range(6)]
    return cols


def _velocity_columns():
    cols = []
    for pre in DEVICE_PREFIXES:
        cols += [f"{pre}_v{a}" for a in "xyz"] + [f"{pre}_w{i}" for i in range(6)]
    return cols


POSE_COLUMNS = ["t"] + _pose_columns()
VELOCITY_COLUMNS = _velocity_columns()


def save_device_log(path, signal, t0=0.0, with_velocities=True):
    cols = POSE_COLUMNS + (VELOCITY_COLUMNS if with_velocities else [])
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(cols)
        for i, fr in enumerate(signal.frames):
            row = [t0 + i / signal.fps]
            for k in range(NUM_TRACKED):
                row += list(fr[k, P]) + list(fr[k, R])
            if with_velocities:
                for k in range(NUM_TRACKED):
                    row += list(fr[k, V]) + list(fr[k, W])
            wr.writerow([repr(float(x)) for x in row])


def load_device_log(path, fps=None):
    """Read a tracking log; velocities are recomputed when absent.

    Raises:
        FormatError: with the offending line number and field name.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty device log")
    header = [h.strip() for h in rows[0]]
    n_pose = len(POSE_COLUMNS)
    has_vel = len(header) > n_pose
    expected = POSE_COLUMNS + (VELOCITY_COLUMNS if has_vel else [])
    for k, col in enumerate(expected):
        if k >= len(header) or header[k] != col:
            raise FormatError(f"{path}:1: header is missing field '{col}' at column {k}")
    if len(header) > len(expected):
        raise FormatError(f"{path}:1: unexpected extra field '{header[len(expected)]}'")
    body = [r for r in rows[1:] if r]
    if not body:
        raise FormatError(f"{path}: no frames")
    data = np.empty((len(body), len(header)))
    for i, r in enumerate(body, start=2):
        if len(r) != len(header):
            field = header[len(r)] if len(r) < len(header) else "<extra>"
            raise FormatError(f"{path}:{i}: expected {len(header)} fields, got {len(r)}; missing field '{field}'")
        for j, x in enumerate(r):
            try:
                data[i - 2, j] = float(x)
            except ValueError:
                raise FormatError(f"{path}:{i}: field '{header[j]}' is not a number: {x!r}") from None
    t = data[:, 0]
    if np.any(np.diff(t) <= 0):
        raise FormatError(f"{path}: timestamps must be strictly increasing")
    if fps is None:
        fps = 1.0 / float(np.median(np.diff(t))) if len(t) > 1 else 60.0
    pose = data[:, 1:n_pose].reshape(-1, NUM_TRACKED, 9)
    if has_vel:
        vel = data[:, n_pose:].reshape(-1, NUM_TRACKED, 9)
        frames = np.concatenate([pose, vel], axis=-1)
        return TrackingSignal(frames, fps)
    return signal_from_poses(pose[..., :3], pose[..., 3:], fps)
