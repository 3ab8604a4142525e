"""Motion container format, dataset manifests and external-archive conversion.

Motion container layout (all little-endian)::

    offset  size  field
    0       4     magic b"SMMO"
    4       2     uint16 format version (1)
    6       2     uint16 joint count J (22)
    8       8     float64 fps
    16      4     uint32 frame count F
    20      4     uint32 metadata length M (bytes)
    24      M     UTF-8 JSON object: {"skeleton": str, "subject": str, "source": str, ...}
    24+M    F*J*6*4   float32 local 6D rotations, row-major (frame, joint, component)
    ...     F*3*4     float32 root translation, row-major (frame, xyz), meters

Arrays are held in memory as float64; values written are rounded to float32,
so a load returns exactly the float32-representable values.
"""

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyDirectory, FormatError, VersionError
from .rotmath import axis_angle_to_matrix, is_rotation, matrix_to_sixd, sixd_to_matrix
from .skeleton import NUM_JOINTS

MAGIC = b"SMMO"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHHdII")
MOTION_SUFFIX = ".smm"


@dataclass
class MotionSequence:
    """Per-frame local 6D joint rotations plus root translation."""

    local: np.ndarray  # (F, 22, 6)
    root_translation: np.ndarray  # (F, 3), meters
    fps: float = 60.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.local = np.asarray(self.local, dtype=np.float64)
        self.root_translation = np.asarray(self.root_translation, dtype=np.float64)
        self.fps = float(self.fps)
        F = self.local.shape[0] if self.local.ndim else 0
        if self.local.shape != (F, NUM_JOINTS, 6) or F < 1:
            raise FormatError(f"local rotations must have shape (F>=1, {NUM_JOINTS}, 6), got {self.local.shape}")
        if self.root_translation.shape != (F, 3):
            raise FormatError(f"root translation must have shape ({F}, 3), got {self.root_translation.shape}")
        if not self.fps > 0:
            raise FormatError("fps must be positive")

    @property
    def num_frames(self):
        return self.local.shape[0]

    def __len__(self):
        return self.num_frames

    def rotations(self):
        return sixd_to_matrix(self.local)

    def validate(self):
        if not (np.all(np.isfinite(self.local)) and np.all(np.isfinite(self.root_translation))):
            raise FormatError("motion contains non-finite values")
        if not is_rotation(self.rotations(), tol=1e-5):
            raise FormatError("motion contains invalid rotations")

    def slice(self, start, stop):
        return MotionSequence(self.local[start:stop], self.root_translation[start:stop], self.fps, dict(self.metadata))

    def reversed(self):
        return MotionSequence(self.local[::-1].copy(), self.root_translation[::-1].copy(), self.fps, dict(self.metadata))

    def window_features(self):
        """Flattened local rotations, shape (F, 132)."""
        return self.local.reshape(self.num_frames, NUM_JOINTS * 6)

    def equals(self, other):
        return (
            self.fps == other.fps
            and self.metadata == other.metadata
            and np.array_equal(self.local, other.local)
            and np.array_equal(self.root_translation, other.root_translation)
        )


def to_float32_grid(x):
    return np.asarray(x, dtype=np.float32).astype(np.float64)


def encode_motion(seq):
    meta = json.dumps(seq.metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, NUM_JOINTS, seq.fps, seq.num_frames, len(meta))
    return b"".join(
        [
            header,
            meta,
            np.ascontiguousarray(seq.local, dtype="<f4").tobytes(),
            np.ascontiguousarray(seq.root_translation, dtype="<f4").tobytes(),
        ]
    )


def decode_motion(buf, name="<bytes>"):
    if len(buf) < _HEADER.size:
        raise FormatError(f"{name}: truncated header ({len(buf)} bytes)")
    magic, version, joints, fps, F, mlen = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"{name}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise VersionError(f"{name}: unsupported container version {version}")
    if joints != NUM_JOINTS:
        raise FormatError(f"{name}: expected {NUM_JOINTS} joints, found {joints}")
    off = _HEADER.size
    n_local = F * joints * 6 * 4
    n_root = F * 3 * 4
    if len(buf) != off + mlen + n_local + n_root:
        raise FormatError(f"{name}: size {len(buf)} does not match header (F={F}, metadata={mlen})")
    try:
        meta = json.loads(buf[off : off + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{name}: unreadable metadata ({exc})") from exc
    off += mlen
    local = np.frombuffer(buf, dtype="<f4", count=F * joints * 6, offset=off).reshape(F, joints, 6)
    off += n_local
    root = np.frombuffer(buf, dtype="<f4", count=F * 3, offset=off).reshape(F, 3)
    return MotionSequence(local.astype(np.float64), root.astype(np.float64), fps, meta)


def atomic_write_bytes(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_motion(path, seq):
    atomic_write_bytes(path, encode_motion(seq))


def load_motion(path):
    return decode_motion(Path(path).read_bytes(), name=str(path))


# -- manifests ---------------------------------------------------------------

SPLITS = ("train", "val", "test")


@dataclass
class DatasetManifest:
    splits: dict  # split name -> list of relative paths
    skeleton: str = "default"
    root: str = "."

    def paths(self, split):
        base = Path(self.root)
        return [base / p for p in self.splits.get(split, [])]

    def validate(self):
        seen = {}
        for name, items in self.splits.items():
            for p in items:
                if p in seen:
                    raise FormatError(f"{p} appears in both '{seen[p]}' and '{name}' splits")
                seen[p] = name

    def to_dict(self):
        return {"version": 1, "skeleton": self.skeleton, "splits": {k: list(v) for k, v in self.splits.items()}}


def make_manifest(directory, split_ratios=(0.8, 0.1, 0.1), seed=0, skeleton="default"):
    """Seeded split of the motion files in ``directory``, by whole sequence."""
    if abs(sum(split_ratios) - 1.0) > 1e-9 or len(split_ratios) != len(SPLITS):
        raise ValueError("split ratios must be three numbers summing to 1")
    files = sorted(p.name for p in Path(directory).glob(f"*{MOTION_SUFFIX}"))
    if not files:
        raise EmptyDirectory(f"no {MOTION_SUFFIX} files in {directory}")
    order = np.random.default_rng(seed).permutation(len(files))
    n = len(files)
    counts = [int(round(r * n)) for r in split_ratios[:-1]]
    counts.append(n - sum(counts))
    splits, start = {}, 0
    for name, c in zip(SPLITS, counts):
        splits[name] = sorted(files[i] for i in order[start : start + c])
        start += c
    man = DatasetManifest(splits, skeleton=skeleton, root=str(directory))
    man.validate()
    return man


def save_manifest(path, man):
    Path(path).write_text(json.dumps(man.to_dict(), indent=2) + "\n")


def load_manifest(path):
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not a JSON document ({exc})") from exc
    if "splits" not in d:
        raise FormatError(f"{path}: manifest is missing field 'splits'")
    man = DatasetManifest(d["splits"], skeleton=d.get("skeleton", "default"), root=str(path.parent))
    man.validate()
    return man


# -- external archives ---------------------------------------------------------


def resample_indices(num_frames, src_fps, dst_fps):
    """Nearest-frame decimation indices (no rotation interpolation)."""
    duration = (num_frames - 1) / src_fps
    n_out = int(np.floor(duration * dst_fps + 1e-9)) + 1
    idx = np.rint(np.arange(n_out) * src_fps / dst_fps).astype(int)
    return np.minimum(idx, num_frames - 1)


def from_axis_angle(poses, trans, src_fps, dst_fps=60.0, metadata=None):
    """Convert an external archive clip to a MotionSequence.

    Args:
        poses: (F, >=66) axis-angle parameters; the first 22 joints are used.
        trans: (F, 3) root translation in meters.
    """
    poses = np.asarray(poses, dtype=np.float64)
    aa = poses[:, : NUM_JOINTS * 3].reshape(-1, NUM_JOINTS, 3)
    idx = resample_indices(len(aa), src_fps, dst_fps)
    local = matrix_to_sixd(axis_angle_to_matrix(aa[idx]), check=False)
    return MotionSequence(local, np.asarray(trans, dtype=np.float64)[idx], dst_fps, dict(metadata or {}))
