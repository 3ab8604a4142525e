"""Procedural motion generator used as a desk-scale stand-in for MoCap data.

Every kind is a smooth function of a cycle phase.  Per-seed variation covers
amplitude, cycle period, phase and a global heading about the vertical axis.
Conventions: y up, the character faces +z in its rest pose.

``walk_cycle`` is walking in place: each leg lifts during one half of the
cycle while the other stays planted, and the arms swing in counter-phase, so
the tracked wrists disclose the gait phase.
"""

import numpy as np

from .data_io import MotionSequence, to_float32_grid
from .rotmath import matrix_to_sixd
from .skeleton import NUM_JOINTS, default_skeleton, forward_kinematics_mats

KINDS = ("idle_sway", "walk_cycle", "arm_wave", "squat")

# base cycle period (s) and per-kind amplitude table (radians)
PERIODS = {"idle_sway": 4.0, "walk_cycle": 1.1, "arm_wave": 1.6, "squat": 3.0}
AMPLITUDES = {
    "idle_sway": {"pelvis_yaw": 0.06, "spine_roll": 0.05, "head_nod": 0.12, "arm": 0.15},
    "walk_cycle": {"hip": 0.75, "knee": 1.2, "ankle": 0.3, "arm": 0.55, "elbow": 0.35, "twist": 0.08},
    "arm_wave": {"raise": 2.3, "wave": 0.6, "other_arm": 0.2, "head": 0.1},
    "squat": {"hip": 1.1, "knee": 2.0, "arm": 1.2, "spine": 0.25},
}
ARMS_DOWN = 1.2  # shoulder abduction that brings T-pose arms to the sides

J = {name: i for i, name in enumerate(default_skeleton().names)}


def _rot(axis, angle):
    angle = np.asarray(angle, dtype=np.float64)
    c, s = np.cos(angle), np.sin(angle)
    o, z = np.ones_like(angle), np.zeros_like(angle)
    if axis == "x":
        rows = [[o, z, z], [z, c, -s], [z, s, c]]
    elif axis == "y":
        rows = [[c, z, s], [z, o, z], [-s, z, c]]
    else:
        rows = [[c, -s, z], [s, c, z], [z, z, o]]
    return np.stack([np.stack(r, -1) for r in rows], -2)


def _lift(phase):
    """C2-smooth bump that is nonzero only on the first half of each cycle."""
    s = np.sin(phase)
    return np.where(s > 0, s, 0.0) ** 3


def synth_motion(kind, duration_s=10.0, fps=60.0, seed=0, amplitude=1.0, skel=None, period=None):
    """Generate a deterministic synthetic motion.

    Args:
        kind: one of ``KINDS``.
        duration_s: clip length in seconds.
        fps: frame rate.
        seed: per-clip variation seed.
        amplitude: global multiplier on the amplitude table; 0 gives a
            constant pose.
        period: cycle period override in seconds.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown motion kind {kind!r}; expected one of {KINDS}")
    skel = skel or default_skeleton()
    rng = np.random.default_rng([seed, KINDS.index(kind)])
    amp_jitter = rng.uniform(0.85, 1.15)
    per = period if period is not None else PERIODS[kind] * rng.uniform(0.9, 1.1)
    phase0 = rng.uniform(0, 2 * np.pi)
    heading = rng.uniform(-np.pi, np.pi)

    F = int(round(duration_s * fps))
    t = np.arange(F) / fps
    ph = 2 * np.pi * t / per + phase0
    A = {k: v * amplitude * amp_jitter for k, v in AMPLITUDES[kind].items()}

    R = np.broadcast_to(np.eye(3), (F, NUM_JOINTS, 3, 3)).copy()
    l_arm = _rot("z", -ARMS_DOWN * np.ones(F))
    r_arm = _rot("z", ARMS_DOWN * np.ones(F))

    if kind == "idle_sway":
        R[:, J["pelvis"]] = _rot("y", A["pelvis_yaw"] * np.sin(ph))
        R[:, J["spine2"]] = _rot("z", A["spine_roll"] * np.sin(ph + 1.0))
        R[:, J["head"]] = _rot("x", A["head_nod"] * np.sin(2 * ph))
        R[:, J["left_shoulder"]] = _rot("x", A["arm"] * np.sin(ph)) @ l_arm
        R[:, J["right_shoulder"]] = _rot("x", -A["arm"] * np.sin(ph)) @ r_arm
    elif kind == "walk_cycle":
        lift_l, lift_r = _lift(ph), _lift(ph + np.pi)
        for side, lift in (("left", lift_l), ("right", lift_r)):
            R[:, J[f"{side}_hip"]] = _rot("x", -A["hip"] * lift)
            R[:, J[f"{side}_knee"]] = _rot("x", A["knee"] * lift)
            R[:, J[f"{side}_ankle"]] = _rot("x", -A["ankle"] * lift)
        swing = A["arm"] * np.sin(ph)
        R[:, J["left_shoulder"]] = _rot("x", swing) @ l_arm
        R[:, J["right_shoulder"]] = _rot("x", -swing) @ r_arm
        R[:, J["left_elbow"]] = _rot("y", A["elbow"] * (1 + np.sin(ph)) / 2)
        R[:, J["right_elbow"]] = _rot("y", -A["elbow"] * (1 - np.sin(ph)) / 2)
        R[:, J["spine3"]] = _rot("y", A["twist"] * np.sin(ph))
    elif kind == "arm_wave":
        raise_ = A["raise"] * (0.8 + 0.2 * np.sin(0.5 * ph))
        R[:, J["right_shoulder"]] = _rot("z", -raise_) @ r_arm
        R[:, J["right_elbow"]] = _rot("z", A["wave"] * np.sin(2 * ph))
        R[:, J["right_wrist"]] = _rot("x", 0.5 * A["wave"] * np.sin(2 * ph + 0.7))
        R[:, J["left_shoulder"]] = _rot("x", A["other_arm"] * np.sin(ph)) @ l_arm
        R[:, J["head"]] = _rot("y", A["head"] * np.sin(ph))
    elif kind == "squat":
        depth = (1 - np.cos(ph)) / 2
        for side in ("left", "right"):
            R[:, J[f"{side}_hip"]] = _rot("x", -A["hip"] * depth)
            R[:, J[f"{side}_knee"]] = _rot("x", A["knee"] * depth)
            R[:, J[f"{side}_ankle"]] = _rot("x", (A["hip"] - A["knee"]) * depth)
        R[:, J["spine1"]] = _rot("x", A["spine"] * depth)
        R[:, J["left_shoulder"]] = _rot("x", -A["arm"] * depth) @ l_arm
        R[:, J["right_shoulder"]] = _rot("x", -A["arm"] * depth) @ r_arm

    rest = skel.rest_positions()
    ground = -min(rest[i, 1] for i in skel.feet)
    root = np.tile([0.0, ground, 0.0], (F, 1))
    if kind == "squat":
        # keep the ankle midpoint planted while the hips descend
        fk = forward_kinematics_mats(skel, R, np.zeros((F, 3)))
        feet = fk.global_pos[:, [J["left_ankle"], J["right_ankle"]]].mean(axis=1)
        root -= feet - feet[:1]

    yaw = _rot("y", heading)
    R[:, 0] = yaw @ R[:, 0]
    root = root @ yaw.T

    local = to_float32_grid(matrix_to_sixd(R, check=False))
    meta = {
        "kind": kind,
        "seed": int(seed),
        "subject": f"synthetic-{kind}-{seed}",
        "source": "synthetic",
        "skeleton": skel.digest(),
        "period_s": float(per),
    }
    return MotionSequence(local, to_float32_grid(root), fps, meta)
