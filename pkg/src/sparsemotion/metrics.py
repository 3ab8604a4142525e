"""Evaluation metrics for synthesized full-body motion.

Units: rotations in degrees, positions in cm, velocities in cm/s and jitter
in km/s^3.  Finite differences are backward, as in the conditioning signal.

Joint groups (SMPL indices)::

    hand  = left/right wrist (20, 21)
    lower = pelvis, hips, knees, ankles, feet (0, 1, 2, 4, 5, 7, 8, 10, 11)
    upper = the remaining 13 joints
"""

from dataclasses import asdict, dataclass

import numpy as np

from .errors import LengthMismatch, ShapeMismatch, TooShort
from .rotmath import geodesic_angle_deg, sixd_to_matrix
from .skeleton import NUM_JOINTS, forward_kinematics

DEFAULT_CONTACT_THRESHOLD = 0.10  # m/s

LOWER = (0, 1, 2, 4, 5, 7, 8, 10, 11)
UPPER = tuple(j for j in range(NUM_JOINTS) if j not in LOWER)
HAND = (20, 21)
FEET = (7, 8, 10, 11)


@dataclass(frozen=True)
class JointGroups:
    hand: tuple = HAND
    upper: tuple = UPPER
    lower: tuple = LOWER
    feet: tuple = FEET


@dataclass
class MetricsReport:
    mpjre: float
    mpjpe: float
    mpjve: float
    jitter: float
    hand_pe: float
    upper_pe: float
    lower_pe: float
    fc_acc: float
    frames: int
    joints: int = NUM_JOINTS

    COLUMNS = ("jitter", "mpjve", "mpjpe", "hand_pe", "upper_pe", "lower_pe", "mpjre", "fc_acc")
    HEADERS = ("Jitter", "MPJVE", "MPJPE", "Hand PE", "Upper PE", "Lower PE", "MPJRE", "FCAcc")

    def to_dict(self):
        return asdict(self)

    def table(self, label="pred"):
        head = "| Method | " + " | ".join(self.HEADERS) + " |"
        sep = "|---" * (len(self.HEADERS) + 1) + "|"
        row = f"| {label} | " + " | ".join(f"{getattr(self, c):.2f}" for c in self.COLUMNS) + " |"
        return "\n".join([head, sep, row])


def _check_pair(pred, gt):
    if pred.num_frames != gt.num_frames:
        raise LengthMismatch(f"frame counts differ: {pred.num_frames} vs {gt.num_frames}")


def global_positions(skel, seq):
    return forward_kinematics(skel, seq.local, seq.root_translation).global_pos


def mpjre(pred, gt):
    """Mean geodesic angle between local joint rotations, degrees."""
    _check_pair(pred, gt)
    return float(np.mean(geodesic_angle_deg(sixd_to_matrix(pred.local), sixd_to_matrix(gt.local), check=False)))


def position_errors(pred_pos, gt_pos, groups=JointGroups()):
    d = np.linalg.norm(pred_pos - gt_pos, axis=-1) * 100.0
    return {
        "mpjpe": float(d.mean()),
        "hand_pe": float(d[:, list(groups.hand)].mean()),
        "upper_pe": float(d[:, list(groups.upper)].mean()),
        "lower_pe": float(d[:, list(groups.lower)].mean()),
    }


def mpjpe_suite(skel, pred, gt, groups=JointGroups()):
    _check_pair(pred, gt)
    return position_errors(global_positions(skel, pred), global_positions(skel, gt), groups)


def velocity(pos, fps):
    return (pos[1:] - pos[:-1]) * fps


def mpjve_from_positions(pred_pos, gt_pos, fps):
    if len(pred_pos) < 2:
        raise TooShort("velocity error needs at least 2 frames")
    return float(np.linalg.norm(velocity(pred_pos, fps) - velocity(gt_pos, fps), axis=-1).mean() * 100.0)


def mpjve(skel, pred, gt):
    _check_pair(pred, gt)
    if pred.fps != gt.fps:
        raise LengthMismatch("frame rates differ")
    return mpjve_from_positions(global_positions(skel, pred), global_positions(skel, gt), pred.fps)


def jitter_from_positions(pos, fps):
    """Mean norm of the third backward difference times fps^3, in km/s^3."""
    if len(pos) < 4:
        raise TooShort("jitter needs at least 4 frames")
    jerk = (pos[3:] - 3 * pos[2:-1] + 3 * pos[1:-2] - pos[:-3]) * fps**3
    return float(np.linalg.norm(jerk, axis=-1).mean() / 1000.0)


def jitter(skel, seq):
    return jitter_from_positions(global_positions(skel, seq), seq.fps)


def contacts_from_positions(pos, feet, fps, threshold=DEFAULT_CONTACT_THRESHOLD):
    """(F, len(feet)) booleans: foot speed below threshold; frame 0 copies frame 1."""
    if len(pos) < 2:
        raise TooShort("foot contacts need at least 2 frames")
    speed = np.linalg.norm(velocity(pos[:, list(feet)], fps), axis=-1)
    c = speed < threshold
    return np.concatenate([c[:1], c], axis=0)


def foot_contacts(skel, seq, feet=FEET, threshold=DEFAULT_CONTACT_THRESHOLD):
    return contacts_from_positions(global_positions(skel, seq), feet, seq.fps, threshold)


def fc_accuracy(pred_contacts, gt_contacts):
    """Balanced accuracy (TPR + TNR) / 2 in percent, contact = positive class.

    When ground truth lacks one class, that class's rate counts as 1 if the
    present class is predicted perfectly; otherwise the score is the rate of
    the present class alone.
    """
    p = np.asarray(pred_contacts, dtype=bool)
    g = np.asarray(gt_contacts, dtype=bool)
    if p.shape != g.shape:
        raise ShapeMismatch(f"contact arrays differ in shape: {p.shape} vs {g.shape}")
    pos, neg = g.sum(), (~g).sum()
    tpr = (p & g).sum() / pos if pos else None
    tnr = (~p & ~g).sum() / neg if neg else None
    if tpr is None and tnr is None:
        return 100.0
    if tpr is None:
        tpr = 1.0 if tnr == 1.0 else tnr
    if tnr is None:
        tnr = 1.0 if tpr == 1.0 else tpr
    return float((tpr + tnr) / 2 * 100.0)


def evaluate(skel, pred, gt, groups=JointGroups(), threshold=DEFAULT_CONTACT_THRESHOLD):
    """Full metric suite comparing a predicted motion to ground truth."""
    _check_pair(pred, gt)
    if pred.fps != gt.fps:
        raise LengthMismatch("frame rates differ")
    pp, gp = global_positions(skel, pred), global_positions(skel, gt)
    pe = position_errors(pp, gp, groups)
    F = pred.num_frames
    return MetricsReport(
        mpjre=mpjre(pred, gt),
        mpjpe=pe["mpjpe"],
        mpjve=mpjve_from_positions(pp, gp, pred.fps) if F >= 2 else 0.0,
        jitter=jitter_from_positions(pp, pred.fps) if F >= 4 else 0.0,
        hand_pe=pe["hand_pe"],
        upper_pe=pe["upper_pe"],
        lower_pe=pe["lower_pe"],
        fc_acc=fc_accuracy(
            contacts_from_positions(pp, groups.feet, pred.fps, threshold),
            contacts_from_positions(gp, groups.feet, gt.fps, threshold),
        )
        if F >= 2
        else 100.0,
        frames=F,
    )
