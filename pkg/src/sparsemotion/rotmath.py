"""Rotation representations: 6D, rotation matrices and axis-angle.

All functions are vectorised over leading dimensions and work in float64.

The 6D layout is the first two *columns* of the rotation matrix,
concatenated: ``[R[:, 0], R[:, 1]]``.  Decoding applies Gram-Schmidt to the
two columns and completes the frame with a cross product.
"""

import numpy as np

from .errors import DegenerateInput, NotARotation

DEGENERATE_EPS = 1e-8
ORTHO_TOL = 1e-6


def _as_f64(x):
    return np.asarray(x, dtype=np.float64)


def sixd_to_matrix(r6):
    """Decode 6D rotations of shape (..., 6) to matrices of shape (..., 3, 3).

    Raises:
        DegenerateInput: if the first column is (near) zero or the two
            columns are (near) parallel.
    """
    r6 = _as_f64(r6)
    if r6.shape[-1] != 6:
        raise ValueError(f"expected trailing dimension 6, got {r6.shape}")
    a, b = r6[..., :3], r6[..., 3:]
    na = np.linalg.norm(a, axis=-1, keepdims=True)
    if np.any(na < DEGENERATE_EPS):
        raise DegenerateInput("first 6D column has (near) zero norm")
    c1 = a / na
    b_orth = b - np.sum(c1 * b, axis=-1, keepdims=True) * c1
    nb = np.linalg.norm(b_orth, axis=-1, keepdims=True)
    if np.any(nb < DEGENERATE_EPS):
        raise DegenerateInput("6D columns are (near) parallel")
    c2 = b_orth / nb
    c3 = np.cross(c1, c2)
    return np.stack([c1, c2, c3], axis=-1)


def is_rotation(R, tol=ORTHO_TOL):
    R = _as_f64(R)
    if R.shape[-2:] != (3, 3) or not np.all(np.isfinite(R)):
        return False
    eye = np.eye(3)
    ortho = np.abs(np.swapaxes(R, -1, -2) @ R - eye).max(initial=0.0) <= tol
    det = np.abs(np.linalg.det(R) - 1.0).max(initial=0.0) <= tol
    return bool(ortho and det)


def check_rotation(R, tol=ORTHO_TOL):
    if not is_rotation(R, tol):
        raise NotARotation("input is not an orthonormal matrix with det +1")


def matrix_to_sixd(R, check=True):
    """Encode rotation matrices (..., 3, 3) as 6D vectors (..., 6)."""
    R = _as_f64(R)
    if check:
        check_rotation(R)
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def _skew(v):
    z = np.zeros(v.shape[:-1])
    x, y, w = v[..., 0], v[..., 1], v[..., 2]
    return np.stack(
        [
            np.stack([z, -w, y], -1),
            np.stack([w, z, -x], -1),
            np.stack([-y, x, z], -1),
        ],
        -2,
    )


def axis_angle_to_matrix(aa):
    """Rodrigues' formula for axis-angle vectors of shape (..., 3)."""
    aa = _as_f64(aa)
    theta = np.linalg.norm(aa, axis=-1)[..., None, None]
    K = _skew(aa)
    K2 = K @ K
    small = theta < 1e-6
    safe = np.where(small, 1.0, theta)
    # Taylor expansions below 1e-6 keep full double precision
    s = np.where(small, 1.0 - theta**2 / 6.0, np.sin(safe) / safe)
    c = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(safe)) / safe**2)
    return np.eye(3) + s * K + c * K2


def _matrix_to_quaternion(R):
    """Shepperd's method, scalar-first, with w >= 0."""
    m00, m11, m22 = R[..., 0, 0], R[..., 1, 1], R[..., 2, 2]
    tr = m00 + m11 + m22
    cand = np.stack(
        [
            1.0 + tr,
            1.0 + m00 - m11 - m22,
            1.0 - m00 + m11 - m22,
            1.0 - m00 - m11 + m22,
        ],
        -1,
    )
    k = np.argmax(cand, axis=-1)
    q = np.empty(R.shape[:-2] + (4,))
    d21 = R[..., 2, 1] - R[..., 1, 2]
    d02 = R[..., 0, 2] - R[..., 2, 0]
    d10 = R[..., 1, 0] - R[..., 0, 1]
    s01 = R[..., 0, 1] + R[..., 1, 0]
    s02 = R[..., 0, 2] + R[..., 2, 0]
    s12 = R[..., 1, 2] + R[..., 2, 1]
    rows = [
        np.stack([cand[..., 0], d21, d02, d10], -1),
        np.stack([d21, cand[..., 1], s01, s02], -1),
        np.stack([d02, s01, cand[..., 2], s12], -1),
        np.stack([d10, s02, s12, cand[..., 3]], -1),
    ]
    for i in range(4):
        sel = k == i
        denom = 2.0 * np.sqrt(np.maximum(cand[..., i], 0.0))
        q[sel] = rows[i][sel] / denom[sel][..., None]
    q = np.where(q[..., :1] < 0, -q, q)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def matrix_to_axis_angle(R):
    """Inverse of :func:`axis_angle_to_matrix`; angle in [0, pi].

    At exactly pi the axis sign is ambiguous; the axis whose first nonzero
    component is positive is returned.
    """
    R = _as_f64(R)
    q = _matrix_to_quaternion(R)
    w, v = q[..., 0], q[..., 1:]
    nv = np.linalg.norm(v, axis=-1)
    angle = 2.0 * np.arctan2(nv, w)
    small = nv < 1e-12
    # 2*atan2(n, w)/n -> 2/w as n -> 0
    scale = np.where(small, 2.0 / np.where(w == 0, 1.0, w), angle / np.where(small, 1.0, nv))
    aa = v * scale[..., None]

    at_pi = np.abs(w) < 1e-12
    if np.any(at_pi):
        flat = aa.reshape(-1, 3)
        for i in np.flatnonzero(at_pi.reshape(-1)):
            nz = np.flatnonzero(np.abs(flat[i]) > 1e-12)
            if nz.size and flat[i, nz[0]] < 0:
                flat[i] = -flat[i]
        aa = flat.reshape(aa.shape)
    return aa


def geodesic_angle_deg(R1, R2, check=True):
    """Angle of the relative rotation R1^T R2, in degrees within [0, 180]."""
    R1, R2 = _as_f64(R1), _as_f64(R2)
    if check:
        check_rotation(R1)
        check_rotation(R2)
    R = np.swapaxes(R1, -1, -2) @ R2
    tr = np.trace(R, axis1=-2, axis2=-1)
    # atan2 of the skew part stays accurate near 0 and 180 degrees
    w = np.stack([R[..., 2, 1] - R[..., 1, 2], R[..., 0, 2] - R[..., 2, 0], R[..., 1, 0] - R[..., 0, 1]], -1)
    return np.degrees(np.arctan2(np.linalg.norm(w, axis=-1) / 2.0, (tr - 1.0) / 2.0))


def relative_rotation(R_prev, R_cur):
    """Rotation taking the previous frame to the current one: R_prev^T R_cur."""
    return np.swapaxes(_as_f64(R_prev), -1, -2) @ _as_f64(R_cur)


def identity_sixd(shape=()):
    out = np.zeros(tuple(shape) + (6,))
    out[..., 0] = 1.0
    out[..., 4] = 1.0
    return out


def renormalize_sixd(r6):
    """Project arbitrary 6D vectors onto the valid set via decode/encode."""
    return matrix_to_sixd(sixd_to_matrix(r6), check=False)
