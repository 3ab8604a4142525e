import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from sparsemotion.errors import FormatError
from sparsemotion.rotmath import identity_sixd, matrix_to_sixd
from sparsemotion.skeleton import (
    NUM_JOINTS,
    SkeletonDef,
    default_skeleton,
    forward_kinematics,
    load_skeleton,
    save_skeleton,
    solve_root_translation,
    tracked_head_position,
)

SKEL = default_skeleton()


def random_pose(seed, n=None):
    shape = (NUM_JOINTS,) if n is None else (n, NUM_JOINTS)
    R = Rotation.random(int(np.prod(shape)), random_state=seed).as_matrix().reshape(shape + (3, 3))
    return matrix_to_sixd(R)


def homogeneous_fk_oracle(skel, local6, root):
    """Recursive composition of 4x4 transforms, one joint at a time."""
    from sparsemotion.rotmath import sixd_to_matrix

    cache = {}

    def world(j):
        if j in cache:
            return cache[j]
        T = np.eye(4)
        T[:3, :3] = sixd_to_matrix(local6[j])
        if j == 0:
            T[:3, 3] = root
            M = T
        else:
            T[:3, 3] = skel.offset[j]
            M = world(skel.parent[j]) @ T
        cache[j] = M
        return M

    Ms = [world(j) for j in range(NUM_JOINTS)]
    return np.stack([M[:3, :3] for M in Ms]), np.stack([M[:3, 3] for M in Ms])


class TestDefaultSkeleton:
    def test_tree(self):
        assert SKEL.parent[0] == -1
        assert all(0 <= SKEL.parent[j] < j for j in range(1, NUM_JOINTS))

    def test_named_indices(self):
        assert [SKEL.names[i] for i in SKEL.tracked] == ["head", "left_wrist", "right_wrist"]
        assert SKEL.tracked == (15, 20, 21)
        assert SKEL.feet == (7, 8, 10, 11)

    def test_head_chain(self):
        chain = SKEL.chain(SKEL.head)
        assert chain == [0, 3, 6, 9, 12, 15]
        total = np.sum([SKEL.offset[j] for j in chain], axis=0)
        # documented rest head position (meters) and summed bone length
        np.testing.assert_allclose(total, [0.005, 0.619, 0.009], atol=1e-12)
        bone_len = sum(np.linalg.norm(SKEL.offset[j]) for j in chain)
        assert bone_len == pytest.approx(0.64418, abs=1e-5)

    def test_immutable(self):
        with pytest.raises(ValueError):
            SKEL.offset[0, 0] = 1.0

    def test_file_round_trip(self, tmp_path):
        p = tmp_path / "skel.json"
        save_skeleton(p, SKEL)
        back = load_skeleton(p)
        assert back.parent == SKEL.parent
        np.testing.assert_array_equal(back.offset, SKEL.offset)
        assert back.digest() == SKEL.digest()

    def test_rejects_cycle(self, tmp_path):
        d = SKEL.to_dict()
        d["parent"][3] = 5
        with pytest.raises(FormatError):
            SkeletonDef.from_dict(d)

    def test_rejects_missing_field(self):
        d = SKEL.to_dict()
        del d["offset"]
        with pytest.raises(FormatError, match="offset"):
            SkeletonDef.from_dict(d)


class TestForwardKinematics:
    def test_identity_chain(self):
        fk = forward_kinematics(SKEL, identity_sixd((NUM_JOINTS,)), np.zeros(3))
        for j in range(NUM_JOINTS):
            expected = np.sum([SKEL.offset[k] for k in SKEL.chain(j)], axis=0)
            np.testing.assert_allclose(fk.global_pos[j], expected, atol=1e-15)

    def test_translation_shift(self):
        local = identity_sixd((NUM_JOINTS,))
        a = forward_kinematics(SKEL, local, np.zeros(3)).global_pos
        b = forward_kinematics(SKEL, local, np.array([1.0, 2.0, 3.0])).global_pos
        np.testing.assert_allclose(b - a, np.tile([1.0, 2.0, 3.0], (NUM_JOINTS, 1)), atol=1e-15)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_homogeneous_oracle(self, seed):
        local = random_pose(seed)
        root = np.random.default_rng(seed).normal(size=3)
        fk = forward_kinematics(SKEL, local, root)
        G, P = homogeneous_fk_oracle(SKEL, local, root)
        np.testing.assert_allclose(fk.global_rot, G, atol=1e-9)
        np.testing.assert_allclose(fk.global_pos, P, atol=1e-9)

    def test_root_equivariance(self):
        local = random_pose(20)
        root = np.array([0.3, 0.9, -0.2])
        R = Rotation.random(random_state=21).as_matrix()
        fk = forward_kinematics(SKEL, local, root)
        turned = local.copy()
        turned[0] = matrix_to_sixd(R @ fk.global_rot[0])
        fk2 = forward_kinematics(SKEL, turned, R @ root)
        np.testing.assert_allclose(fk2.global_pos, fk.global_pos @ R.T, atol=1e-9)
        np.testing.assert_allclose(fk2.global_rot, R @ fk.global_rot, atol=1e-9)

    def test_linear_in_translation(self):
        local = random_pose(22)
        a, b = np.array([0.1, 0.2, 0.3]), np.array([-1.0, 0.5, 2.0])
        p0 = forward_kinematics(SKEL, local, np.zeros(3)).global_pos
        pa = forward_kinematics(SKEL, local, a).global_pos
        pb = forward_kinematics(SKEL, local, b).global_pos
        pab = forward_kinematics(SKEL, local, 2 * a + 3 * b).global_pos
        np.testing.assert_allclose(pab - p0, 2 * (pa - p0) + 3 * (pb - p0), atol=1e-12)

    def test_batched(self):
        local = random_pose(23, n=7)
        roots = np.random.default_rng(23).normal(size=(7, 3))
        fk = forward_kinematics(SKEL, local, roots)
        for i in range(7):
            np.testing.assert_allclose(fk.global_pos[i], forward_kinematics(SKEL, local[i], roots[i]).global_pos)


class TestRootSolve:
    def test_rest_head(self):
        local = identity_sixd((NUM_JOINTS,))
        head = SKEL.rest_positions()[SKEL.head]
        np.testing.assert_allclose(solve_root_translation(SKEL, local, head), np.zeros(3), atol=1e-15)

    def test_lifted_head(self):
        local = identity_sixd((NUM_JOINTS,))
        head = SKEL.rest_positions()[SKEL.head] + [0, 0, 1]
        np.testing.assert_allclose(solve_root_translation(SKEL, local, head), [0, 0, 1], atol=1e-15)

    def test_random_residual(self):
        rng = np.random.default_rng(30)
        local = random_pose(30, n=50)
        target = rng.normal(size=(50, 3))
        t = solve_root_translation(SKEL, local, target)
        fk = forward_kinematics(SKEL, local, t)
        assert np.abs(fk.global_pos[:, SKEL.head] - target).max() < 1e-9

    def test_device_offset(self):
        skel = SkeletonDef(SKEL.parent, SKEL.offset, head_device_offset=[0.0, 0.1, 0.08])
        local = random_pose(31)
        target = np.array([0.2, 1.7, 0.4])
        fk = forward_kinematics(skel, local, solve_root_translation(skel, local, target))
        np.testing.assert_allclose(tracked_head_position(skel, fk), target, atol=1e-12)
