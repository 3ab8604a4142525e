import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from sparsemotion.conditioning import (
    SIGNAL_DIM,
    TrackingSignal,
    build_signal,
    load_device_log,
    save_device_log,
    signal_from_poses,
)
from sparsemotion.data_io import MotionSequence
from sparsemotion.errors import FormatError
from sparsemotion.rotmath import identity_sixd, matrix_to_sixd, sixd_to_matrix
from sparsemotion.skeleton import default_skeleton, forward_kinematics
from sparsemotion.synth import synth_motion

SKEL = default_skeleton()
IDENT6 = np.array([1, 0, 0, 0, 1, 0], float)


def static_motion(F=5):
    return MotionSequence(identity_sixd((F, 22)), np.tile([0, 0.9, 0], (F, 1)), 60.0)


class TestBuildSignal:
    def test_static(self):
        sig = build_signal(SKEL, static_motion())
        assert sig.flat().shape == (5, SIGNAL_DIM)
        np.testing.assert_array_equal(sig.frames[..., 9:12], 0.0)
        np.testing.assert_allclose(sig.frames[..., 12:18], np.broadcast_to(IDENT6, (5, 3, 6)), atol=1e-15)
        np.testing.assert_allclose(sig.frames[0], sig.frames[4], atol=1e-15)

    def test_constant_velocity(self):
        F = 6
        root = np.tile([0, 0.9, 0], (F, 1)).astype(float)
        root[:, 0] = np.arange(F) / 60.0
        sig = build_signal(SKEL, MotionSequence(identity_sixd((F, 22)), root, 60.0))
        np.testing.assert_allclose(sig.frames[1:, :, 9:12], np.broadcast_to([1, 0, 0], (F - 1, 3, 3)), atol=1e-9)
        np.testing.assert_array_equal(sig.frames[0, :, 9:12], 0.0)

    def test_frame_zero_convention(self):
        sig = build_signal(SKEL, synth_motion("arm_wave", 0.5, seed=1))
        np.testing.assert_array_equal(sig.frames[0, :, 9:12], 0.0)
        np.testing.assert_allclose(sig.frames[0, :, 12:18], np.broadcast_to(IDENT6, (3, 6)), atol=1e-15)

    def test_finite_difference_oracle(self):
        seq = synth_motion("walk_cycle", 1.0, seed=4)
        sig = build_signal(SKEL, seq)
        fk = forward_kinematics(SKEL, seq.local, seq.root_translation)
        for k, j in enumerate(SKEL.tracked):
            for f in (1, 17, 59):
                v = (fk.global_pos[f, j] - fk.global_pos[f - 1, j]) * seq.fps
                np.testing.assert_allclose(sig.frames[f, k, 9:12], v, atol=1e-9)
                rel = fk.global_rot[f - 1, j].T @ fk.global_rot[f, j]
                np.testing.assert_allclose(sixd_to_matrix(sig.frames[f, k, 12:18]), rel, atol=1e-9)
                np.testing.assert_allclose(sixd_to_matrix(sig.frames[f, k, 3:9]), fk.global_rot[f, j], atol=1e-9)

    def test_time_reversal(self):
        seq = synth_motion("arm_wave", 1.0, seed=5)
        fwd = build_signal(SKEL, seq)
        bwd = build_signal(SKEL, seq.reversed())
        # reversed velocity at frame f equals minus the forward velocity at the mirrored frame + 1
        F = seq.num_frames
        for f in range(1, F):
            np.testing.assert_allclose(bwd.frames[f, :, 9:12], -fwd.frames[F - f, :, 9:12], atol=1e-9)
            Rf = sixd_to_matrix(fwd.frames[F - f, :, 12:18])
            np.testing.assert_allclose(sixd_to_matrix(bwd.frames[f, :, 12:18]), np.swapaxes(Rf, -1, -2), atol=1e-9)

    def test_signal_validates(self):
        build_signal(SKEL, synth_motion("squat", 0.5)).validate()

    def test_from_poses_matches_build(self):
        seq = synth_motion("idle_sway", 0.5, seed=8)
        a = build_signal(SKEL, seq)
        b = signal_from_poses(a.positions, a.rotations6d, seq.fps)
        np.testing.assert_allclose(b.frames, a.frames, atol=1e-12)

    def test_bad_shape(self):
        with pytest.raises(FormatError):
            TrackingSignal(np.zeros((4, 3, 17)))


class TestDeviceLog:
    def signal(self):
        R = Rotation.random(30, random_state=0).as_matrix().reshape(10, 3, 3, 3)
        pos = np.random.default_rng(0).normal(size=(10, 3, 3))
        return signal_from_poses(pos, matrix_to_sixd(R), 72.0)

    def test_round_trip_with_velocities(self, tmp_path):
        sig = self.signal()
        save_device_log(tmp_path / "log.csv", sig)
        back = load_device_log(tmp_path / "log.csv")
        np.testing.assert_array_equal(back.frames, sig.frames)
        assert back.fps == pytest.approx(72.0, rel=1e-9)

    def test_recompute_velocities(self, tmp_path):
        sig = self.signal()
        save_device_log(tmp_path / "log.csv", sig, with_velocities=False)
        back = load_device_log(tmp_path / "log.csv")
        np.testing.assert_allclose(back.frames, sig.frames, atol=1e-9)

    def test_explicit_fps(self, tmp_path):
        sig = self.signal()
        save_device_log(tmp_path / "log.csv", sig, with_velocities=False)
        assert load_device_log(tmp_path / "log.csv", fps=50.0).fps == 50.0

    def test_truncated_row(self, tmp_path):
        p = tmp_path / "log.csv"
        save_device_log(p, self.signal())
        lines = p.read_text().splitlines()
        lines[4] = ",".join(lines[4].split(",")[:12])
        p.write_text("\n".join(lines) + "\n")
        with pytest.raises(FormatError, match=r":5:.*lwrist_pz"):
            load_device_log(p)

    def test_non_numeric(self, tmp_path):
        p = tmp_path / "log.csv"
        save_device_log(p, self.signal(), with_velocities=False)
        lines = p.read_text().splitlines()
        cells = lines[2].split(",")
        cells[3] = "abc"
        lines[2] = ",".join(cells)
        p.write_text("\n".join(lines) + "\n")
        with pytest.raises(FormatError, match="head_pz"):
            load_device_log(p)

    def test_bad_header(self, tmp_path):
        p = tmp_path / "log.csv"
        p.write_text("t,head_px\n0,1\n")
        with pytest.raises(FormatError, match="head_py"):
            load_device_log(p)

    def test_non_monotone_time(self, tmp_path):
        p = tmp_path / "log.csv"
        save_device_log(p, self.signal(), with_velocities=False)
        lines = p.read_text().splitlines()
        lines[3], lines[4] = lines[4], lines[3]
        p.write_text("\n".join(lines) + "\n")
        with pytest.raises(FormatError, match="increasing"):
            load_device_log(p)
