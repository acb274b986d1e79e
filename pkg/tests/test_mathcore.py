import numpy as np
import pytest

from sdflyer.mathcore import (
    IDENTITY_QUAT,
    QuantSpec,
    SeededRng,
    dequantize,
    integrate_quat,
    quantize,
    quat,
    quat_angle_deg,
    quat_error_rotvec,
    quat_from_rotvec,
    quat_mul,
    quat_normalize,
    quat_rotate,
)


def random_unit_quat(rng):
    return quat_normalize(rng.normal(4))


class TestQuatError:
    def test_identity_to_identity_is_zero(self):
        assert np.allclose(quat_error_rotvec(IDENTITY_QUAT, IDENTITY_QUAT), 0.0)

    def test_quarter_turn_about_z(self):
        goal = quat(np.cos(np.pi / 4), 0.0, 0.0, np.sin(np.pi / 4))
        rv = quat_error_rotvec(IDENTITY_QUAT, goal)
        assert np.allclose(rv, [0.0, 0.0, np.pi / 2], atol=1e-12)

    def test_self_error_is_zero(self):
        rng = SeededRng(1)
        for _ in range(50):
            q = random_unit_quat(rng)
            assert np.all(quat_error_rotvec(q, q) == 0.0)

    def test_shortest_path_angle_range(self):
        rng = SeededRng(2)
        for _ in range(200):
            a, b = random_unit_quat(rng), random_unit_quat(rng)
            angle = np.linalg.norm(quat_error_rotvec(a, b))
            assert 0.0 <= angle <= np.pi + 1e-12

    def test_error_rotates_current_onto_goal(self):
        # applying the error rotation (world frame) to the current attitude
        # must land exactly on the goal attitude
        rng = SeededRng(3)
        for _ in range(50):
            a, b = random_unit_quat(rng), random_unit_quat(rng)
            q_err = quat_from_rotvec(quat_error_rotvec(a, b))
            assert quat_angle_deg(quat_mul(q_err, a), b) < 1e-6


class TestQuatAngle:
    def test_zero_for_identity(self):
        assert quat_angle_deg(IDENTITY_QUAT, IDENTITY_QUAT) == 0.0

    def test_120_about_x(self):
        goal = quat(np.cos(np.radians(60)), np.sin(np.radians(60)), 0.0, 0.0)
        assert abs(quat_angle_deg(IDENTITY_QUAT, goal) - 120.0) < 1e-9

    def test_antipodal_representations_agree(self):
        rng = SeededRng(4)
        for _ in range(50):
            a, b = random_unit_quat(rng), random_unit_quat(rng)
            base = quat_angle_deg(a, b)
            assert abs(quat_angle_deg(-a, b) - base) < 1e-9
            assert abs(quat_angle_deg(a, -b) - base) < 1e-9
        assert quat_angle_deg(a, -a.copy()) < 1e-6

    def test_matches_rotvec_magnitude(self):
        rng = SeededRng(5)
        for _ in range(100):
            a, b = random_unit_quat(rng), random_unit_quat(rng)
            deg_from_rotvec = np.degrees(np.linalg.norm(quat_error_rotvec(a, b)))
            assert abs(deg_from_rotvec - quat_angle_deg(a, b)) < 1e-6


class TestQuantize:
    SPEC = QuantSpec(scale=4096.0, magnitude_bits=24)

    def test_zero(self):
        assert quantize(0.0, self.SPEC) == 0

    def test_unit(self):
        assert quantize(1.0, self.SPEC) == 4096

    def test_saturation(self):
        assert quantize(1e9, self.SPEC) == 2**23 - 1
        assert quantize(-1e9, self.SPEC) == -(2**23)

    def test_round_trip_half_lsb(self):
        rng = SeededRng(6)
        xs = rng.uniform(-3000, 3000, 20000)
        specs = [self.SPEC, QuantSpec(scale=10.0, magnitude_bits=8)]
        for spec in specs:
            clamped = np.clip(xs, spec.int_min / spec.scale, spec.int_max / spec.scale)
            err = np.abs(dequantize(quantize(xs, spec), spec) - clamped)
            assert err.max() <= 0.5 / spec.scale + 1e-15

    def test_monotone(self):
        rng = SeededRng(7)
        xs = np.sort(rng.uniform(-4000, 4000, 20000))
        q = quantize(xs, self.SPEC)
        assert np.all(np.diff(q) >= 0)

    def test_symmetric_rounding(self):
        xs = np.array([0.5 / 4096.0, 1.5 / 4096.0, 2.5 / 4096.0, 0.3, 1.77])
        assert np.all(quantize(-xs, self.SPEC) == -quantize(xs, self.SPEC))
        # half-way cases round away from zero
        assert quantize(0.5 / 4096.0, self.SPEC) == 1
        assert quantize(-0.5 / 4096.0, self.SPEC) == -1

    def test_dequantize_rejects_out_of_range(self):
        spec = QuantSpec(scale=1.0, magnitude_bits=8)
        with pytest.raises(ValueError):
            dequantize(200, spec)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            QuantSpec(scale=-1.0, magnitude_bits=8)
        with pytest.raises(ValueError):
            QuantSpec(scale=1.0, magnitude_bits=30)


class TestIntegrateQuat:
    def test_zero_rate_is_identity_map(self):
        rng = SeededRng(8)
        for _ in range(20):
            q = random_unit_quat(rng)
            assert np.allclose(integrate_quat(q, np.zeros(3), 0.1), q, atol=1e-15)

    def test_half_turn_about_z(self):
        q = integrate_quat(IDENTITY_QUAT, np.array([0.0, 0.0, np.pi]), 1.0)
        assert np.allclose(q, [0.0, 0.0, 0.0, 1.0], atol=1e-12)

    def test_norm_preserved(self):
        rng = SeededRng(9)
        for _ in range(200):
            q = random_unit_quat(rng)
            out = integrate_quat(q, rng.normal(3) * 5.0, 0.1)
            assert abs(np.linalg.norm(out) - 1.0) < 1e-9

    def test_rotate_round_trip(self):
        rng = SeededRng(10)
        for _ in range(50):
            q = random_unit_quat(rng)
            v = rng.normal(3)
            back = quat_rotate(quat_normalize(np.array([q[0], -q[1], -q[2], -q[3]])), quat_rotate(q, v))
            assert np.allclose(back, v, atol=1e-12)


class TestSeededRng:
    def test_equal_seeds_equal_streams(self):
        a, b = SeededRng(123456789), SeededRng(123456789)
        assert np.array_equal(a.uniform(size=1_000_000), b.uniform(size=1_000_000))

    def test_different_seeds_differ(self):
        assert not np.array_equal(SeededRng(1).normal(100), SeededRng(2).normal(100))

    def test_spawn_streams_independent(self):
        root = SeededRng(5)
        a, b = root.spawn(0), root.spawn(1)
        assert not np.array_equal(a.normal(100), b.normal(100))
        assert np.array_equal(SeededRng(5).spawn(0).normal(100), SeededRng(5).spawn(0).normal(100))
