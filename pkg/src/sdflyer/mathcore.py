"""Deterministic numeric foundations: 3-vectors, unit quaternions, seeded RNG,
and fixed-point quantization.

Conventions:
 - Quaternions are scalar-first ``[w, x, y, z]`` numpy arrays of shape
   ``(..., 4)``; all quaternion functions broadcast over leading axes.
 - ``q`` maps body-frame vectors to world frame: ``v_world = q v_body q*``.
 - Rotation vectors are axis * angle with angle in radians.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Unit-norm tolerance enforced by quat constructors/normalizers.
QUAT_NORM_TOL = 1e-9

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def vec3(x: float, y: float, z: float) -> np.ndarray:
    return np.array([x, y, z], dtype=np.float64)


def quat(w: float, x: float, y: float, z: float) -> np.ndarray:
    """Build a unit quaternion, normalizing the given components."""
    return quat_normalize(np.array([w, x, y, z], dtype=np.float64))


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < 1e-12):
        raise ValueError("cannot normalize near-zero quaternion")
    return q / n


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a ⊗ b (scalar-first, broadcasting).

    Terms are grouped into the symmetric and cross pairs so that a ⊗ a*
    evaluates to exactly (|a|^2, 0, 0, 0) in floating point; self-error of an
    orientation is then exactly zero.
    """
    aw, ax, ay, az = (a[..., i] for i in range(4))
    bw, bx, by, bz = (b[..., i] for i in range(4))
    return np.stack(
        [
            (aw * bw - ax * bx) - (ay * by + az * bz),
            (aw * bx + ax * bw) + (ay * bz - az * by),
            (aw * by + ay * bw) + (az * bx - ax * bz),
            (aw * bz + az * bw) + (ax * by - ay * bx),
        ],
        axis=-1,
    )


def quat_conj(q: np.ndarray) -> np.ndarray:
    out = np.array(q, dtype=np.float64, copy=True)
    out[..., 1:] = -out[..., 1:]
    return out


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate body-frame vector(s) into world frame: q v q*."""
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    w = q[..., :1]
    u = q[..., 1:]
    # Rodrigues form of the sandwich product; avoids building pure quaternions.
    cross = np.cross(u, v)
    return v + 2.0 * (w * cross + np.cross(u, cross))


def quat_from_rotvec(rv: np.ndarray) -> np.ndarray:
    """Exponential map: rotation vector (axis * angle, rad) to unit quaternion."""
    rv = np.asarray(rv, dtype=np.float64)
    angle = np.linalg.norm(rv, axis=-1, keepdims=True)
    half = 0.5 * angle
    # sin(x)/x with series fallback near zero keeps the map smooth at identity.
    small = angle < 1e-8
    k = np.where(small, 0.5 - angle**2 / 48.0, np.sin(half) / np.where(small, 1.0, angle))
    return np.concatenate([np.cos(half), k * rv], axis=-1)


def integrate_quat(q: np.ndarray, omega: np.ndarray, dt: float) -> np.ndarray:
    """Advance q by body-frame angular velocity omega over dt (exponential map)."""
    omega = np.asarray(omega, dtype=np.float64)
    return quat_normalize(quat_mul(q, quat_from_rotvec(omega * dt)))


def quat_canonical(q: np.ndarray) -> np.ndarray:
    """Flip sign so w >= 0, picking one representative of the double cover."""
    q = np.asarray(q, dtype=np.float64)
    sign = np.where(q[..., :1] < 0.0, -1.0, 1.0)
    return q * sign


def quat_error_rotvec(current: np.ndarray, goal: np.ndarray) -> np.ndarray:
    """Rotation vector of the shortest-path error goal ⊗ current⁻¹.

    The returned axis * angle has angle in [0, pi]; w of the error quaternion
    is canonicalized to be non-negative before the log map.
    """
    q_err = quat_canonical(quat_mul(goal, quat_conj(current)))
    w = np.clip(q_err[..., 0], -1.0, 1.0)
    v = q_err[..., 1:]
    vn = np.linalg.norm(v, axis=-1)
    angle = 2.0 * np.arctan2(vn, w)
    # angle/sin(angle/2) -> 2 as vn -> 0; series keeps small errors exact.
    small = vn < 1e-8
    scale = np.where(small, 2.0 + angle**2 / 12.0, angle / np.where(small, 1.0, vn))
    return v * scale[..., None]


def quat_angle_deg(current: np.ndarray, goal: np.ndarray) -> np.ndarray:
    """Total rotation angle 2*acos(|w_err|) between orientations, degrees in
    [0, 180]; evaluated through atan2 for uniform accuracy near 0 and 180."""
    q_err = quat_mul(goal, quat_conj(current))
    w = np.abs(q_err[..., 0])
    vn = np.linalg.norm(q_err[..., 1:], axis=-1)
    return np.degrees(2.0 * np.arctan2(vn, w))


@dataclass(frozen=True)
class QuantSpec:
    """Symmetric linear quantizer: integer units per real unit plus a
    two's-complement magnitude budget of ``magnitude_bits`` in [2, 24]."""

    scale: float
    magnitude_bits: int = 24

    def __post_init__(self) -> None:
        if not self.scale > 0.0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        if not 2 <= self.magnitude_bits <= 24:
            raise ValueError(f"magnitude_bits must be in [2, 24], got {self.magnitude_bits}")

    @property
    def int_min(self) -> int:
        return -(1 << (self.magnitude_bits - 1))

    @property
    def int_max(self) -> int:
        return (1 << (self.magnitude_bits - 1)) - 1


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round half away from zero (symmetric, so rounding commutes with negation)."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize(x, spec: QuantSpec):
    """Quantize real value(s) to integers: round-half-away of x*scale, saturated
    to the representable range. Scalars in, Python int out; arrays in, int64 out."""
    scalar = np.isscalar(x) or np.ndim(x) == 0
    q = round_half_away(np.asarray(x, dtype=np.float64) * spec.scale)
    q = np.clip(q, spec.int_min, spec.int_max).astype(np.int64)
    return int(q) if scalar else q


def dequantize(n, spec: QuantSpec):
    """Map quantized integer(s) back to real units. Out-of-range input means a
    corrupted pipeline, so it raises rather than saturating."""
    n = np.asarray(n)
    if np.any(n < spec.int_min) or np.any(n > spec.int_max):
        raise ValueError(
            f"quantized value outside representable range "
            f"[{spec.int_min}, {spec.int_max}] for {spec.magnitude_bits}-bit spec"
        )
    out = n.astype(np.float64) / spec.scale
    return float(out) if out.ndim == 0 else out


class SeededRng:
    """Deterministic random source backed by the Philox 4x64 counter-based
    generator, so identical seeds reproduce identical streams on any platform.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(self.seed))

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def normal(self, size=None) -> np.ndarray:
        return self._gen.standard_normal(size)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def spawn(self, key: int) -> "SeededRng":
        """Derive an independent stream; (seed, key) pairs map to distinct
        Philox seeds so sub-streams never collide for keys < 2**20."""
        return SeededRng(self.seed * (1 << 20) + key + 1)
