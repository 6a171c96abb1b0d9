"""Quaternion helpers on plain tuples.

Quaternions are ``(w, x, y, z)`` and rotate body-frame vectors into the
world frame. World is ENU (x east, y north, z up); body is FLU (x forward,
y port, z up). Everything here works on Python floats because the physics
loop evaluates these a few dozen times per vehicle per tick and numpy's
per-call overhead dominates at this size.
"""
from __future__ import annotations

import math

Vec3 = tuple[float, float, float]
Quat = tuple[float, float, float, float]

IDENTITY: Quat = (1.0, 0.0, 0.0, 0.0)


def rotate(q: Quat, v: Vec3) -> Vec3:
    """Rotate body vector ``v`` into the world frame."""
    w, x, y, z = q
    vx, vy, vz = v
    # t = 2 * (q_vec x v)
    tx = 2.0 * (y * vz - z * vy)
    ty = 2.0 * (z * vx - x * vz)
    tz = 2.0 * (x * vy - y * vx)
    return (
        vx + w * tx + (y * tz - z * ty),
        vy + w * ty + (z * tx - x * tz),
        vz + w * tz + (x * ty - y * tx),
    )


def rotate_inv(q: Quat, v: Vec3) -> Vec3:
    """Rotate world vector ``v`` into the body frame."""
    w, x, y, z = q
    return rotate((w, -x, -y, -z), v)


def multiply(a: Quat, b: Quat) -> Quat:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return (
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    )


def normalize(q: Quat) -> Quat:
    w, x, y, z = q
    n = math.sqrt(w * w + x * x + y * y + z * z)
    return (w / n, x / n, y / n, z / n)


def integrate_body_rate(q: Quat, omega: Vec3, dt: float) -> Quat:
    """Advance ``q`` by a constant body-frame rate over ``dt`` (exact rotation)."""
    p, qq, r = omega
    rate = math.hypot(p, qq, r)
    if rate * dt < 1e-12:
        return q
    half = 0.5 * rate * dt
    s = math.sin(half) / rate
    dq = (math.cos(half), p * s, qq * s, r * s)
    return normalize(multiply(q, dq))


def from_euler(roll: float, pitch: float, yaw: float) -> Quat:
    """Quaternion from intrinsic Z-Y-X (yaw, pitch, roll) angles.

    In FLU/ENU a positive pitch is nose-down and yaw is measured
    counter-clockwise from east.
    """
    cr, sr = math.cos(roll / 2), math.sin(roll / 2)
    cp, sp = math.cos(pitch / 2), math.sin(pitch / 2)
    cy, sy = math.cos(yaw / 2), math.sin(yaw / 2)
    return (
        cr * cp * cy + sr * sp * sy,
        sr * cp * cy - cr * sp * sy,
        cr * sp * cy + sr * cp * sy,
        cr * cp * sy - sr * sp * cy,
    )


def to_euler(q: Quat) -> tuple[float, float, float]:
    """Inverse of :func:`from_euler`: returns ``(roll, pitch, yaw)``."""
    w, x, y, z = q
    roll = math.atan2(2 * (w * x + y * z), 1 - 2 * (x * x + y * y))
    s = 2 * (w * y - z * x)
    pitch = math.asin(max(-1.0, min(1.0, s)))
    yaw = math.atan2(2 * (w * z + x * y), 1 - 2 * (y * y + z * z))
    return roll, pitch, yaw


def yaw_of(q: Quat) -> float:
    w, x, y, z = q
    return math.atan2(2 * (w * z + x * y), 1 - 2 * (y * y + z * z))


def nose_up(q: Quat) -> float:
    """Elevation of the body x axis above the horizontal (positive nose-up)."""
    w, x, y, z = q
    # world z component of body x
    s = 2.0 * (x * z - w * y)
    return math.asin(max(-1.0, min(1.0, s)))


def tilt(q: Quat) -> float:
    """Angle between body up and world up."""
    w, x, y, z = q
    c = 1.0 - 2.0 * (x * x + y * y)
    return math.acos(max(-1.0, min(1.0, c)))


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi
