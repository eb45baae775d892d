"""Rigid-body poses, pinhole projection and ray-based two-view geometry.

All two-view operations work on projection rays rather than pixels so that
camera models other than the pinhole can be added without touching them.
Translations are expressed in scene units (millimeters by convention).
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BehindCamera,
    DegenerateConfiguration,
    NonPositiveDepth,
    ParallelRays,
)

DEPTH_EPS = 1e-9


def skew(v):
    """Cross-product matrix such that skew(a) @ b == cross(a, b)."""
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def skew_many(v):
    """Stacked cross-product matrices for an (n, 3) array."""
    n = v.shape[0]
    out = np.zeros((n, 3, 3))
    out[:, 0, 1] = -v[:, 2]
    out[:, 0, 2] = v[:, 1]
    out[:, 1, 0] = v[:, 2]
    out[:, 1, 2] = -v[:, 0]
    out[:, 2, 0] = -v[:, 1]
    out[:, 2, 1] = v[:, 0]
    return out


def so3_exp(phi):
    """Rotation matrix from an axis-angle 3-vector (Rodrigues)."""
    phi = np.asarray(phi, dtype=float)
    angle = np.linalg.norm(phi)
    K = skew(phi)
    if angle < 1e-12:
        # second order Taylor keeps the result orthonormal to machine precision
        return np.eye(3) + K + 0.5 * (K @ K)
    a = np.sin(angle) / angle
    b = (1.0 - np.cos(angle)) / (angle * angle)
    return np.eye(3) + a * K + b * (K @ K)


def quat_to_matrix(q):
    """Rotation matrix from a unit quaternion stored as [x, y, z, w]."""
    x, y, z, w = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(R):
    """Unit quaternion [x, y, z, w] from a rotation matrix (Shepperd)."""
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0.0:
        s = np.sqrt(tr + 1.0) * 2.0
        w = 0.25 * s
        x = (R[2, 1] - R[1, 2]) / s
        y = (R[0, 2] - R[2, 0]) / s
        z = (R[1, 0] - R[0, 1]) / s
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        w = (R[2, 1] - R[1, 2]) / s
        x = 0.25 * s
        y = (R[0, 1] + R[1, 0]) / s
        z = (R[0, 2] + R[2, 0]) / s
    elif R[1, 1] > R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        w = (R[0, 2] - R[2, 0]) / s
        x = (R[0, 1] + R[1, 0]) / s
        y = 0.25 * s
        z = (R[1, 2] + R[2, 1]) / s
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        w = (R[1, 0] - R[0, 1]) / s
        x = (R[0, 2] + R[2, 0]) / s
        y = (R[1, 2] + R[2, 1]) / s
        z = 0.25 * s
    q = np.array([x, y, z, w])
    return q / np.linalg.norm(q)


def quat_mul(a, b):
    """Hamilton product of two [x, y, z, w] quaternions."""
    ax, ay, az, aw = a
    bx, by, bz, bw = b
    return np.array([
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
        aw * bw - ax * bx - ay * by - az * bz,
    ])


@dataclass(frozen=True)
class Pose:
    """Rigid transform y = R x + t with rotation stored as a unit quaternion.

    ``q`` is [x, y, z, w]; the constructor normalizes it. Instances are
    treated as immutable values and are safe to share between threads.
    """

    q: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).reshape(4)
        n = np.linalg.norm(q)
        if n < 1e-12:
            raise ValueError("quaternion norm too small")
        if q[3] < 0.0:
            q = -q
        object.__setattr__(self, "q", q / n)
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float).reshape(3).copy())

    @staticmethod
    def identity():
        return Pose(np.array([0.0, 0.0, 0.0, 1.0]), np.zeros(3))

    @staticmethod
    def from_rt(R, t):
        return Pose(matrix_to_quat(np.asarray(R, dtype=float)), t)

    def rotation(self):
        return quat_to_matrix(self.q)

    def compose(self, other):
        """self * other (apply ``other`` first)."""
        R = self.rotation()
        return Pose(quat_mul(self.q, other.q), R @ other.t + self.t)

    def __matmul__(self, other):
        return self.compose(other)

    def inverse(self):
        R = self.rotation()
        return Pose(np.array([-self.q[0], -self.q[1], -self.q[2], self.q[3]]), -(R.T @ self.t))

    def apply(self, points):
        """Transform one point (3,) or many (n, 3)."""
        pts = np.asarray(points, dtype=float)
        R = self.rotation()
        if pts.ndim == 1:
            return R @ pts + self.t
        return pts @ R.T + self.t

    def retract(self, xi):
        """Right-multiplicative local update with xi = [rot(3), trans(3)]."""
        xi = np.asarray(xi, dtype=float).reshape(6)
        R = self.rotation()
        R_new = R @ so3_exp(xi[:3])
        t_new = R @ xi[3:] + self.t
        return Pose(matrix_to_quat(R_new), t_new)


def rotation_angle_deg(pose_a, pose_b=None):
    """Geodesic angle of a pose's rotation, or between two poses, in degrees."""
    R = pose_a.rotation()
    if pose_b is not None:
        R = R.T @ pose_b.rotation()
    c = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    return np.degrees(np.arccos(c))


@dataclass(frozen=True)
class PinholeCamera:
    """Pinhole intrinsics with focal lengths and principal point in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    def project_camera(self, point):
        """Project a camera-frame point; depth must exceed DEPTH_EPS."""
        x, y, z = np.asarray(point, dtype=float)
        if z <= DEPTH_EPS:
            raise NonPositiveDepth(f"depth {z:.3e} <= {DEPTH_EPS}")
        return np.array([self.fx * x / z + self.cx, self.fy * y / z + self.cy])

    def project_array(self, points):
        """Vectorized projection of (n, 3) camera-frame points.

        Returns (pixels (n, 2), valid mask); invalid rows hold NaN.
        """
        pts = np.asarray(points, dtype=float)
        z = pts[:, 2]
        valid = z > DEPTH_EPS
        zs = np.where(valid, z, 1.0)
        px = np.stack([
            self.fx * pts[:, 0] / zs + self.cx,
            self.fy * pts[:, 1] / zs + self.cy,
        ], axis=1)
        px[~valid] = np.nan
        return px, valid

    def unproject(self, pixel):
        """Unit ray direction in the camera frame through a pixel."""
        u, v = np.asarray(pixel, dtype=float)
        d = np.array([(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0])
        return d / np.linalg.norm(d)

    def unproject_array(self, pixels):
        px = np.asarray(pixels, dtype=float)
        d = np.stack([
            (px[:, 0] - self.cx) / self.fx,
            (px[:, 1] - self.cy) / self.fy,
            np.ones(len(px)),
        ], axis=1)
        return d / np.linalg.norm(d, axis=1, keepdims=True)

    def in_image(self, pixel, margin=0.0):
        u, v = pixel
        return (margin <= u <= self.width - 1 - margin) and (margin <= v <= self.height - 1 - margin)


def project(camera, pose, point):
    """Pixel of a world point seen through ``pose`` (world-to-camera)."""
    return camera.project_camera(pose.apply(point))


@dataclass(frozen=True)
class Ray:
    """Half-line with a unit direction."""

    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=float).reshape(3).copy()
        d = np.asarray(self.direction, dtype=float).reshape(3)
        n = np.linalg.norm(d)
        if n < 1e-12:
            raise ValueError("ray direction must be nonzero")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d / n)


def parallax_angle(ray_a, ray_b):
    """Angle between the two ray directions in [0, 180] degrees."""
    da, db = ray_a.direction, ray_b.direction
    return np.degrees(np.arctan2(np.linalg.norm(np.cross(da, db)), np.dot(da, db)))


PARALLEL_EPS_DEG = 1e-4


def weighted_midpoint_triangulate(ray_a, ray_b):
    """Inverse-depth-weighted midpoint of the common perpendicular of two rays.

    Both rays must be expressed in a common frame. The estimate combines the
    two closest points weighted by inverse depth, which keeps it stable under
    very small parallax and makes it invariant to common rigid transforms.
    """
    da, db = ray_a.direction, ray_b.direction
    t = ray_b.origin - ray_a.origin
    m = np.cross(da, db)
    m2 = np.dot(m, m)
    angle = np.degrees(np.arctan2(np.sqrt(m2), np.dot(da, db)))
    if angle < PARALLEL_EPS_DEG:
        raise ParallelRays(f"parallax {angle:.2e} deg below {PARALLEL_EPS_DEG}")
    # signed depths along each ray at the common perpendicular
    lam_a = np.dot(np.cross(t, db), m) / m2
    lam_b = np.dot(np.cross(t, da), m) / m2
    if lam_a <= 0.0 or lam_b <= 0.0:
        raise BehindCamera(f"depths ({lam_a:.3e}, {lam_b:.3e}) not both positive")
    pa = ray_a.origin + lam_a * da
    pb = ray_b.origin + lam_b * db
    wa = lam_b / (lam_a + lam_b)
    return wa * pa + (1.0 - wa) * pb


def _essential_eight_point(da, db):
    """Least-squares essential matrix from >= 8 unit-ray correspondences."""
    A = (db[:, :, None] * da[:, None, :]).reshape(len(da), 9)
    _, _, Vt = np.linalg.svd(A)
    E = Vt[-1].reshape(3, 3)
    # project onto the essential manifold: singular values (s, s, 0)
    U, S, Vt2 = np.linalg.svd(E)
    s = 0.5 * (S[0] + S[1])
    return U @ np.diag([s, s, 0.0]) @ Vt2


def _epipolar_angle_deg(E, da, db):
    """Symmetric angular distance of each correspondence to its epipolar plane."""
    nb = da @ E.T  # plane normals in frame b
    na = db @ E  # plane normals in frame a
    nb_norm = np.linalg.norm(nb, axis=1)
    na_norm = np.linalg.norm(na, axis=1)
    ok = (nb_norm > 1e-12) & (na_norm > 1e-12)
    sin_b = np.abs(np.sum(db * nb, axis=1)) / np.where(ok, nb_norm, 1.0)
    sin_a = np.abs(np.sum(da * na, axis=1)) / np.where(ok, na_norm, 1.0)
    err = np.degrees(np.arcsin(np.clip(np.maximum(sin_a, sin_b), 0.0, 1.0)))
    err[~ok] = 90.0
    return err


def _decompose_essential(E):
    U, _, Vt = np.linalg.svd(E)
    if np.linalg.det(U) < 0:
        U = -U
    if np.linalg.det(Vt) < 0:
        Vt = -Vt
    W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    R1 = U @ W @ Vt
    R2 = U @ W.T @ Vt
    t = U[:, 2]
    return [(R1, t), (R1, -t), (R2, t), (R2, -t)]


def _cheirality_score(R, t, da, db):
    """Count positive-depth triangulations and mean angular reprojection error."""
    n_ok = 0
    err_sum = 0.0
    origin_b = -R.T @ t
    for i in range(len(da)):
        ra = Ray(np.zeros(3), da[i])
        rb = Ray(origin_b, R.T @ db[i])
        try:
            p = weighted_midpoint_triangulate(ra, rb)
        except (ParallelRays, BehindCamera):
            continue
        n_ok += 1
        va = p / np.linalg.norm(p)
        vb = p - origin_b
        vb /= np.linalg.norm(vb)
        err_sum += np.arccos(np.clip(np.dot(va, da[i]), -1.0, 1.0))
        err_sum += np.arccos(np.clip(np.dot(vb, rb.direction), -1.0, 1.0))
    mean_err = err_sum / max(n_ok, 1)
    return n_ok, mean_err


def estimate_essential(rays_a, rays_b, threshold_deg=0.5, iterations=100,
                       seed=0, min_cheirality=0.5):
    """Relative pose (up to scale) from ray correspondences.

    Runs a normalized eight-point solver inside a random-sampling consensus
    loop with an angular epipolar threshold, then picks the decomposition with
    the best cheirality count (ties broken by mean angular reprojection
    error). Returns ``(pose, inlier_mask)`` where ``pose`` maps frame-a
    coordinates into frame b and has a unit-norm translation.

    Raises DegenerateConfiguration when fewer than half of the consensus
    inliers triangulate in front of both cameras.
    """
    da = np.asarray([r.direction if isinstance(r, Ray) else r for r in rays_a], dtype=float)
    db = np.asarray([r.direction if isinstance(r, Ray) else r for r in rays_b], dtype=float)
    n = len(da)
    if n < 8:
        raise ValueError("need at least 8 correspondences")
    da = da / np.linalg.norm(da, axis=1, keepdims=True)
    db = db / np.linalg.norm(db, axis=1, keepdims=True)

    rng = np.random.default_rng(seed)
    best_mask = None
    best_count = -1
    best_err = np.inf
    for _ in range(iterations):
        idx = rng.choice(n, size=8, replace=False)
        try:
            E = _essential_eight_point(da[idx], db[idx])
        except np.linalg.LinAlgError:
            continue
        err = _epipolar_angle_deg(E, da, db)
        mask = err < threshold_deg
        count = int(mask.sum())
        mean_err = float(err[mask].mean()) if count else np.inf
        if count > best_count or (count == best_count and mean_err < best_err):
            best_count, best_err, best_mask = count, mean_err, mask
    if best_mask is None or best_count < 8:
        raise DegenerateConfiguration("no consensus set of size >= 8")

    E = _essential_eight_point(da[best_mask], db[best_mask])
    err = _epipolar_angle_deg(E, da, db)
    mask = err < threshold_deg
    if mask.sum() < 8:
        mask = best_mask

    ia, ib = da[mask], db[mask]
    best_pose = None
    best_score = (-1, np.inf)
    for R, t in _decompose_essential(E):
        n_ok, mean_err = _cheirality_score(R, t, ia, ib)
        if n_ok > best_score[0] or (n_ok == best_score[0] and mean_err < best_score[1]):
            best_score = (n_ok, mean_err)
            best_pose = (R, t)
    if best_pose is None or best_score[0] < min_cheirality * mask.sum():
        raise DegenerateConfiguration(
            f"cheirality holds for {best_score[0]}/{int(mask.sum())} inliers")
    R, t = best_pose
    t = t / np.linalg.norm(t)
    return Pose.from_rt(R, t), mask
