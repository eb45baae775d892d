"""Synthetic deforming scenes with ground truth for end-to-end evaluation.

Scenes (tube with haustra-like ripples, plane, two independently moving
surfaces) deform through a sine wave applied to the y coordinate of each
rest point. A camera travels a forward trajectory with a gentle lateral
sway and observes the points as noisy pixel tracks; plane scenes can also be
rendered to textured grayscale images to exercise the photometric front end.
Everything is deterministic given the scene seed.
"""

import dataclasses
import os
from dataclasses import dataclass

import numpy as np

from .config import SceneConfig, parse_config, write_config
from .geometry import PinholeCamera, Pose
from .image import ImageBuffer


def deform_scene(points, amplitude, omega, t, phase_scale=1.0, phase_offset=0.0):
    """Sine-wave deformation of rest points: displaces y, leaves x and z.

    y^t = y^0 + A * sin(omega * t + phase_scale * (x^0 + y^0 + z^0) + offset).
    ``phase_offset`` may be a scalar or a per-point array.
    """
    pts = np.asarray(points, dtype=float).copy()
    if amplitude == 0.0:
        return pts
    phase = omega * t + phase_scale * pts.sum(axis=1) + phase_offset
    pts[:, 1] += amplitude * np.sin(phase)
    return pts


@dataclass
class Scene:
    """Rest geometry plus everything needed to pose it at any time."""

    spec: SceneConfig
    rest_points: np.ndarray
    phase_offsets: np.ndarray
    surface_ids: np.ndarray
    texture_params: tuple

    def points_at(self, t):
        return deform_scene(self.rest_points, self.spec.amplitude, self.spec.omega,
                            t, self.spec.phase_scale, self.phase_offsets)


def _wall_radius(spec, z):
    return spec.tube_radius * (1.0 + spec.haustra_amp
                               * np.sin(2.0 * np.pi * z / spec.haustra_wavelength))


def build_scene(spec):
    """Sample the rest point cloud of the requested topology."""
    rng = np.random.default_rng(spec.seed)
    n = spec.n_points
    if spec.topology == "tube":
        z = rng.uniform(5.0, spec.tube_length, n)
        theta = rng.uniform(0.0, 2.0 * np.pi, n)
        r = _wall_radius(spec, z)
        pts = np.column_stack([r * np.cos(theta), r * np.sin(theta), z])
        surf = np.zeros(n, dtype=int)
    elif spec.topology == "plane":
        pts = np.column_stack([
            rng.uniform(-spec.extent, spec.extent, n),
            rng.uniform(-spec.extent * 0.75, spec.extent * 0.75, n),
            np.full(n, spec.plane_depth),
        ])
        surf = np.zeros(n, dtype=int)
    elif spec.topology == "two_surfaces":
        half = n // 2
        gap = spec.surface_gap / 2.0
        xs = np.concatenate([rng.uniform(-spec.extent, -gap, half),
                             rng.uniform(gap, spec.extent, n - half)])
        ys = rng.uniform(-spec.extent * 0.75, spec.extent * 0.75, n)
        pts = np.column_stack([xs, ys, np.full(n, spec.plane_depth)])
        surf = (xs > 0).astype(int)
    else:
        raise ValueError(f"unknown topology {spec.topology!r}")
    # two surfaces deform in opposed phase so they drift apart and rejoin
    offsets = np.where(surf == 1, np.pi, 0.0)
    tex_rng = np.random.default_rng(spec.seed + 7919)
    n_waves = 14
    texture = (tex_rng.uniform(0.04, 0.12, n_waves),
               tex_rng.uniform(0.08, 1.0, (n_waves, 2)),
               tex_rng.uniform(0.0, 2.0 * np.pi, n_waves))
    return Scene(spec=spec, rest_points=pts, phase_offsets=offsets,
                 surface_ids=surf, texture_params=texture)


def camera_of(spec):
    return PinholeCamera(spec.fx, spec.fy, spec.cx, spec.cy, spec.width, spec.height)


def camera_pose_wc(spec, t):
    """Ground-truth camera-to-world pose at time t (identity rotation)."""
    w = 2.0 * np.pi / spec.sway_period
    pos = np.array([
        spec.sway_amp * np.sin(w * t),
        0.7 * spec.sway_amp * np.sin(w * t + 0.5 * np.pi),
        spec.forward_speed * t,
    ])
    return Pose(np.array([0.0, 0.0, 0.0, 1.0]), pos)


def _rest_y(spec, q, t, offset=0.0):
    """Approximate inverse of the deformation's y displacement at a query point."""
    if spec.amplitude == 0.0:
        return q[1]
    y0 = q[1]
    for _ in range(4):
        y0 = q[1] - spec.amplitude * np.sin(
            spec.omega * t + spec.phase_scale * (q[0] + y0 + q[2]) + offset)
    return y0


def tube_occluded(spec, cam_center, point, t, n_samples=48):
    """True when the segment camera-to-point leaves the (deformed) tube."""
    seg = point - cam_center
    for s in np.linspace(0.02, 0.98, n_samples):
        q = cam_center + s * seg
        if q[2] < 0.5:
            continue
        y0 = _rest_y(spec, q, t)
        if np.hypot(q[0], y0) > _wall_radius(spec, q[2]) + 1e-2:
            return True
    return False


@dataclass
class FrameObservation:
    """Ground truth and noisy observations of one frame."""

    index: int
    timestamp: float
    pose_wc: Pose
    points: np.ndarray       # ground-truth deformed positions of all points
    visible: np.ndarray      # bool per point
    pixels: dict             # id -> noisy pixel, visible points only
    clean_pixels: dict       # id -> noiseless pixel, visible points only


@dataclass
class SequenceData:
    spec: SceneConfig
    scene: Scene
    camera: PinholeCamera
    frames: list
    images: list


def _frame_visibility(spec, scene, camera, pose_wc, pts, t):
    pose_cw = pose_wc.inverse()
    cam_pts = pose_cw.apply(pts)
    pix, valid = camera.project_array(cam_pts)
    m = spec.visibility_margin
    depth = cam_pts[:, 2]
    vis = (valid
           & (depth >= spec.min_view_depth) & (depth <= spec.max_view_depth)
           & (pix[:, 0] >= m) & (pix[:, 0] <= spec.width - 1 - m)
           & (pix[:, 1] >= m) & (pix[:, 1] <= spec.height - 1 - m))
    if spec.topology == "tube":
        center = pose_wc.t
        for i in np.nonzero(vis)[0]:
            if tube_occluded(spec, center, pts[i], t):
                vis[i] = False
    return vis, pix


def generate_sequence(spec):
    """Simulate the scene and produce the per-frame observation stream."""
    if spec.n_frames < 2:
        raise ValueError("need at least 2 frames")
    scene = build_scene(spec)
    camera = camera_of(spec)
    rng = np.random.default_rng(spec.seed + 1)
    frames = []
    images = [] if spec.render else None
    for f in range(spec.n_frames):
        t = f / spec.fps
        pose_wc = camera_pose_wc(spec, t)
        pts = scene.points_at(t)
        vis, pix = _frame_visibility(spec, scene, camera, pose_wc, pts, t)
        pixels = {}
        clean = {}
        for i in np.nonzero(vis)[0]:
            noise = rng.normal(scale=spec.sigma_px, size=2) if spec.sigma_px > 0 else np.zeros(2)
            nn = np.linalg.norm(noise)
            if nn > 3.0 * spec.sigma_px and nn > 0:
                noise *= 3.0 * spec.sigma_px / nn
            clean[int(i)] = pix[i].copy()
            pixels[int(i)] = pix[i] + noise
        frames.append(FrameObservation(index=f, timestamp=t, pose_wc=pose_wc,
                                       points=pts, visible=vis, pixels=pixels,
                                       clean_pixels=clean))
        if spec.render:
            images.append(render_frame(scene, camera, pose_wc, t, frame_index=f))
    return SequenceData(spec=spec, scene=scene, camera=camera, frames=frames, images=images)


# ----------------------------------------------------------------- rendering

def texture_value(scene, x, y):
    """Smooth procedural texture over surface coordinates, in [0.05, 0.95]."""
    amps, freqs, phases = scene.texture_params
    v = np.zeros_like(np.asarray(x, dtype=float))
    for a, f, p in zip(amps, freqs, phases):
        v = v + a * np.sin(f[0] * x + f[1] * y + p)
    total = amps.sum()
    return 0.5 + 0.45 * v / total


def render_frame(scene, camera, pose_wc, t, frame_index=0, gain=1.0, bias=0.0):
    """Grayscale rendering of the scene state, sufficient for patch tracking.

    Static plane scenes are rendered analytically by intersecting view rays
    with the textured plane; other scenes use Gaussian splats at the current
    point positions over a smooth background.
    """
    spec = scene.spec
    h, w = spec.height, spec.width
    if spec.topology in ("plane", "two_surfaces") and spec.amplitude == 0.0:
        us, vs = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
        R = pose_wc.rotation()
        dirs = np.stack([(us - spec.cx) / spec.fx,
                         (vs - spec.cy) / spec.fy,
                         np.ones_like(us)], axis=-1) @ R.T
        origin = pose_wc.t
        dz = dirs[..., 2]
        s = (spec.plane_depth - origin[2]) / np.where(np.abs(dz) < 1e-9, 1e-9, dz)
        px = origin[0] + s * dirs[..., 0]
        py = origin[1] + s * dirs[..., 1]
        img = texture_value(scene, px, py)
        img[s <= 0] = 0.0
    else:
        img = np.full((h, w), 0.35)
        us, vs = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
        img += 0.05 * np.sin(0.02 * us) * np.cos(0.017 * vs)
        pts = scene.points_at(t)
        cam_pts = pose_wc.inverse().apply(pts)
        pix, valid = camera.project_array(cam_pts)
        amp_rng = np.random.default_rng(spec.seed + 13)
        amps = amp_rng.uniform(-0.35, 0.35, len(pts))
        rad = 6
        for i in np.nonzero(valid & (cam_pts[:, 2] > spec.min_view_depth * 0.5))[0]:
            u, v = pix[i]
            if not (rad <= u < w - rad and rad <= v < h - rad):
                continue
            iu, iv = int(u), int(v)
            yy, xx = np.mgrid[iv - rad:iv + rad + 1, iu - rad:iu + rad + 1]
            g = np.exp(-((xx - u) ** 2 + (yy - v) ** 2) / (2 * 2.5 ** 2))
            img[iv - rad:iv + rad + 1, iu - rad:iu + rad + 1] += amps[i] * g
    if spec.render_gain_jitter > 0.0:
        jr = np.random.default_rng(spec.seed + 10_000 + frame_index)
        gain = gain * (1.0 + jr.uniform(-spec.render_gain_jitter, spec.render_gain_jitter))
        bias = bias + jr.uniform(-0.5, 0.5) * spec.render_gain_jitter
    img = np.clip(gain * img + bias, 0.0, 1.0)
    return ImageBuffer(img, n_levels=4)


# -------------------------------------------------------------- serialization

def pose_line(timestamp, pose_wc):
    t = pose_wc.t
    q = pose_wc.q
    vals = [timestamp, t[0], t[1], t[2], q[0], q[1], q[2], q[3]]
    return " ".join(f"{v:.12g}" for v in vals)


def parse_pose_line(line):
    vals = [float(v) for v in line.split()]
    ts = vals[0]
    return ts, Pose(np.array(vals[4:8]), np.array(vals[1:4]))


def save_sequence(seq, outdir):
    """Write the sequence in its on-disk layout (deterministic bytes)."""
    os.makedirs(outdir, exist_ok=True)
    os.makedirs(os.path.join(outdir, "gt_points"), exist_ok=True)
    os.makedirs(os.path.join(outdir, "obs"), exist_ok=True)
    spec = seq.spec
    with open(os.path.join(outdir, "camera.txt"), "w") as fh:
        fh.write(f"{spec.fx:.12g} {spec.fy:.12g} {spec.cx:.12g} {spec.cy:.12g} "
                 f"{spec.width} {spec.height}\n")
    with open(os.path.join(outdir, "scene.txt"), "w") as fh:
        fh.write(write_config(spec))
    with open(os.path.join(outdir, "gt_trajectory.txt"), "w") as fh:
        for fr in seq.frames:
            fh.write(pose_line(fr.timestamp, fr.pose_wc) + "\n")
    for fr in seq.frames:
        with open(os.path.join(outdir, "gt_points", f"frame_{fr.index:06d}.txt"), "w") as fh:
            for i, p in enumerate(fr.points):
                fh.write(f"{i} {p[0]:.12g} {p[1]:.12g} {p[2]:.12g}\n")
        with open(os.path.join(outdir, "obs", f"frame_{fr.index:06d}.txt"), "w") as fh:
            for i in range(len(fr.points)):
                if fr.visible[i]:
                    u, v = fr.pixels[i]
                    fh.write(f"{i} {u:.12g} {v:.12g} 1\n")
                else:
                    fh.write(f"{i} -1 -1 0\n")
    if seq.images:
        os.makedirs(os.path.join(outdir, "img"), exist_ok=True)
        for fr, img in zip(seq.frames, seq.images):
            save_pgm(img.levels[0], os.path.join(outdir, "img", f"frame_{fr.index:06d}.pgm"))


def save_pgm(array, path):
    """Binary P5 grayscale with 8-bit quantization."""
    data = np.clip(np.asarray(array) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def load_pgm(path):
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"P5":
            raise ValueError(f"{path}: not a binary PGM")
        dims = fh.readline().split()
        w, h = int(dims[0]), int(dims[1])
        maxval = int(fh.readline())
        data = np.frombuffer(fh.read(w * h), dtype=np.uint8).reshape(h, w)
    return data.astype(float) / float(maxval)


def load_camera(path):
    with open(path) as fh:
        vals = fh.read().split()
    return PinholeCamera(float(vals[0]), float(vals[1]), float(vals[2]),
                         float(vals[3]), int(vals[4]), int(vals[5]))


def load_observations(path):
    """Observation file -> {id: pixel} of visible points."""
    obs = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 'id u v visible'")
            if int(parts[3]):
                obs[int(parts[0])] = np.array([float(parts[1]), float(parts[2])])
    return obs


def load_gt_points(path):
    pts = {}
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if parts:
                pts[int(parts[0])] = np.array([float(parts[1]), float(parts[2]),
                                               float(parts[3])])
    return pts


def load_scene_config(path):
    with open(path) as fh:
        return parse_config(fh.read(), SceneConfig)
