"""Per-frame processing: photometric data association and deformable tracking.

Short-term association runs a multi-scale Lucas-Kanade tracker with per-point
gain/bias compensation, gated by the structural similarity index. The joint
camera + deformation estimate is seeded with a constant-velocity model refined
by a rigid pose-only fit, then solved over pose and per-point displacements
with the visco-elastic regularizers selected through the deformation graph.

The optimizer consumes matches as a plain ``{point_id: pixel}`` mapping, so
matches produced by the Lucas-Kanade tracker and matches taken directly from
a synthetic observation stream follow the same code path.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import Diverged, OutOfBounds, TrackingLost
from .image import ImageBuffer, bilinear_sample, extract_patch, patch_offsets, shi_tomasi
from .solver import LeastSquaresProblem, SolveOptions, reprojection_errors, solve


def ssim(patch_x, patch_y, c1=1e-4, c2=9e-4):
    """Structural similarity of two equal-size patches, in [-1, 1]."""
    x = np.asarray(patch_x, dtype=float)
    y = np.asarray(patch_y, dtype=float)
    if x.shape != y.shape:
        raise ValueError("patches must have the same shape")
    if min(x.shape) < 3:
        raise ValueError("patches must be at least 3x3")
    mx, my = x.mean(), y.mean()
    vx = ((x - mx) ** 2).mean()
    vy = ((y - my) ** 2).mean()
    cxy = ((x - mx) * (y - my)).mean()
    return float(((2 * mx * my + c1) * (2 * cxy + c2))
                 / ((mx * mx + my * my + c1) * (vx + vy + c2)))


@dataclass
class LkResult:
    position: np.ndarray
    displacement: np.ndarray
    alpha: float
    beta: float
    converged: bool


_ITER_CLAMP = 1.5  # px, keeps Gauss-Newton steps inside the linearization range


def _lk_level(patch, img, gx, gy, pos, alpha, beta, max_iters, tol, step_cap):
    """One pyramid level: closed-form gain/bias, Gauss-Newton displacement."""
    size = patch.shape[0]
    r = size // 2
    dx, dy = patch_offsets(size)
    ref = patch.ravel()
    ref_mean = ref.mean()
    h, w = img.shape
    x, y = pos
    converged = False
    for _ in range(max_iters):
        if not (r <= x <= w - 1 - r and r <= y <= h - 1 - r):
            raise OutOfBounds(f"patch at ({x:.1f}, {y:.1f}) exits {w}x{h} level")
        xs, ys = x + dx, y + dy
        cur = bilinear_sample(img, xs, ys)
        cur_mean = cur.mean()
        var_cur = float(np.mean((cur - cur_mean) ** 2))
        if var_cur < 1e-8:
            raise Diverged("flat patch, gain unobservable")
        # optimal affine photometric parameters for the current displacement
        alpha = float(np.mean((cur - cur_mean) * (ref - ref_mean))) / var_cur
        if alpha <= 1e-3:
            raise Diverged("non-positive photometric gain")
        beta = ref_mean - alpha * cur_mean
        res = ref - alpha * cur - beta
        J = np.column_stack([
            -alpha * bilinear_sample(gx, xs, ys),
            -alpha * bilinear_sample(gy, xs, ys),
        ])
        H = J.T @ J
        eig_min = 0.5 * (H[0, 0] + H[1, 1] - np.hypot(H[0, 0] - H[1, 1], 2 * H[0, 1]))
        if eig_min < 1e-10:
            raise Diverged("zero image gradient in patch")
        step = np.linalg.solve(H, -(J.T @ res))
        dnorm = np.hypot(step[0], step[1])
        if dnorm > _ITER_CLAMP:
            step *= _ITER_CLAMP / dnorm  # bounded update, linearization range
        x += step[0]
        y += step[1]
        if np.hypot(x - pos[0], y - pos[1]) > step_cap:
            raise Diverged(f"level excursion exceeds cap {step_cap} px")
        if dnorm < tol:
            converged = True
            break
    if not (r <= x <= w - 1 - r and r <= y <= h - 1 - r):
        raise OutOfBounds("patch exits image after update")
    return np.array([x, y]), alpha, beta, converged


def lk_track(ref_patches, target, seed_pixel, alpha=1.0, beta=0.0,
             max_iters=40, tol=5e-3, step_cap=6.0):
    """Coarse-to-fine photometric match of a reference patch pyramid.

    ``ref_patches`` holds one square patch per pyramid level (level 0 first);
    ``target`` is an ImageBuffer. The returned displacement is relative to
    ``seed_pixel``. Raises OutOfBounds / Diverged on failure.
    """
    seed = np.asarray(seed_pixel, dtype=float)
    n_levels = min(len(ref_patches), target.n_levels)
    pos = seed.copy()
    converged = False
    for level in range(n_levels - 1, -1, -1):
        img = target.levels[level]
        gy, gx = target.gradients(level)
        scale = 2.0 ** level
        pos_l = pos / scale
        r = ref_patches[level].shape[0] // 2
        h, w = img.shape
        fits = (r + 2 <= pos_l[0] <= w - 3 - r) and (r + 2 <= pos_l[1] <= h - 3 - r)
        if level > 0 and not fits:
            continue  # coarse levels are optional refinements
        try:
            pos_l, alpha, beta, converged = _lk_level(
                ref_patches[level], img, gx, gy, pos_l, alpha, beta,
                max_iters, tol, step_cap)
        except (OutOfBounds, Diverged):
            if level == 0:
                raise
            continue
        pos = pos_l * scale
    if alpha <= 0.0:
        converged = False
    return LkResult(position=pos, displacement=pos - seed,
                    alpha=alpha, beta=beta, converged=converged)


@dataclass
class FeatureTrack:
    """One tracked keypoint with its reference patch pyramid."""

    id: int
    ref_patches: list
    pixel: np.ndarray
    alpha: float = 1.0
    beta: float = 0.0
    status: str = "tracked"
    patch_age: int = 0


def patch_pyramid(image, pixel, size, n_levels):
    """Patches of one keypoint across pyramid levels (skips levels it exits)."""
    patches = []
    for level in range(min(n_levels, image.n_levels)):
        scale = 2.0 ** level
        try:
            patches.append(extract_patch(image.levels[level],
                                         np.asarray(pixel) / scale, size))
        except ValueError:
            break
    return patches


class LkMatcher:
    """Short-term data association on rendered images."""

    def __init__(self, config, camera):
        self.config = config
        self.camera = camera
        self.tracks = {}
        self._next_id = 0

    def start_tracks(self, image, pixels=None, ids=None):
        """Create tracks at detected corners or at the given pixels."""
        cfg = self.config
        if pixels is None:
            pixels = shi_tomasi(image, max_features=cfg.max_features,
                                nms_radius=cfg.shi_tomasi_radius,
                                margin=cfg.patch_size // 2 + 2)
        created = []
        for n, px in enumerate(pixels):
            tid = ids[n] if ids is not None else self._next_id
            self._next_id = max(self._next_id, tid + 1) if isinstance(tid, int) else self._next_id
            patches = patch_pyramid(image, px, cfg.patch_size, cfg.pyramid_levels)
            if not patches:
                continue
            self.tracks[tid] = FeatureTrack(id=tid, ref_patches=patches,
                                            pixel=np.asarray(px, dtype=float))
            created.append(tid)
        return created

    def track(self, image, seeds=None, only_ids=None):
        """Advance all (or selected) tracks into ``image``.

        Returns ``{id: pixel}`` for tracks that converged and passed the
        SSIM gate; other tracks are marked lost.
        """
        cfg = self.config
        matches = {}
        ids = sorted(self.tracks) if only_ids is None else sorted(only_ids)
        for tid in ids:
            tr = self.tracks.get(tid)
            if tr is None or tr.status not in ("tracked", "lost", "outlier"):
                continue
            if only_ids is None and tr.status != "tracked":
                continue
            seed = tr.pixel if seeds is None or tid not in seeds else seeds[tid]
            try:
                out = lk_track(tr.ref_patches, image, seed, tr.alpha, tr.beta,
                               step_cap=cfg.lk_step_cap)
            except (OutOfBounds, Diverged):
                tr.status = "lost"
                continue
            if not out.converged:
                tr.status = "lost"
                continue
            try:
                cur = extract_patch(image.levels[0], out.position, cfg.patch_size)
            except ValueError:
                tr.status = "lost"
                continue
            if ssim(tr.ref_patches[0], cur, cfg.ssim_c1, cfg.ssim_c2) < cfg.ssim_threshold:
                tr.status = "outlier"
                continue
            tr.pixel = out.position
            tr.alpha, tr.beta = out.alpha, out.beta
            tr.status = "tracked"
            tr.patch_age += 1
            matches[tid] = out.position.copy()
        return matches

    def refresh_patches(self, image):
        """Re-extract reference patches for tracks that reached the refresh age."""
        cfg = self.config
        for tr in self.tracks.values():
            if tr.status == "tracked" and tr.patch_age >= cfg.patch_refresh:
                patches = patch_pyramid(image, tr.pixel, cfg.patch_size, cfg.pyramid_levels)
                if patches:
                    tr.ref_patches = patches
                    tr.patch_age = 0
                    tr.alpha, tr.beta = 1.0, 0.0


@dataclass
class TrackingResult:
    frame_id: int
    pose: object
    displacements: dict
    inliers: set
    outliers: set
    cost: float
    n_matched: int

    def mean_displacement(self):
        if not self.inliers:
            return 0.0
        return float(np.mean([np.linalg.norm(self.displacements.get(pid, np.zeros(3)))
                              for pid in sorted(self.inliers)]))


def compute_seed(pose_history, matches, positions, config, camera):
    """Constant-velocity extrapolation refined by a rigid pose-only fit.

    ``pose_history`` is the list of previous world-to-camera poses in time
    order; ``positions`` maps point id to its latest 3D estimate.
    """
    from .geometry import Pose

    if not pose_history:
        seed = Pose.identity()
    elif len(pose_history) == 1:
        seed = pose_history[-1]
    else:
        motion = pose_history[-1].compose(pose_history[-2].inverse())
        seed = motion.compose(pose_history[-1])
    if len(matches) < 3:
        return seed
    prob = LeastSquaresProblem()
    prob.add_pose_block("T", seed)
    for pid in sorted(matches):
        prob.add_reprojection("T", None, camera, matches[pid],
                              base=positions[pid],
                              weight=1.0 / config.pixel_sigma,
                              huber=config.huber_px)
    try:
        solve(prob, SolveOptions(max_iters=config.max_iters_tracking))
    except Exception:
        return seed
    return prob.pose_value("T")


def build_tracking_problem(slam_map, matches, seed_pose, config, camera):
    """Joint pose + displacement problem for one frame.

    Deformation residuals are instantiated per tracked point over its
    degree-capped partners in the deformation graph, so each point
    contributes at most D elastic and D viscous terms.
    """
    prob = LeastSquaresProblem()
    prob.add_pose_block("T", seed_pose)
    ids = sorted(matches)
    bases = {pid: slam_map.points[pid].latest_position() for pid in ids}
    deform = config.deformation
    if deform:
        for pid in ids:
            prob.add_point_block(pid, np.zeros(3))
    for pid in ids:
        prob.add_reprojection("T", pid if deform else None, camera, matches[pid],
                              base=bases[pid],
                              weight=1.0 / config.pixel_sigma,
                              huber=config.huber_px)
    if deform:
        graph = slam_map.graph
        matched = set(ids)
        for pid in ids:
            if pid not in graph:
                continue
            for j in graph.regularization_partners(pid, config.max_degree):
                if j not in matched:
                    continue
                edge = graph.edge(pid, j)
                prob.add_elastic(pid, j, d0=edge.state.d0, k=config.elastic_k,
                                 base_i=bases[pid], base_j=bases[j])
                prob.add_viscous(pid, None, j, None, edge.state.b)
    return prob, ids, bases


def track_frame(slam_map, matches, pose_history, config, camera, frame_id):
    """Estimate pose and per-point displacements for one frame.

    Solves the reprojection + visco-elastic cost, gates outliers on the
    robust knee, writes updated point positions into the map, folds the new
    distances into the deformation graph and prunes over-stretched edges.
    Raises TrackingLost when fewer than ``config.min_tracked`` points are
    available or survive.
    """
    usable = {pid: px for pid, px in matches.items() if pid in slam_map.points}
    if len(usable) < config.min_tracked:
        raise TrackingLost(f"{len(usable)} usable matches < {config.min_tracked}")

    positions = {pid: slam_map.points[pid].latest_position() for pid in usable}
    seed_pose = compute_seed(pose_history, usable, positions, config, camera)
    prob, ids, bases = build_tracking_problem(slam_map, usable, seed_pose, config, camera)
    result = solve(prob, SolveOptions(max_iters=config.max_iters_tracking,
                                      grad_tol=config.grad_tol, step_tol=config.step_tol))
    pose = prob.pose_value("T")
    errs = reprojection_errors(prob)  # same order as ids
    inliers, outliers = set(), set()
    for pid, e in zip(ids, errs):
        (inliers if e <= config.huber_px else outliers).add(pid)
    if len(inliers) < config.min_tracked:
        raise TrackingLost(f"{len(inliers)} inliers < {config.min_tracked}")

    deform = config.deformation
    displacements = {pid: (prob.point_value(pid) if deform else np.zeros(3)) for pid in ids}
    new_positions = {}
    for pid in ids:
        if pid in inliers:
            pos = bases[pid] + displacements[pid]
            slam_map.points[pid].set_position(frame_id, pos)
            slam_map.points[pid].status = "tracked"
            new_positions[pid] = pos
        else:
            slam_map.points[pid].status = "outlier"
    for pid, mp in slam_map.points.items():
        if pid not in usable and mp.status == "tracked":
            mp.status = "lost"

    slam_map.graph.update_distances(new_positions)
    slam_map.graph.prune_stretched(config.th_stretching)
    return TrackingResult(frame_id=frame_id, pose=pose,
                          displacements={pid: displacements[pid] for pid in inliers},
                          inliers=inliers, outliers=outliers,
                          cost=result.final_cost, n_matched=len(ids))


def midterm_reassociate(slam_map, result, config, camera, frame_id,
                        observations=None, matcher=None, image=None):
    """Guided re-matching of lost/outlier map points in the current frame.

    Candidate points get 3D seeds propagated from their tracked deformation
    graph neighbors, or their last known in-frustum position otherwise; the
    seed is projected and matched around the projection. Returns the
    ``{id: pixel}`` matches of recovered points after recording their seed
    positions in the map.
    """
    pose = result.pose
    recovered = {}
    margin = config.patch_size // 2 + 1
    graph = slam_map.graph
    for pid in sorted(slam_map.points):
        mp = slam_map.points[pid]
        if mp.status not in ("lost", "outlier"):
            continue
        last_pos = mp.latest_position()
        seed_pos = None
        if pid in graph:
            nbr_deltas = [result.displacements[j] for j in graph.neighbors[pid]
                          if j in result.displacements]
            if nbr_deltas:
                seed_pos = last_pos + np.mean(nbr_deltas, axis=0)
        if seed_pos is None:
            seed_pos = last_pos
        cam_pt = pose.apply(seed_pos)
        if cam_pt[2] <= 1e-9:
            continue
        seed_px, _ = camera.project_array(cam_pt[None, :])
        seed_px = seed_px[0]
        if not camera.in_image(seed_px, margin=margin):
            continue
        matched_px = None
        if observations is not None:
            obs = observations.get(pid)
            if obs is not None and np.linalg.norm(obs - seed_px) <= config.recover_search_px:
                matched_px = np.asarray(obs, dtype=float)
        elif matcher is not None and image is not None:
            got = matcher.track(image, seeds={pid: seed_px}, only_ids=[pid])
            if pid in got:
                matched_px = got[pid]
        if matched_px is None:
            continue
        mp.set_position(frame_id, seed_pos)
        mp.status = "tracked"
        recovered[pid] = matched_px
    return recovered
