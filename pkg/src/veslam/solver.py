"""Robust sparse nonlinear least squares over pose and 3D displacement blocks.

The problem holds three residual kinds (reprojection, elastic, viscous) in
vectorized batches. Poses are 6-DoF manifold blocks updated with
right-multiplicative increments; points/displacements are plain 3-vectors.
Levenberg-Marquardt with multiplicative damping minimizes the total cost;
reprojection residuals may carry a Huber kernel. The point-point coupling
introduced by deformation residuals is tracked explicitly so callers can
reason about the Hessian structure (and the Schur trick is used only when
that coupling is absent).
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .errors import NumericalFailure
from .geometry import DEPTH_EPS, Pose, skew_many

DENSE_LIMIT = 1500


def huber_rho(s, threshold):
    """Huber cost and reweighting factor for a squared error ``s``.

    Quadratic (identity) below ``threshold**2``, linear above, with a
    continuous first derivative at the knee. Returns ``(rho, drho_ds)``;
    accepts scalars or arrays.
    """
    s = np.asarray(s, dtype=float)
    t2 = threshold * threshold
    below = s <= t2
    root = np.sqrt(np.maximum(s, t2))
    rho = np.where(below, s, 2.0 * threshold * root - t2)
    w = np.where(below, 1.0, threshold / root)
    if rho.ndim == 0:
        return float(rho), float(w)
    return rho, w


@dataclass
class SolveOptions:
    max_iters: int = 50
    grad_tol: float = 1e-10
    step_tol: float = 1e-12
    lambda_init: float = 1e-4
    lambda_up: float = 10.0
    lambda_down: float = 0.5
    lambda_max: float = 1e12


@dataclass
class SolveResult:
    initial_cost: float
    final_cost: float
    iterations: int
    converged: bool
    termination: str


@dataclass(frozen=True)
class SparsityReport:
    """Off-diagonal point-point coupling of the problem's Hessian.

    ``pairs`` holds the unordered key pairs of distinct free point blocks
    that share an elastic or viscous residual; these are exactly the nonzero
    off-diagonal point-point blocks of J^T J.
    """

    pairs: frozenset
    n_point_blocks: int
    schur_eligible: bool


class LeastSquaresProblem:
    """Residual blocks over pose and point/displacement variable blocks."""

    def __init__(self):
        self._pose_keys = {}
        self._poses = []
        self._pose_fixed = []
        self._point_keys = {}
        self._point_vals = []
        self._point_fixed = []
        self._reproj = []
        self._elastic = []
        self._viscous = []

    # ------------------------------------------------------------------ blocks

    def add_pose_block(self, key, pose, fixed=False):
        if key in self._pose_keys:
            raise ValueError(f"pose block {key!r} already added")
        self._pose_keys[key] = len(self._poses)
        self._poses.append(pose)
        self._pose_fixed.append(bool(fixed))

    def add_point_block(self, key, value, fixed=False):
        if key in self._point_keys:
            raise ValueError(f"point block {key!r} already added")
        self._point_keys[key] = len(self._point_vals)
        self._point_vals.append(np.asarray(value, dtype=float).reshape(3).copy())
        self._point_fixed.append(bool(fixed))

    def set_fixed(self, key, fixed=True):
        if key in self._pose_keys:
            self._pose_fixed[self._pose_keys[key]] = bool(fixed)
        elif key in self._point_keys:
            self._point_fixed[self._point_keys[key]] = bool(fixed)
        else:
            raise KeyError(key)

    def pose_value(self, key):
        return self._poses[self._pose_keys[key]]

    def point_value(self, key):
        return self._point_vals[self._point_keys[key]].copy()

    @property
    def n_residual_blocks(self):
        return len(self._reproj) + len(self._elastic) + len(self._viscous)

    def variable_dimension(self, include_fixed=True):
        """Total parameter dimension (6 per pose, 3 per point block)."""
        if include_fixed:
            return 6 * len(self._poses) + 3 * len(self._point_vals)
        return (6 * (len(self._poses) - sum(self._pose_fixed))
                + 3 * (len(self._point_vals) - sum(self._point_fixed)))

    # --------------------------------------------------------------- residuals

    def add_reprojection(self, pose_key, point_key, camera, observed,
                         base=None, weight=1.0, huber=None):
        """Residual w * (project(pose, base + point) - observed).

        ``point_key`` may be None when the 3D point is a constant carried in
        ``base`` (pose-only refinement). ``huber`` is the robust knee on the
        whitened residual norm, or None for a plain quadratic cost.
        """
        pid = -1 if point_key is None else self._point_keys[point_key]
        b = np.zeros(3) if base is None else np.asarray(base, dtype=float).reshape(3)
        self._reproj.append((
            self._pose_keys[pose_key], pid, np.asarray(observed, float).reshape(2),
            b, float(weight),
            float(camera.fx), float(camera.fy), float(camera.cx), float(camera.cy),
            np.nan if huber is None else float(huber)))

    def add_elastic(self, key_i, key_j, d0, k, base_i=None, base_j=None):
        """Square-root elastic residual between two (base + block) positions."""
        if d0 <= 0:
            raise ValueError("d0 must be > 0")
        ri = -1 if key_i is None else self._point_keys[key_i]
        rj = -1 if key_j is None else self._point_keys[key_j]
        bi = np.zeros(3) if base_i is None else np.asarray(base_i, float).reshape(3)
        bj = np.zeros(3) if base_j is None else np.asarray(base_j, float).reshape(3)
        self._elastic.append((ri, rj, float(d0), np.sqrt(k / d0), bi, bj))

    def add_viscous(self, cur_i, prev_i, cur_j, prev_j, b, constant=None):
        """Square-root viscous residual sqrt(b) * (di - dj - constant).

        di = x(cur_i) - x(prev_i) and dj = x(cur_j) - x(prev_j); any key may
        be None, contributing zero, with known displacements folded into
        ``constant``.
        """
        if b <= 0:
            raise ValueError("b must be > 0")
        rows = [(-1 if k is None else self._point_keys[k])
                for k in (cur_i, prev_i, cur_j, prev_j)]
        c = np.zeros(3) if constant is None else np.asarray(constant, float).reshape(3)
        self._viscous.append((rows, np.sqrt(b), c))

    def deformation_pairs(self):
        """Distinct free point-block index pairs sharing a deformation residual."""
        free = [not f for f in self._point_fixed]
        pairs = set()
        for ri, rj, *_ in self._elastic:
            if ri >= 0 and rj >= 0 and ri != rj and free[ri] and free[rj]:
                pairs.add((min(ri, rj), max(ri, rj)))
        for rows, _, _ in self._viscous:
            act = [r for r in rows if r >= 0 and free[r]]
            for a in range(len(act)):
                for b in range(a + 1, len(act)):
                    if act[a] != act[b]:
                        pairs.add((min(act[a], act[b]), max(act[a], act[b])))
        return pairs

    # ------------------------------------------------------------- compilation

    def _compile(self):
        n_pose, n_pt = len(self._poses), len(self._point_vals)
        pose_off = np.full(n_pose, -1, dtype=int)
        pt_off = np.full(n_pt, -1, dtype=int)
        col = 0
        for i in range(n_pose):
            if not self._pose_fixed[i]:
                pose_off[i] = col
                col += 6
        for i in range(n_pt):
            if not self._point_fixed[i]:
                pt_off[i] = col
                col += 3
        P = np.array(self._point_vals, dtype=float).reshape(n_pt, 3) if n_pt else np.zeros((0, 3))

        batches = []
        if self._reproj:
            batches.append(_ReprojBatch(self._reproj, pose_off, pt_off))
        if self._elastic:
            batches.append(_ElasticBatch(self._elastic, pt_off))
        if self._viscous:
            batches.append(_ViscousBatch(self._viscous, pt_off))
        return _Compiled(self, pose_off, pt_off, col, P, batches)


class _Compiled:
    def __init__(self, problem, pose_off, pt_off, n_cols, P, batches):
        self.problem = problem
        self.pose_off = pose_off
        self.pt_off = pt_off
        self.n_cols = n_cols
        self.P = P
        self.batches = batches
        self.poses = list(problem._poses)

    def pose_stacks(self, poses):
        if not poses:
            return np.zeros((0, 3, 3)), np.zeros((0, 3))
        R = np.stack([p.rotation() for p in poses])
        t = np.stack([p.t for p in poses])
        return R, t

    def cost(self, P, poses):
        R, t = self.pose_stacks(poses)
        total = 0.0
        for b in self.batches:
            c = b.cost(P, R, t)
            if c is None:
                return None
            total += c
        return total

    def gradient_and_hessian(self, P, poses):
        """Robustified cost, gradient and normal-matrix triplets."""
        R, t = self.pose_stacks(poses)
        g = np.zeros(self.n_cols)
        rows, cols, data = [], [], []
        total = 0.0
        for b in self.batches:
            out = b.full(P, R, t)
            if out is None:
                return None, None, None
            c, r, slots = out
            total += c
            _accumulate(r, slots, g, rows, cols, data)
        return total, g, (rows, cols, data)

    def schur_eligible(self):
        has_free_pose = (self.pose_off >= 0).any() if len(self.pose_off) else False
        has_free_pt = (self.pt_off >= 0).any() if len(self.pt_off) else False
        return (has_free_pose and has_free_pt
                and not self.problem.deformation_pairs())

    def apply_step(self, P, poses, dx):
        newP = P.copy()
        for i, off in enumerate(self.pt_off):
            if off >= 0:
                newP[i] = P[i] + dx[off:off + 3]
        new_poses = []
        for i, pose in enumerate(poses):
            off = self.pose_off[i]
            new_poses.append(pose.retract(dx[off:off + 6]) if off >= 0 else pose)
        return newP, new_poses


def _cols_for(rows, off):
    """Column offsets for block rows; -1 for fixed/absent blocks."""
    if len(off) == 0:
        return np.full(rows.shape, -1, dtype=int)
    return np.where(rows >= 0, off[np.clip(rows, 0, None)], -1)


def _accumulate(r, slots, g, rows_out, cols_out, data_out):
    for off_a, Ja in slots:
        va = off_a >= 0
        if va.any():
            da = Ja.shape[2]
            ga = np.einsum('nij,ni->nj', Ja[va], r[va])
            idx = (off_a[va][:, None] + np.arange(da)[None, :]).ravel()
            np.add.at(g, idx, ga.ravel())
    for off_a, Ja in slots:
        for off_b, Jb in slots:
            m = (off_a >= 0) & (off_b >= 0)
            if not m.any():
                continue
            blocks = np.einsum('nij,nik->njk', Ja[m], Jb[m])
            da, db = Ja.shape[2], Jb.shape[2]
            ra = off_a[m][:, None, None] + np.arange(da)[None, :, None]
            ca = off_b[m][:, None, None] + np.arange(db)[None, None, :]
            rows_out.append(np.broadcast_to(ra, blocks.shape).ravel())
            cols_out.append(np.broadcast_to(ca, blocks.shape).ravel())
            data_out.append(blocks.ravel())


class _ReprojBatch:
    kind = "reprojection"

    def __init__(self, items, pose_off, pt_off):
        n = len(items)
        self.pose_idx = np.array([it[0] for it in items], dtype=int)
        self.pt_row = np.array([it[1] for it in items], dtype=int)
        self.obs = np.array([it[2] for it in items])
        self.base = np.array([it[3] for it in items])
        self.w = np.array([it[4] for it in items])
        self.fx = np.array([it[5] for it in items])
        self.fy = np.array([it[6] for it in items])
        self.cx = np.array([it[7] for it in items])
        self.cy = np.array([it[8] for it in items])
        self.huber = np.array([it[9] for it in items])
        self.pose_cols = pose_off[self.pose_idx]
        self.pt_cols = _cols_for(self.pt_row, pt_off)
        self.robust = np.isfinite(self.huber)

    def _points(self, P):
        X = self.base.copy()
        m = self.pt_row >= 0
        if m.any():
            X[m] += P[self.pt_row[m]]
        return X

    def _residual(self, P, Rall, tall):
        X = self._points(P)
        Rg = Rall[self.pose_idx]
        pc = np.einsum('nij,nj->ni', Rg, X) + tall[self.pose_idx]
        z = pc[:, 2]
        if (z <= DEPTH_EPS).any():
            return None
        iz = 1.0 / z
        u = np.stack([self.fx * pc[:, 0] * iz + self.cx,
                      self.fy * pc[:, 1] * iz + self.cy], axis=1)
        r = (u - self.obs) * self.w[:, None]
        return X, Rg, pc, iz, r

    def _cost_terms(self, r):
        s = np.sum(r * r, axis=1)
        rho = s.copy()
        scale = np.ones(len(s))
        if self.robust.any():
            t = self.huber[self.robust]
            t2 = t * t
            sr = s[self.robust]
            below = sr <= t2
            root = np.sqrt(np.maximum(sr, t2))
            rho[self.robust] = np.where(below, sr, 2.0 * t * root - t2)
            scale[self.robust] = np.sqrt(np.where(below, 1.0, t / root))
        return float(rho.sum()), scale

    def cost(self, P, Rall, tall):
        out = self._residual(P, Rall, tall)
        if out is None:
            return None
        cost, _ = self._cost_terms(out[4])
        return cost

    def full(self, P, Rall, tall):
        out = self._residual(P, Rall, tall)
        if out is None:
            return None
        X, Rg, pc, iz, r = out
        cost, scale = self._cost_terms(r)
        n = len(r)
        A = np.zeros((n, 2, 3))
        A[:, 0, 0] = self.fx * iz
        A[:, 0, 2] = -self.fx * pc[:, 0] * iz * iz
        A[:, 1, 1] = self.fy * iz
        A[:, 1, 2] = -self.fy * pc[:, 1] * iz * iz
        B = np.einsum('nij,njk->nik', A, Rg)  # d(pixel)/d(world point)
        sw = (self.w * scale)
        Jpt = B * sw[:, None, None]
        Jpose = np.empty((n, 2, 6))
        Jpose[:, :, :3] = -np.einsum('nij,njk->nik', B, skew_many(X))
        Jpose[:, :, 3:] = B
        Jpose *= sw[:, None, None]
        r = r * scale[:, None]
        return cost, r, [(self.pose_cols, Jpose), (self.pt_cols, Jpt)]

    def whitened_errors(self, P, Rall, tall):
        """Per-residual whitened pixel error norms (inf where depth invalid)."""
        X = self._points(P)
        Rg = Rall[self.pose_idx]
        pc = np.einsum('nij,nj->ni', Rg, X) + tall[self.pose_idx]
        z = pc[:, 2]
        bad = z <= DEPTH_EPS
        zs = np.where(bad, 1.0, z)
        u = np.stack([self.fx * pc[:, 0] / zs + self.cx,
                      self.fy * pc[:, 1] / zs + self.cy], axis=1)
        err = np.linalg.norm((u - self.obs) * self.w[:, None], axis=1)
        err[bad] = np.inf
        return err


class _ElasticBatch:
    kind = "elastic"

    def __init__(self, items, pt_off):
        self.ri = np.array([it[0] for it in items], dtype=int)
        self.rj = np.array([it[1] for it in items], dtype=int)
        self.d0 = np.array([it[2] for it in items])
        self.coeff = np.array([it[3] for it in items])
        self.bi = np.array([it[4] for it in items])
        self.bj = np.array([it[5] for it in items])
        self.ci = _cols_for(self.ri, pt_off)
        self.cj = _cols_for(self.rj, pt_off)

    def _diff(self, P):
        xi = self.bi.copy()
        m = self.ri >= 0
        if m.any():
            xi[m] += P[self.ri[m]]
        xj = self.bj.copy()
        m = self.rj >= 0
        if m.any():
            xj[m] += P[self.rj[m]]
        return xi - xj

    def cost(self, P, Rall, tall):
        diff = self._diff(P)
        d = np.linalg.norm(diff, axis=1)
        r = self.coeff * (d - self.d0)
        return float(np.sum(r * r))

    def full(self, P, Rall, tall):
        diff = self._diff(P)
        d = np.linalg.norm(diff, axis=1)
        r = (self.coeff * (d - self.d0))[:, None]
        safe = np.where(d < 1e-9, 1.0, d)
        dirn = diff / safe[:, None]
        dirn[d < 1e-9] = 0.0  # coincident points: no usable direction
        Ji = (self.coeff[:, None] * dirn)[:, None, :]
        return float(np.sum(r * r)), r, [(self.ci, Ji), (self.cj, -Ji)]

    def energies(self, P):
        diff = self._diff(P)
        d = np.linalg.norm(diff, axis=1)
        r = self.coeff * (d - self.d0)
        return r * r


class _ViscousBatch:
    kind = "viscous"

    _signs = (1.0, -1.0, -1.0, 1.0)

    def __init__(self, items, pt_off):
        self.rows = np.array([it[0] for it in items], dtype=int)
        self.sqrtb = np.array([it[1] for it in items])
        self.const = np.array([it[2] for it in items])
        self.cols = _cols_for(self.rows, pt_off)

    def _value(self, P):
        n = len(self.rows)
        V = np.zeros((n, 4, 3))
        for s in range(4):
            m = self.rows[:, s] >= 0
            if m.any():
                V[m, s] = P[self.rows[m, s]]
        return V[:, 0] - V[:, 1] - V[:, 2] + V[:, 3] - self.const

    def cost(self, P, Rall, tall):
        r = self.sqrtb[:, None] * self._value(P)
        return float(np.sum(r * r))

    def full(self, P, Rall, tall):
        n = len(self.rows)
        r = self.sqrtb[:, None] * self._value(P)
        eye = np.eye(3)
        slots = []
        for s in range(4):
            J = (self._signs[s] * self.sqrtb)[:, None, None] * eye[None, :, :]
            slots.append((self.cols[:, s], J))
        return float(np.sum(r * r)), r, slots

    def energies(self, P):
        r = self.sqrtb[:, None] * self._value(P)
        return np.sum(r * r, axis=1)


def hessian_sparsity(problem):
    """Report the off-diagonal point-point structure the problem induces."""
    idx_pairs = problem.deformation_pairs()
    rev = {v: k for k, v in problem._point_keys.items()}
    pairs = frozenset((rev[a], rev[b]) for a, b in idx_pairs)
    comp = problem._compile()
    return SparsityReport(pairs=pairs,
                          n_point_blocks=len(problem._point_vals),
                          schur_eligible=comp.schur_eligible())


def normal_equations(problem):
    """Dense J^T J and gradient at the current values, for inspection.

    Returns (H, g, offsets) where ``offsets`` maps each free block key to its
    (column, dimension) slice. Intended for tests and diagnostics at desk
    scale only.
    """
    comp = problem._compile()
    cost, g, (rows, cols, data) = comp.gradient_and_hessian(comp.P, comp.poses)
    if cost is None:
        raise NumericalFailure("invalid state (non-positive depth)")
    H = np.zeros((comp.n_cols, comp.n_cols))
    if rows:
        np.add.at(H, (np.concatenate(rows), np.concatenate(cols)), np.concatenate(data))
    offsets = {}
    for key, i in problem._pose_keys.items():
        if comp.pose_off[i] >= 0:
            offsets[key] = (int(comp.pose_off[i]), 6)
    for key, i in problem._point_keys.items():
        if comp.pt_off[i] >= 0:
            offsets[key] = (int(comp.pt_off[i]), 3)
    return H, g, offsets


def _solve_dense(H, g, lam):
    Hd = H.copy()
    d = np.diag(Hd).copy()
    d[d <= 0] = 1e-12
    Hd[np.diag_indices_from(Hd)] = d * (1.0 + lam)
    try:
        c, low = scipy.linalg.cho_factor(Hd, check_finite=False)
        return scipy.linalg.cho_solve((c, low), -g, check_finite=False)
    except (scipy.linalg.LinAlgError, ValueError):
        return None


def _solve_schur(H, g, lam, n_pose_cols):
    """Eliminate the block-diagonal point Hessian, solve poses, back-substitute."""
    Hd = H.copy()
    d = np.diag(Hd).copy()
    d[d <= 0] = 1e-12
    Hd[np.diag_indices_from(Hd)] = d * (1.0 + lam)
    np_c = n_pose_cols
    Hpp = Hd[:np_c, :np_c]
    E = Hd[:np_c, np_c:]
    gl = g[np_c:]
    n_pts = (Hd.shape[0] - np_c) // 3
    blocks = Hd[np_c:, np_c:].reshape(n_pts, 3, n_pts, 3)
    diag_blocks = blocks[np.arange(n_pts), :, np.arange(n_pts), :]
    try:
        inv_blocks = np.linalg.inv(diag_blocks)
    except np.linalg.LinAlgError:
        return None
    E3 = E.reshape(np_c, n_pts, 3)
    EWinv = np.einsum('anj,njk->ank', E3, inv_blocks)
    S = Hpp - np.einsum('ank,bnk->ab', EWinv, E3)
    rhs = -g[:np_c] - np.einsum('ank,nk->a', EWinv, -gl.reshape(n_pts, 3))
    try:
        c, low = scipy.linalg.cho_factor(S, check_finite=False)
        dp = scipy.linalg.cho_solve((c, low), rhs, check_finite=False)
    except (scipy.linalg.LinAlgError, ValueError):
        return None
    resid = (-gl.reshape(n_pts, 3)
             - np.einsum('anj,a->nj', E3, dp))
    dl = np.einsum('njk,nk->nj', inv_blocks, resid)
    return np.concatenate([dp, dl.ravel()])


def _solve_sparse(rows, cols, data, g, lam, n):
    H = scipy.sparse.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n)).tocsc()
    d = H.diagonal()
    d[d <= 0] = 1e-12
    Hd = H + scipy.sparse.diags(lam * d)
    try:
        dx = scipy.sparse.linalg.spsolve(Hd, -g)
    except RuntimeError:
        return None
    if not np.all(np.isfinite(dx)):
        return None
    return dx


def solve(problem, options=None):
    """Minimize the total robustified cost; updates block values in place.

    Accepted steps never increase the cost. Terminates on gradient norm,
    step norm or the iteration cap; raises NumericalFailure when the damped
    normal equations stay unsolvable up to the damping ceiling.
    """
    opts = options or SolveOptions()
    comp = problem._compile()
    if comp.n_cols == 0:
        raise ValueError("problem has no free variables")
    if problem.n_residual_blocks == 0:
        raise ValueError("problem has no residuals")

    P, poses = comp.P, comp.poses
    cost = comp.cost(P, poses)
    if cost is None:
        raise NumericalFailure("invalid initial state (non-positive depth)")
    initial_cost = cost
    lam = opts.lambda_init
    n_pose_cols = int((comp.pose_off >= 0).sum()) * 6
    use_dense = comp.n_cols <= DENSE_LIMIT
    use_schur = comp.schur_eligible() and n_pose_cols > 0 and comp.n_cols > n_pose_cols

    iterations = 0
    termination = "max_iters"
    converged = False
    for _ in range(opts.max_iters):
        iterations += 1
        total, g, (rows, cols, data) = comp.gradient_and_hessian(P, poses)
        if total is None:
            raise NumericalFailure("state became invalid")
        cost = total
        if np.linalg.norm(g, ord=np.inf) < opts.grad_tol:
            termination, converged = "gradient", True
            break

        H = None
        if use_dense or use_schur:
            H = np.zeros((comp.n_cols, comp.n_cols))
            np.add.at(H, (np.concatenate(rows), np.concatenate(cols)), np.concatenate(data))

        accepted = False
        while True:
            if use_schur:
                dx = _solve_schur(H, g, lam, n_pose_cols)
            elif use_dense:
                dx = _solve_dense(H, g, lam)
            else:
                dx = _solve_sparse(rows, cols, data, g, lam, comp.n_cols)
            if dx is None or not np.all(np.isfinite(dx)):
                lam *= opts.lambda_up
                if lam > opts.lambda_max:
                    raise NumericalFailure("normal equations singular beyond damping recovery")
                continue
            if np.linalg.norm(dx) < opts.step_tol:
                termination, converged = "step", True
                break
            trialP, trial_poses = comp.apply_step(P, poses, dx)
            trial_cost = comp.cost(trialP, trial_poses)
            if trial_cost is not None and trial_cost < cost:
                P, poses, cost = trialP, trial_poses, trial_cost
                lam = max(lam * opts.lambda_down, 1e-12)
                accepted = True
                break
            lam *= opts.lambda_up
            if lam > opts.lambda_max:
                termination, converged = "step", True
                break
        if not accepted:
            break

    # write back
    for key, i in problem._point_keys.items():
        problem._point_vals[i][:] = P[i]
    for key, i in problem._pose_keys.items():
        problem._poses[i] = poses[i]
    problem._last_compiled = comp
    comp.P, comp.poses = P, poses
    return SolveResult(initial_cost=initial_cost, final_cost=cost,
                       iterations=iterations, converged=converged,
                       termination=termination)


def reprojection_errors(problem):
    """Whitened reprojection error norm per reprojection residual, in order."""
    comp = problem._compile()
    R, t = comp.pose_stacks(comp.poses)
    for b in comp.batches:
        if isinstance(b, _ReprojBatch):
            return b.whitened_errors(comp.P, R, t)
    return np.zeros(0)


def total_cost(problem):
    """Robustified total cost at the problem's current values."""
    comp = problem._compile()
    c = comp.cost(comp.P, comp.poses)
    if c is None:
        raise NumericalFailure("invalid state (non-positive depth)")
    return c
