"""Run and scene configuration, parseable from ``key = value`` text files.

Every tunable has a documented default; unknown keys are rejected so stale
configs fail loudly. ``#`` starts a comment, blank lines are ignored.
"""

import dataclasses
from dataclasses import dataclass

from .errors import ConfigError


@dataclass
class RunConfig:
    """All SLAM pipeline tunables."""

    # deformation model
    elastic_k: float = 1.0           # spring stiffness, global
    th_stretching: float = 0.3       # relative stretch pruning threshold
    max_degree: int = 3              # regularization degree cap D
    knn: int = 6                     # neighbors at geometric graph build

    # solver
    pixel_sigma: float = 1.0         # reprojection std, px (level-0 features)
    huber_px: float = 2.45           # robust knee on whitened pixel error
    max_iters_tracking: int = 15
    max_iters_dba: int = 10
    grad_tol: float = 1e-8
    step_tol: float = 1e-10

    # front end
    patch_size: int = 11             # odd side of tracking patches
    pyramid_levels: int = 4
    patch_refresh: int = 5           # frames between reference patch updates
    ssim_threshold: float = 0.7
    ssim_c1: float = 0.0001          # (0.01)^2 on [0, 1] intensities
    ssim_c2: float = 0.0009          # (0.03)^2
    min_tracked: int = 10            # below this the frame is lost
    lk_step_cap: float = 6.0         # per-level excursion limit, px
    shi_tomasi_radius: int = 8       # non-maximal suppression radius
    max_features: int = 300
    recover_search_px: float = 8.0   # guided re-match acceptance radius
    recover_reopt_min: int = 5       # re-optimize frame when this many recover

    # mapping
    window_keyframes: int = 5        # sliding DBA window size
    kf_inlier_ratio: float = 0.7     # insert keyframe below this overlap
    kf_max_gap: int = 10             # or after this many frames
    frame_buffer: int = 10           # rolling triangulation window |F|
    reproj_gate_px: float = 2.0
    rigidity_frac: float = 0.005     # rigid triangulation gate, of mean depth
    parallax_floor_deg: float = 0.3
    init_parallax_deg: float = 2.0   # operative parallax before trying init
    init_min_tracks: int = 8
    init_max_reproj_px: float = 2.0
    mean_depth: float = 30.0         # post-init map scale, scene mm
    triang_neighbors: int = 5
    triang_min_frames: int = 3
    viscous_gate_floor: float = 0.01 # lower bound of the viscous accept gate
    dbscan_eps: float = 4.0          # flow-shape clustering radius, px
    dbscan_min_samples: int = 3
    essential_threshold_deg: float = 0.5
    essential_iterations: int = 100

    # pipeline
    mode: str = "direct"             # direct | images
    deformation: bool = True         # False: rigid ablation, displacements frozen
    seed: int = 0


@dataclass
class SceneConfig:
    """Synthetic scene, trajectory, camera and observation-noise parameters."""

    topology: str = "tube"           # tube | plane | two_surfaces
    n_points: int = 300
    n_frames: int = 100
    fps: float = 30.0
    amplitude: float = 0.0           # deformation amplitude A, scene mm
    omega: float = 0.0               # deformation angular frequency, rad/s
    phase_scale: float = 0.05        # rad per mm of rest coordinate sum
    sigma_px: float = 0.3
    seed: int = 0

    # tube topology
    tube_radius: float = 22.0
    tube_length: float = 400.0
    haustra_amp: float = 0.08        # relative radial ripple depth
    haustra_wavelength: float = 30.0

    # plane / two_surfaces topology
    extent: float = 40.0
    plane_depth: float = 30.0
    surface_gap: float = 2.0

    # camera trajectory
    forward_speed: float = 25.0      # mm/s
    sway_amp: float = 2.5            # mm
    sway_period: float = 2.0         # s

    # camera intrinsics
    fx: float = 240.0
    fy: float = 240.0
    cx: float = 240.0
    cy: float = 180.0
    width: int = 480
    height: int = 360

    # observations
    min_view_depth: float = 6.0
    max_view_depth: float = 60.0
    visibility_margin: float = 6.0   # px from image border

    # rendering
    render: bool = False
    render_gain_jitter: float = 0.0  # per-frame affine illumination amplitude


PRESETS = {
    "simulated-0": (0.0, 0.0),
    "simulated-1": (2.5, 2.5),
    "simulated-2": (2.5, 5.0),
    "simulated-3": (5.0, 2.5),
    "simulated-4": (5.0, 5.0),
    "simulated-5": (10.0, 2.5),
    "simulated-6": (10.0, 5.0),
}


def apply_preset(scene, preset):
    """Set the (amplitude, omega) pair of a named deformation preset."""
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; have {sorted(PRESETS)}")
    scene.amplitude, scene.omega = PRESETS[preset]
    return scene


def _convert(name, raw, ftype):
    raw = raw.strip()
    try:
        if ftype is bool:
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if ftype is int:
            return int(raw)
        if ftype is float:
            return float(raw)
        return raw
    except ValueError as e:
        raise ConfigError(f"bad value for {name}: {raw!r}") from e


def parse_config(text, cls):
    """Build a config dataclass from ``key = value`` text."""
    fields = {f.name: f.type for f in dataclasses.fields(cls)}
    types = {"float": float, "int": int, "bool": bool, "str": str}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in stripped.split("=", 1))
        if key not in fields:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        ftype = fields[key]
        if isinstance(ftype, str):
            ftype = types[ftype]
        values[key] = _convert(key, raw, ftype)
    return cls(**values)


def write_config(cfg):
    """Serialize a config dataclass to ``key = value`` text (all fields)."""
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def load_config(path, cls):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read(), cls)


def save_config(cfg, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(write_config(cfg))
