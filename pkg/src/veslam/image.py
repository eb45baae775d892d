"""Grayscale image buffers, pyramids, subpixel sampling and corner detection."""

import numpy as np
from scipy import ndimage


class ImageBuffer:
    """Float grayscale image in [0, 1] with a half-resolution pyramid."""

    def __init__(self, pixels, n_levels=1):
        img = np.asarray(pixels, dtype=float)
        if img.ndim != 2:
            raise ValueError("expected a 2D grayscale array")
        if img.size and (img.min() < -1e-9 or img.max() > 1.0 + 1e-9):
            raise ValueError("intensities must lie in [0, 1]")
        self.levels = [img]
        for _ in range(1, n_levels):
            prev = self.levels[-1]
            h, w = prev.shape
            if h < 2 or w < 2:
                break
            ev = prev[: h - h % 2, : w - w % 2]
            self.levels.append(0.25 * (ev[0::2, 0::2] + ev[1::2, 0::2]
                                       + ev[0::2, 1::2] + ev[1::2, 1::2]))
        self._grads = [None] * len(self.levels)

    @property
    def width(self):
        return self.levels[0].shape[1]

    @property
    def height(self):
        return self.levels[0].shape[0]

    @property
    def n_levels(self):
        return len(self.levels)

    def gradients(self, level):
        """Cached central-difference gradients (gy, gx) of a pyramid level."""
        if self._grads[level] is None:
            img = self.levels[level]
            gy, gx = np.gradient(img)
            self._grads[level] = (gy, gx)
        return self._grads[level]


def bilinear_sample(img, xs, ys):
    """Bilinear interpolation at float coordinates (x = column, y = row).

    Coordinates must satisfy 0 <= x <= w-1 and 0 <= y <= h-1.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    h, w = img.shape
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 2)
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 2)
    fx = xs - x0
    fy = ys - y0
    v00 = img[y0, x0]
    v01 = img[y0, x0 + 1]
    v10 = img[y0 + 1, x0]
    v11 = img[y0 + 1, x0 + 1]
    return ((1 - fy) * ((1 - fx) * v00 + fx * v01)
            + fy * ((1 - fx) * v10 + fx * v11))


def patch_offsets(size):
    """Relative (dx, dy) grids of a square patch with odd side length."""
    if size % 2 != 1 or size < 3:
        raise ValueError("patch size must be odd and >= 3")
    r = size // 2
    dy, dx = np.mgrid[-r:r + 1, -r:r + 1]
    return dx.astype(float).ravel(), dy.astype(float).ravel()


def extract_patch(img, center, size):
    """Square patch of odd side ``size`` sampled bilinearly around ``center``."""
    dx, dy = patch_offsets(size)
    h, w = img.shape
    cx, cy = float(center[0]), float(center[1])
    r = size // 2
    if not (r <= cx <= w - 1 - r and r <= cy <= h - 1 - r):
        raise ValueError("patch exits image bounds")
    return bilinear_sample(img, cx + dx, cy + dy).reshape(size, size)


def shi_tomasi(image, max_features=300, nms_radius=8, margin=8, window=5):
    """Min-eigenvalue corners with non-maximal suppression.

    Returns an (n, 2) array of (x, y) pixel positions, strongest first, with
    deterministic tie-breaking by (y, x).
    """
    img = image.levels[0] if isinstance(image, ImageBuffer) else np.asarray(image, float)
    gy, gx = np.gradient(img)
    gxx = ndimage.uniform_filter(gx * gx, window)
    gyy = ndimage.uniform_filter(gy * gy, window)
    gxy = ndimage.uniform_filter(gx * gy, window)
    tr = gxx + gyy
    det_root = np.sqrt(np.maximum((gxx - gyy) ** 2 + 4.0 * gxy ** 2, 0.0))
    score = 0.5 * (tr - det_root)
    local_max = ndimage.maximum_filter(score, size=2 * nms_radius + 1)
    peaks = (score >= local_max) & (score > 1e-12)
    peaks[:margin, :] = False
    peaks[-margin:, :] = False
    peaks[:, :margin] = False
    peaks[:, -margin:] = False
    ys, xs = np.nonzero(peaks)
    order = sorted(range(len(ys)), key=lambda i: (-score[ys[i], xs[i]], ys[i], xs[i]))
    order = order[:max_features]
    return np.array([[xs[i], ys[i]] for i in order], dtype=float).reshape(-1, 2)
