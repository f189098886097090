"""Rectangle geometry, patch extraction and hand-crafted feature channels."""

from dataclasses import dataclass

import numpy as np

from .spectral import hann_window

TEMPLATE_SIZE = 64
N_CHANNELS = 3

_WINDOW = hann_window(TEMPLATE_SIZE, TEMPLATE_SIZE)


@dataclass(frozen=True)
class Rect:
    """Axis-aligned box; (x, y) is the top-left corner in 0-based pixel units."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"rect must have positive area, got w={self.w}, h={self.h}")

    @property
    def cx(self):
        return self.x + self.w / 2.0

    @property
    def cy(self):
        return self.y + self.h / 2.0

    @property
    def area(self):
        return self.w * self.h

    @classmethod
    def from_center(cls, cx, cy, w, h):
        return cls(cx - w / 2.0, cy - h / 2.0, w, h)

    def as_tuple(self):
        return (self.x, self.y, self.w, self.h)


def iou(a: Rect, b: Rect) -> float:
    ix = max(0.0, min(a.x + a.w, b.x + b.w) - max(a.x, b.x))
    iy = max(0.0, min(a.y + a.h, b.y + b.h) - max(a.y, b.y))
    inter = ix * iy
    union = a.area + b.area - inter
    if inter <= 0.0:
        return 0.0
    return min(1.0, inter / union)


def center_error(a: Rect, b: Rect) -> float:
    return float(np.hypot(a.cx - b.cx, a.cy - b.cy))


def extract_patch(frame, target: Rect, padding=2.0, scale=1.0, out_size=TEMPLATE_SIZE):
    """Crop a (padding*h) x (padding*w) window around the target center and
    resample it to ``out_size`` x ``out_size`` with bilinear interpolation.

    Samples falling outside the frame replicate the nearest edge pixel.
    ``scale`` enlarges the window around the same center (used for scale search).
    The result is a float64 array on the 0..255 intensity scale.
    """
    if padding < 1:
        raise ValueError(f"padding must be >= 1, got {padding}")
    if not (target.w > 0 and target.h > 0):
        raise ValueError("degenerate target rect")
    frame = np.asarray(frame)
    H, W = frame.shape
    win_w = padding * target.w * scale
    win_h = padding * target.h * scale
    # sample at output pixel centers, expressed in source pixel-center coordinates
    steps = (np.arange(out_size) + 0.5) / out_size
    ys = target.cy - win_h / 2.0 + steps * win_h - 0.5
    xs = target.cx - win_w / 2.0 + steps * win_w - 0.5
    ys = np.clip(ys, 0.0, H - 1.0)
    xs = np.clip(xs, 0.0, W - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, H - 1)
    x1 = np.minimum(x0 + 1, W - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    img = frame.astype(np.float64, copy=False)
    top = img[y0][:, x0] * (1.0 - fx) + img[y0][:, x1] * fx
    bottom = img[y1][:, x0] * (1.0 - fx) + img[y1][:, x1] * fx
    return top * (1.0 - fy) + bottom * fy


def featurize(patch, window=True):
    """Three channels: zero-mean intensity, horizontal and vertical central
    differences of that intensity.  Each channel is Hann-windowed unless
    ``window`` is false."""
    patch = np.asarray(patch, dtype=np.float64)
    if patch.shape != (TEMPLATE_SIZE, TEMPLATE_SIZE):
        raise ValueError(f"patch must be {TEMPLATE_SIZE}x{TEMPLATE_SIZE}, got {patch.shape}")
    # center on the 0..255 scale first: exact for constant integer patches
    intensity = (patch - patch.mean()) / 255.0
    gx = np.zeros_like(intensity)
    gy = np.zeros_like(intensity)
    gx[:, 1:-1] = 0.5 * (intensity[:, 2:] - intensity[:, :-2])
    gy[1:-1, :] = 0.5 * (intensity[2:, :] - intensity[:-2, :])
    stack = np.stack([intensity, gx, gy])
    if window:
        stack = stack * _WINDOW
    return stack
