"""2-D DFT helpers, label synthesis and windowing for the correlation-filter path.

All grids are plain numpy arrays in double precision.  The forward transform is
unnormalized; the 1/(H*W) factor lives in :func:`idft2`.
"""

import numpy as np


def _check_finite(grid, name):
    grid = np.asarray(grid)
    if grid.ndim < 2 or min(grid.shape[-2:]) < 1:
        raise ValueError(f"{name}: expected a grid with dimensions >= 1, got shape {grid.shape}")
    if not np.all(np.isfinite(grid)):
        raise ValueError(f"{name}: grid contains non-finite values")
    return grid


def dft2(grid):
    """Unnormalized forward 2-D DFT over the last two axes."""
    grid = _check_finite(grid, "dft2")
    return np.fft.fft2(grid.astype(np.complex128, copy=False))


def idft2(spectrum):
    """Inverse 2-D DFT over the last two axes, including the 1/(H*W) factor."""
    spectrum = _check_finite(spectrum, "idft2")
    return np.fft.ifft2(spectrum.astype(np.complex128, copy=False))


def gaussian_label(height, width, sigma):
    """Gaussian response label peaking at 1.0 on the grid center (H//2, W//2).

    Distances to the center are measured circularly so the label is smooth
    across the wrap-around seam.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if height < 1 or width < 1:
        raise ValueError("label dimensions must be >= 1")
    cy, cx = height // 2, width // 2
    dy = np.arange(height) - cy
    dx = np.arange(width) - cx
    # wrap to the nearest periodic image
    dy = (dy + height // 2) % height - height // 2
    dx = (dx + width // 2) % width - width // 2
    d2 = dy[:, None] ** 2 + dx[None, :] ** 2
    return np.exp(-d2 / (2.0 * sigma * sigma))


def hann_window(height, width):
    """Outer product of two 1-D Hann windows; zero on the border."""
    if height < 2 or width < 2:
        raise ValueError(f"hann window needs dimensions >= 2, got {height}x{width}")
    return np.outer(np.hanning(height), np.hanning(width))


def circ_shift(grid, dy, dx):
    """Circular shift: out[y, x] = grid[(y - dy) % H, (x - dx) % W]."""
    return np.roll(np.asarray(grid), shift=(int(dy), int(dx)), axis=(-2, -1))
