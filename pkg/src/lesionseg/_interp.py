import numpy as np


def interp_matrix(src: int, dst: int, dtype=np.float64) -> np.ndarray:
    """Linear interpolation weights (dst x src) with half-pixel centers.

    Source coordinate of output index i is (i + 0.5) * src / dst - 0.5,
    clamped to [0, src - 1]. Rows are convex combinations of at most two
    source samples.
    """
    if src < 1 or dst < 1:
        raise ValueError(f"sizes must be >= 1, got src={src}, dst={dst}")
    a = np.zeros((dst, src), dtype=dtype)
    if src == dst:
        a[np.arange(dst), np.arange(dst)] = 1
        return a
    coord = (np.arange(dst) + 0.5) * (src / dst) - 0.5
    coord = np.clip(coord, 0.0, src - 1)
    lo = np.floor(coord).astype(np.int64)
    hi = np.minimum(lo + 1, src - 1)
    frac = coord - lo
    rows = np.arange(dst)
    np.add.at(a, (rows, lo), 1.0 - frac)
    np.add.at(a, (rows, hi), frac)
    return a


def nearest_index(src: int, dst: int) -> np.ndarray:
    """Nearest source index for each output index, same coordinate convention.

    Exact half-way ties round down (toward the lower source index).
    """
    if src < 1 or dst < 1:
        raise ValueError(f"sizes must be >= 1, got src={src}, dst={dst}")
    coord = (np.arange(dst) + 0.5) * (src / dst) - 0.5
    idx = np.ceil(coord - 0.5).astype(np.int64)
    return np.clip(idx, 0, src - 1)
