"""Binarization, disk morphology, connected components and marker watershed."""

from __future__ import annotations

import heapq
from collections import deque

import numpy as np

_NEIGHBORS4 = ((-1, 0), (0, -1), (0, 1), (1, 0))


def binarize(p, theta=0.5):
    return (np.asarray(p) >= theta).astype(np.uint8)


def disk_offsets(r):
    """Offsets (dy, dx) with dy^2 + dx^2 <= r^2."""
    return [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1) if dy * dy + dx * dx <= r * r]


def _shifted(m, dy, dx, fill):
    # out[y, x] = m[y + dy, x + dx], ``fill`` where that falls outside
    h, w = m.shape
    out = np.full_like(m, fill)
    ys, ye = max(0, -dy), min(h, h - dy)
    xs, xe = max(0, -dx), min(w, w - dx)
    if ys < ye and xs < xe:
        out[ys:ye, xs:xe] = m[ys + dy:ye + dy, xs + dx:xe + dx]
    return out


def erode(mask, r):
    """Binary erosion by a discrete disk; outside the image counts as background."""
    if r < 1:
        raise ValueError("radius must be >= 1")
    m = np.asarray(mask) > 0
    out = np.ones_like(m)
    for dy, dx in disk_offsets(r):
        out &= _shifted(m, dy, dx, False)
    return out.astype(np.uint8)


def dilate(mask, r):
    if r < 1:
        raise ValueError("radius must be >= 1")
    m = np.asarray(mask) > 0
    out = np.zeros_like(m)
    for dy, dx in disk_offsets(r):
        out |= _shifted(m, dy, dx, False)
    return out.astype(np.uint8)


def connected_components(mask, connectivity=4):
    """4-connected labelling, labels 1..K in raster-scan discovery order."""
    if connectivity != 4:
        raise ValueError("only 4-connectivity is supported")
    m = np.asarray(mask) > 0
    h, w = m.shape
    labels = np.zeros((h, w), dtype=np.int32)
    current = 0
    for y in range(h):
        for x in range(w):
            if not m[y, x] or labels[y, x]:
                continue
            current += 1
            labels[y, x] = current
            queue = deque([(y, x)])
            while queue:
                cy, cx = queue.popleft()
                for dy, dx in _NEIGHBORS4:
                    ny, nx = cy + dy, cx + dx
                    if 0 <= ny < h and 0 <= nx < w and m[ny, nx] and not labels[ny, nx]:
                        labels[ny, nx] = current
                        queue.append((ny, nx))
    return labels


def watershed(relief, markers, domain):
    """Marker-based priority flood (Meyer), 4-connected, no watershed lines.

    The queue starts with marker pixels that touch an unlabelled domain
    pixel, keyed by relief; ties pop in insertion order. A popped pixel
    gives its label to every unlabelled domain neighbour, which is then
    pushed. Domain pixels unreachable from any marker stay 0, as does
    everything outside the domain.
    """
    relief = np.asarray(relief, dtype=np.float64)
    markers = np.asarray(markers)
    dom = np.asarray(domain) > 0
    if relief.shape != markers.shape or dom.shape != markers.shape:
        raise ValueError("relief, markers and domain must share a shape")
    if not np.all(np.isfinite(relief)):
        raise ValueError("relief must be finite")
    if np.any((markers > 0) & ~dom):
        raise ValueError("marker outside domain")
    labels = markers.astype(np.int32).copy()
    h, w = labels.shape
    heap = []
    counter = 0
    for y, x in zip(*np.nonzero(labels)):
        for dy, dx in _NEIGHBORS4:
            ny, nx = y + dy, x + dx
            if 0 <= ny < h and 0 <= nx < w and dom[ny, nx] and not labels[ny, nx]:
                heap.append((relief[y, x], counter, y, x))
                counter += 1
                break
    heapq.heapify(heap)
    while heap:
        _, _, y, x = heapq.heappop(heap)
        lab = labels[y, x]
        for dy, dx in _NEIGHBORS4:
            ny, nx = y + dy, x + dx
            if 0 <= ny < h and 0 <= nx < w and dom[ny, nx] and not labels[ny, nx]:
                labels[ny, nx] = lab
                heapq.heappush(heap, (relief[ny, nx], counter, ny, nx))
                counter += 1
    return labels


def refine(p, theta=0.5, r_erode=2, r_dilate=2, largest_only=False):
    """Watershed clean-up of a probability map, returning a 0/1 mask.

    Markers are the connected components of the eroded binary mask. They
    flood ``1 - p`` inside the dilated mask; the result is the flooded
    region restricted to the binary mask, so foreground pieces with no
    confident core nearby are dropped while the boundary itself is kept.
    """
    p = np.asarray(p, dtype=np.float64)
    m = binarize(p, theta)
    if not m.any():
        return m
    markers = connected_components(erode(m, r_erode))
    if largest_only and markers.max() > 1:
        sizes = np.bincount(markers.ravel())
        sizes[0] = 0
        markers = np.where(markers == sizes.argmax(), 1, 0)
    domain = dilate(m, r_dilate)
    labels = watershed(1.0 - p, markers, domain)
    return ((labels > 0) & (m > 0)).astype(np.uint8)
