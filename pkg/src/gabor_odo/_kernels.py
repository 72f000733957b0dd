"""Compiled inner loops for the detector simulation.

The detector output ``sum_u (view * b)(u) D(u) Omega(u) M(u)`` is linear in
the view, so it is evaluated as ``sum_u view(u) K(u)`` with a weight kernel
``K`` that already carries the (transposed) blur, the falloff and the mask.
Views are never materialised: pixels are sampled from the texture on the fly.

``detector_profiles`` keeps the mask out of the kernel and returns per-column
sums instead, so many masks can be scored against one pass over the texture
(used by the mask optimizer).

All coordinates are texture grid units. A view is described by the grid
position of pixel (0, 0) and the grid steps along its rows (i) and columns (j).
Callers pass origins already shifted so that every pixel of the view has a
non-negative grid coordinate (see ``sensor_sim._grid_frames``).
"""

import numpy as np
from numba import njit


@njit(cache=True, fastmath=True, error_model="numpy", inline="always")
def _sample(grid, gx, gy, tile):
    rows, cols = grid.shape
    if tile:
        c0 = int(gx)
        r0 = int(gy)
        fx = gx - c0
        fy = gy - r0
        while c0 >= cols:
            c0 -= cols
        while r0 >= rows:
            r0 -= rows
        c1 = c0 + 1
        if c1 == cols:
            c1 = 0
        r1 = r0 + 1
        if r1 == rows:
            r1 = 0
    else:
        if gx < 0.0:
            gx = 0.0
        elif gx > cols - 1:
            gx = cols - 1.0
        if gy < 0.0:
            gy = 0.0
        elif gy > rows - 1:
            gy = rows - 1.0
        c0 = min(int(gx), cols - 2)
        r0 = min(int(gy), rows - 2)
        c1 = c0 + 1
        r1 = r0 + 1
        fx = gx - c0
        fy = gy - r0
    top = grid[r0, c0] * (1.0 - fx) + grid[r0, c1] * fx
    bot = grid[r1, c0] * (1.0 - fx) + grid[r1, c1] * fx
    return top * (1.0 - fy) + bot * fy


@njit(cache=True)
def render(grid, tile, origin, step_i, step_j, n):
    """One n-by-n view; pixel (i, j) at ``origin + i*step_i + j*step_j``."""
    out = np.empty((n, n))
    for i in range(n):
        bx = origin[0] + i * step_i[0]
        by = origin[1] + i * step_i[1]
        for j in range(n):
            out[i, j] = _sample(grid, bx + j * step_j[0], by + j * step_j[1], tile)
    return out


@njit(cache=True, fastmath=True, error_model="numpy", nogil=True)
def detector_signals(grid, tile, origins, steps_i, steps_j, kernels):
    """Raw detector outputs ``sum_ij view[i, j] * K[k, i, j]``, shape (T, K).

    origins, steps_i, steps_j: (T, K, 2); kernels: (K, N, N).
    """
    t_len, k_len = origins.shape[0], origins.shape[1]
    n = kernels.shape[1]
    out = np.zeros((t_len, k_len))
    for t in range(t_len):
        for k in range(k_len):
            ox = origins[t, k, 0]
            oy = origins[t, k, 1]
            six, siy = steps_i[t, k, 0], steps_i[t, k, 1]
            sjx, sjy = steps_j[t, k, 0], steps_j[t, k, 1]
            acc = 0.0
            for i in range(n):
                bx = ox + i * six
                by = oy + i * siy
                for j in range(n):
                    acc += kernels[k, i, j] * _sample(grid, bx + j * sjx, by + j * sjy, tile)
            out[t, k] = acc
    return out


@njit(cache=True, fastmath=True, error_model="numpy", nogil=True)
def detector_profiles(grid, tile, origins, steps_i, steps_j, band, radius, colw):
    """Column sums of the blurred, falloff-weighted views, shape (T, K, N).

    ``band[j, m]`` holds blur-matrix entry ``B[j, j - radius + m]`` (blur along
    the stripe axis); ``colw`` is the transposed lateral blur applied to the
    falloff map. A mask row ``m`` then gives ``raw = profile @ m``.
    """
    t_len, k_len = origins.shape[0], origins.shape[1]
    n = colw.shape[0]
    out = np.zeros((t_len, k_len, n))
    row = np.empty(n)
    for t in range(t_len):
        for k in range(k_len):
            ox = origins[t, k, 0]
            oy = origins[t, k, 1]
            six, siy = steps_i[t, k, 0], steps_i[t, k, 1]
            sjx, sjy = steps_j[t, k, 0], steps_j[t, k, 1]
            for i in range(n):
                bx = ox + i * six
                by = oy + i * siy
                for j in range(n):
                    row[j] = _sample(grid, bx + j * sjx, by + j * sjy, tile)
                for j in range(n):
                    acc = 0.0
                    lo = j - radius
                    for m in range(2 * radius + 1):
                        jj = lo + m
                        if 0 <= jj < n:
                            acc += band[j, m] * row[jj]
                    out[t, k, j] += colw[i, j] * acc
    return out
