"""Sparse local Lagrange interpolation from a regular sphere grid to
scattered points.

The grid has Chebyshev polar nodes ``theta_j = (2j-1) pi / 2 ntheta`` (which
are equispaced in theta) and ``nphi`` equispaced azimuths (``nphi`` even).
Stencils are ``q`` nodes per direction. Azimuthal stencils wrap
periodically; polar stencils that run past a pole continue along the same
great circle: node ``j <= 0`` is read from node ``1 - j`` at ``phi + pi``,
node ``j > ntheta`` from node ``2 ntheta + 1 - j`` at ``phi + pi``.
"""
from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sps


def _lagrange_weights(t: np.ndarray, start: np.ndarray, q: int) -> np.ndarray:
    """Weights of the ``q`` unit-spaced nodes ``start + 0..q-1`` at ``t``."""
    x = t - start  # position relative to the first node
    w = np.ones((t.size, q))
    for i in range(q):
        for j in range(q):
            if j != i:
                w[:, i] *= (x - j) / (i - j)
    return w


def interp_matrix(theta, phi, ntheta: int, nphi: int, q: int = 7) -> sps.csr_matrix:
    """``T`` with ``T @ grid.ravel() ~ f(theta, phi)`` for grid values in
    ``(ntheta, nphi)`` row-major layout. Every row has ``q*q`` weights that
    sum to one."""
    if nphi % 2:
        raise ValueError("pole continuation needs an even nphi")
    if q > ntheta or q > nphi:
        raise ValueError(f"stencil q={q} larger than the grid")
    theta = np.asarray(theta, dtype=float).ravel()
    phi = np.mod(np.asarray(phi, dtype=float).ravel(), 2 * np.pi)
    npts = theta.size

    # continuous node coordinates: theta_j <-> tj = j (1-based), phi_l <-> l
    tj = theta * ntheta / np.pi + 0.5
    tl = phi * nphi / (2 * np.pi)
    sj = np.ceil(tj - q / 2).astype(int)
    sl = np.ceil(tl - q / 2).astype(int)
    wj = _lagrange_weights(tj, sj, q)
    wl = _lagrange_weights(tl, sl, q)

    jj = sj[:, None] + np.arange(q)[None, :]  # 1-based, may leave [1, ntheta]
    flip = (jj < 1) | (jj > ntheta)
    jr = np.where(jj < 1, 1 - jj, np.where(jj > ntheta, 2 * ntheta + 1 - jj, jj)) - 1
    ll = sl[:, None] + np.arange(q)[None, :]

    half = nphi // 2
    lcol = (ll[:, None, :] + half * flip[:, :, None]) % nphi  # (npts, qj, ql)
    cols = jr[:, :, None] * nphi + lcol
    vals = wj[:, :, None] * wl[:, None, :]
    rows = np.repeat(np.arange(npts), q * q)
    mat = sps.csr_matrix((vals.ravel(), (rows, cols.ravel())), shape=(npts, ntheta * nphi))
    return mat


def fine_grid_shape(p: int, oversample: float = 8.0) -> tuple[int, int]:
    """Grid size used for interpolation of a degree-``p`` expansion."""
    nt = max(int(math.ceil(oversample * (p + 1))), 8)
    nf = 2 * nt
    return nt, nf
