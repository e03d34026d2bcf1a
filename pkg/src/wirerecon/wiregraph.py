"""Chain-graph representation of the guidewire and its Laplacian spectrum.

Nodes are the ordered skeleton pixels; edges connect insertion-order
neighbors that are also 8-neighbors in the image. Edge weights compare the
image gradients at the two endpoints through a Gaussian similarity kernel,
and the (symmetrized) graph Laplacian supports a Fourier-like curvature
analysis of the wire shape.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .centerline import Centerline2D
from .errors import NoConvergence, TooFewNodes

SQRT2 = float(np.sqrt(2.0))


@dataclass(frozen=True)
class WireGraph:
    """Wire chain graph: positions, adjacency, gradient-weighted adjacency."""

    positions: np.ndarray      # (n, 2) int
    adjacency: np.ndarray      # (n, n) {0,1}
    weights: np.ndarray        # (n, n) in [0, 1]
    node_gradients: np.ndarray  # (n, 2) image gradient at each node

    @property
    def n_nodes(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class LaplacianSpectrum:
    """Ascending eigenvalues and orthonormal eigenvector columns of L."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def to_csv(self, path) -> None:
        lines = ["k,lambda"]
        lines += [f"{k},{v:.9g}" for k, v in enumerate(self.eigenvalues)]
        Path(path).write_text("\n".join(lines) + "\n")


def _image_gradients_at(image: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """Central-difference image gradient (d/dx, d/dy) at integer pixels."""
    gy, gx = np.gradient(np.asarray(image, dtype=float))
    xs = np.clip(positions[:, 0], 0, image.shape[1] - 1)
    ys = np.clip(positions[:, 1], 0, image.shape[0] - 1)
    return np.column_stack([gx[ys, xs], gy[ys, xs]])


def build_graph(seq: Centerline2D, image: np.ndarray, sigma_g: float = 0.85) -> WireGraph:
    """Chain graph over an ordered 2D centerline.

    An edge (i, j) exists when |i - j| = 1 and the pixels are within sqrt(2)
    of each other; its weight is exp(-||grad I(v_i) - grad I(v_j)||^2 /
    (2 sigma_g^2)).
    """
    if sigma_g <= 0:
        raise ValueError("sigma_g must be positive")
    if len(seq) < 2:
        raise TooFewNodes("graph needs at least 2 centerline points")
    pos = np.round(seq.points).astype(int)
    n = len(pos)
    grads = _image_gradients_at(np.asarray(image, dtype=float), pos)
    A = np.zeros((n, n), dtype=np.uint8)
    W = np.zeros((n, n))
    diffs = np.linalg.norm(np.diff(pos.astype(float), axis=0), axis=1)
    gd = np.linalg.norm(np.diff(grads, axis=0), axis=1)
    link = diffs <= SQRT2 + 1e-12
    w_vals = np.exp(-(gd**2) / (2.0 * sigma_g**2))
    idx = np.arange(n - 1)[link]
    A[idx, idx + 1] = 1
    A[idx + 1, idx] = 1
    W[idx, idx + 1] = w_vals[link]
    W[idx + 1, idx] = w_vals[link]
    return WireGraph(pos, A, W, grads)


def laplacian(g: WireGraph) -> np.ndarray:
    """L = D - W over the symmetrized weighted adjacency; rows sum to zero."""
    W = np.maximum(g.weights, g.weights.T)
    L = np.diag(W.sum(axis=1)) - W
    return L


def eigendecompose(L: np.ndarray, max_sweeps: int = 100) -> LaplacianSpectrum:
    """Full symmetric eigendecomposition via cyclic Jacobi rotations.

    Sweeps rotate away every off-diagonal pair until all are below
    1e-10 * ||L||_F; raises NoConvergence after ``max_sweeps`` sweeps.
    Eigenvalues are returned ascending with matching eigenvector columns.
    """
    A = np.asarray(L, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    if not np.allclose(A, A.T, atol=1e-10 * max(1.0, np.abs(A).max())):
        raise ValueError("matrix must be symmetric")
    n = A.shape[0]
    A = 0.5 * (A + A.T)
    V = np.eye(n)
    norm = np.linalg.norm(A)
    if norm == 0.0 or n == 1:
        order = np.argsort(np.diag(A), kind="stable")
        return LaplacianSpectrum(np.diag(A)[order], V[:, order])
    tol = 1e-10 * norm
    off_mask = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        if np.abs(A[off_mask]).max() < tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= tol / max(1, n):
                    continue
                theta = 0.5 * (A[q, q] - A[p, p]) / apq
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # rotate rows/cols p and q
                Ap, Aq = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * Ap - s * Aq
                A[:, q] = s * Ap + c * Aq
                Ap, Aq = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * Ap - s * Aq
                A[q, :] = s * Ap + c * Aq
                Vp, Vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * Vp - s * Vq
                V[:, q] = s * Vp + c * Vq
    else:
        raise NoConvergence(f"Jacobi sweeps exceeded {max_sweeps}")
    eigenvalues = np.diag(A).copy()
    order = np.argsort(eigenvalues, kind="stable")
    return LaplacianSpectrum(eigenvalues[order], V[:, order])


def discrete_curvature(points: np.ndarray) -> np.ndarray:
    """Second-difference magnitude per node; zero at the chain ends."""
    pts = np.asarray(points, dtype=float)
    kappa = np.zeros(len(pts))
    if len(pts) >= 3:
        kappa[1:-1] = np.linalg.norm(pts[:-2] - 2.0 * pts[1:-1] + pts[2:], axis=1)
    return kappa


def curvature_energy(spectrum: LaplacianSpectrum, kappa: np.ndarray) -> float:
    """Spectral curvature energy: sum_k lambda_k <phi_k, kappa>^2.

    Diagnostic only; large values flag high-frequency wiggles in the wire
    shape signal.
    """
    coeffs = spectrum.eigenvectors.T @ np.asarray(kappa, dtype=float)
    return float(np.sum(spectrum.eigenvalues * coeffs**2))
