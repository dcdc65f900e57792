"""Differentiable geometric kernels.

Coordinates are normalized so that both axes span ``[-1, 1]`` with pixel
centers on the grid nodes; points are stored as ``(x, y)`` with ``x`` along
the width. Grids follow the backward-warp convention: ``grid[i, j]`` is the
source location sampled for output pixel ``(i, j)``.
"""
from dataclasses import dataclass

import numpy as np
import torch

from .exceptions import EmptySet, ShapeMismatch, SingularJacobian

JACOBIAN_EPS = 1e-8


def _as_tensor(x, dtype=None):
    if isinstance(x, torch.Tensor):
        return x if dtype is None else x.to(dtype)
    return torch.as_tensor(np.ascontiguousarray(x), dtype=dtype or torch.float64)


# ---------------------------------------------------------------- 2x2 algebra
# Written out elementwise so that products like inv(J) @ J evaluate to the
# identity bit-for-bit (a fused matmul would not guarantee that).

def mat2_mul(a, b):
    a00, a01, a10, a11 = a[..., 0, 0], a[..., 0, 1], a[..., 1, 0], a[..., 1, 1]
    b00, b01, b10, b11 = b[..., 0, 0], b[..., 0, 1], b[..., 1, 0], b[..., 1, 1]
    row0 = torch.stack([a00 * b00 + a01 * b10, a00 * b01 + a01 * b11], dim=-1)
    row1 = torch.stack([a10 * b00 + a11 * b10, a10 * b01 + a11 * b11], dim=-1)
    return torch.stack([row0, row1], dim=-2)


def mat2_det(a):
    return a[..., 0, 0] * a[..., 1, 1] - a[..., 0, 1] * a[..., 1, 0]


def mat2_solve(a, b, eps=JACOBIAN_EPS):
    """Return ``inv(a) @ b`` as ``adj(a) @ b / det(a)``.

    Raises SingularJacobian when any ``|det(a)| < eps``.
    """
    det = mat2_det(a)
    if bool((det.abs() < eps).any()):
        raise SingularJacobian(
            f"Jacobian determinant magnitude below {eps:g} (min |det| = {det.abs().min().item():.3g})"
        )
    adj = torch.stack(
        [
            torch.stack([a[..., 1, 1], -a[..., 0, 1]], dim=-1),
            torch.stack([-a[..., 1, 0], a[..., 0, 0]], dim=-1),
        ],
        dim=-2,
    )
    return mat2_mul(adj, b) / det[..., None, None]


def mat2_inv(a, eps=JACOBIAN_EPS):
    eye = torch.eye(2, dtype=a.dtype, device=a.device).expand_as(a)
    return mat2_solve(a, eye, eps)


# ---------------------------------------------------------------- affine

@dataclass(frozen=True)
class AffineTransform2D:
    """2x3 matrix ``[[t1, t2, t3], [t4, t5, t6]]`` on normalized coordinates."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (2, 3):
            raise ShapeMismatch(f"affine matrix must be 2x3, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("affine matrix has non-finite entries")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls):
        return cls(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))

    def compose(self, first):
        """Return the transform applying ``first`` then ``self``."""
        return AffineTransform2D(affine_compose(self.matrix, first.matrix))

    def __call__(self, p):
        return affine_apply(self, p)


def _affine_matrix(t):
    if isinstance(t, AffineTransform2D):
        return t.matrix
    return t


def affine_apply(t, p):
    """Apply an affine transform to points of shape ``(..., 2)``.

    ``t`` may be an AffineTransform2D, an array or a tensor of shape
    ``(..., 2, 3)`` broadcastable against the points.
    """
    m = _affine_matrix(t)
    if isinstance(m, torch.Tensor) or isinstance(p, torch.Tensor):
        m = _as_tensor(m)
        p = _as_tensor(p, m.dtype)
        x, y = p[..., 0], p[..., 1]
        return torch.stack(
            [
                m[..., 0, 0] * x + m[..., 0, 1] * y + m[..., 0, 2],
                m[..., 1, 0] * x + m[..., 1, 1] * y + m[..., 1, 2],
            ],
            dim=-1,
        )
    m = np.asarray(m, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    x, y = p[..., 0], p[..., 1]
    return np.stack(
        [
            m[..., 0, 0] * x + m[..., 0, 1] * y + m[..., 0, 2],
            m[..., 1, 0] * x + m[..., 1, 1] * y + m[..., 1, 2],
        ],
        axis=-1,
    )


def affine_compose(second, first):
    """Matrix of ``p -> second(first(p))``."""
    a = np.asarray(_affine_matrix(second), dtype=np.float64)
    b = np.asarray(_affine_matrix(first), dtype=np.float64)
    a3 = np.vstack([a, [0.0, 0.0, 1.0]])
    b3 = np.vstack([b, [0.0, 0.0, 1.0]])
    return (a3 @ b3)[:2]


# ---------------------------------------------------------------- grids

def coordinate_grid(height, width, dtype=torch.float32, device=None):
    """Identity grid of shape ``(H, W, 2)``; nodes sit on pixel centers."""
    def axis(n):
        if n == 1:
            return torch.zeros(1, dtype=dtype, device=device)
        return torch.linspace(-1.0, 1.0, n, dtype=dtype, device=device)

    yy, xx = torch.meshgrid(axis(height), axis(width), indexing="ij")
    return torch.stack([xx, yy], dim=-1)


def affine_grid(t, height, width, dtype=torch.float32):
    """Backward grid induced by affine ``t`` (shape ``(..., 2, 3)``)."""
    m = _as_tensor(_affine_matrix(t), dtype)
    grid = coordinate_grid(height, width, dtype=m.dtype, device=m.device)
    lead = m.shape[:-2]
    m = m.reshape(*lead, 1, 1, 2, 3)
    return affine_apply(m, grid)


@dataclass
class KeypointSet:
    """Batched keypoints: ``value (..., K, 2)``, ``jacobian (..., K, 2, 2)``.

    The first ``supervised_count`` keypoints are tied to annotated landmarks.
    """

    value: torch.Tensor
    jacobian: torch.Tensor
    supervised_count: int = 0
    heatmap: torch.Tensor = None

    def __post_init__(self):
        if self.value.shape[-1] != 2 or self.jacobian.shape[-2:] != (2, 2):
            raise ShapeMismatch("keypoint value must be (..., K, 2) and jacobian (..., K, 2, 2)")
        if self.value.shape[:-1] != self.jacobian.shape[:-2]:
            raise ShapeMismatch("keypoint value and jacobian disagree on leading dims")
        if not 0 <= self.supervised_count <= self.num_keypoints:
            raise ValueError("supervised_count must lie in [0, K]")

    @property
    def num_keypoints(self):
        return self.value.shape[-2]

    def detach(self):
        heat = None if self.heatmap is None else self.heatmap.detach()
        return KeypointSet(self.value.detach(), self.jacobian.detach(), self.supervised_count, heat)


def sparse_motion(src_kps, drv_kps, resolution):
    """Per-keypoint backward grids ``p_S + J_S J_D^-1 (z - p_D)``.

    Returns a tensor of shape ``(..., K, H, W, 2)``.
    """
    if src_kps.value.shape != drv_kps.value.shape:
        raise ShapeMismatch(
            f"source keypoints {tuple(src_kps.value.shape)} vs driving {tuple(drv_kps.value.shape)}"
        )
    h, w = resolution
    linear = mat2_mul(src_kps.jacobian, mat2_inv(drv_kps.jacobian))
    grid = coordinate_grid(h, w, dtype=drv_kps.value.dtype, device=drv_kps.value.device)
    offset = grid - drv_kps.value[..., None, None, :]  # (..., K, H, W, 2)
    lin = linear[..., None, None, :, :]
    moved = torch.stack(
        [
            lin[..., 0, 0] * offset[..., 0] + lin[..., 0, 1] * offset[..., 1],
            lin[..., 1, 0] * offset[..., 0] + lin[..., 1, 1] * offset[..., 1],
        ],
        dim=-1,
    )
    return moved + src_kps.value[..., None, None, :]


# ---------------------------------------------------------------- warping

_SNAP_TOL = 1e-4


def _unnormalize(coord, size):
    pix = (coord + 1.0) * 0.5 * (size - 1)
    # Snap coordinates that are integers up to rounding; gradient passes straight through.
    nearest = torch.round(pix)
    close = (pix - nearest).abs() < _SNAP_TOL
    return torch.where(close, pix + (nearest - pix).detach(), pix)


def bilinear_warp(image, grid):
    """Sample ``image (N, C, H, W)`` at ``grid (N, Ho, Wo, 2)``.

    Bilinear interpolation with zero padding; differentiable with respect to
    both arguments. A grid whose nodes coincide with pixel centers
    reproduces the input exactly.
    """
    if image.dim() != 4 or grid.dim() != 4 or grid.shape[-1] != 2:
        raise ShapeMismatch(f"expected image (N,C,H,W) and grid (N,Ho,Wo,2), got {tuple(image.shape)} and {tuple(grid.shape)}")
    if image.shape[0] != grid.shape[0]:
        raise ShapeMismatch(f"batch sizes differ: {image.shape[0]} vs {grid.shape[0]}")
    n, c, h, w = image.shape
    _, ho, wo, _ = grid.shape
    grid = grid.to(image.dtype)
    x = _unnormalize(grid[..., 0], w)
    y = _unnormalize(grid[..., 1], h)
    # non-finite coordinates read pixel 0 with non-finite weights, so NaN propagates
    x0 = torch.nan_to_num(torch.floor(x.detach()), nan=0.0, posinf=0.0, neginf=0.0)
    y0 = torch.nan_to_num(torch.floor(y.detach()), nan=0.0, posinf=0.0, neginf=0.0)
    wx1 = x - x0
    wy1 = y - y0
    wx0 = 1.0 - wx1
    wy0 = 1.0 - wy1
    flat = image.reshape(n, c, h * w)
    out = None
    for dx, wxk in ((0, wx0), (1, wx1)):
        for dy, wyk in ((0, wy0), (1, wy1)):
            xi = x0 + dx
            yi = y0 + dy
            valid = (xi >= 0) & (xi <= w - 1) & (yi >= 0) & (yi <= h - 1)
            idx = (yi.clamp(0, h - 1) * w + xi.clamp(0, w - 1)).long().reshape(n, 1, ho * wo)
            vals = torch.gather(flat, 2, idx.expand(n, c, ho * wo)).reshape(n, c, ho, wo)
            weight = (wxk * wyk * valid.to(image.dtype))[:, None]
            term = vals * weight
            out = term if out is None else out + term
    return out


def resize_grid(grid, size):
    """Bilinearly resample a grid ``(N, H, W, 2)`` to ``size = (h, w)``."""
    if tuple(grid.shape[1:3]) == tuple(size):
        return grid
    g = grid.permute(0, 3, 1, 2)
    g = torch.nn.functional.interpolate(g, size=size, mode="bilinear", align_corners=True)
    return g.permute(0, 2, 3, 1)


# ---------------------------------------------------------------- thin-plate spline

def _tps_kernel(r2):
    safe = torch.where(r2 > 0, r2, torch.ones_like(r2))
    return torch.where(r2 > 0, r2 * torch.log(safe), torch.zeros_like(r2))


class ThinPlateSpline:
    """Interpolating thin-plate spline through ``control -> target`` pairs.

    Maps points and exposes the analytic spatial derivative
    ``jacobian(p)[..., i, j] = d out_i / d p_j``.
    """

    def __init__(self, control, target):
        control = np.asarray(control, dtype=np.float64)
        target = np.asarray(target, dtype=np.float64)
        if control.shape != target.shape or control.ndim != 2 or control.shape[1] != 2:
            raise ShapeMismatch("control and target must both be (n, 2)")
        n = len(control)
        if np.array_equal(control, target):
            weights = np.zeros((n, 2))
            affine = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        else:
            d2 = ((control[:, None] - control[None]) ** 2).sum(-1)
            with np.errstate(divide="ignore", invalid="ignore"):
                k = np.where(d2 > 0, d2 * np.log(np.where(d2 > 0, d2, 1.0)), 0.0)
            p = np.hstack([np.ones((n, 1)), control])
            system = np.zeros((n + 3, n + 3))
            system[:n, :n] = k
            system[:n, n:] = p
            system[n:, :n] = p.T
            rhs = np.zeros((n + 3, 2))
            rhs[:n] = target
            sol = np.linalg.solve(system, rhs)
            weights, affine = sol[:n], sol[n:]
        self.control = control
        self.weights = weights
        self.affine = affine  # rows: offset, d/dx, d/dy

    def _params(self, like):
        kw = dict(dtype=like.dtype, device=like.device)
        return (
            torch.as_tensor(self.control, **kw),
            torch.as_tensor(self.weights, **kw),
            torch.as_tensor(self.affine, **kw),
        )

    def __call__(self, points):
        pts = _as_tensor(points)
        c, wts, aff = self._params(pts)
        diff = pts[..., None, :] - c  # (..., n, 2)
        r2 = (diff ** 2).sum(-1)
        u = _tps_kernel(r2)
        out = aff[0] + pts[..., 0:1] * aff[1] + pts[..., 1:2] * aff[2]
        return out + u @ wts

    def jacobian(self, points):
        pts = _as_tensor(points)
        c, wts, aff = self._params(pts)
        diff = pts[..., None, :] - c
        r2 = (diff ** 2).sum(-1)
        safe = torch.where(r2 > 0, r2, torch.ones_like(r2))
        factor = torch.where(r2 > 0, 2.0 * (torch.log(safe) + 1.0), torch.zeros_like(r2))
        grad_u = diff * factor[..., None]  # (..., n, 2): d U_i / d p_j
        nonlinear = torch.einsum("...nj,ni->...ij", grad_u, wts)
        linear = torch.stack([aff[1], aff[2]], dim=-1)  # [i, j] = d out_i / d p_j
        return linear + nonlinear

    def grid(self, height, width, dtype=torch.float32):
        """Backward grid sampling the undeformed frame: ``(H, W, 2)``."""
        return self(coordinate_grid(height, width, dtype=dtype))


def control_grid(size=5):
    axis = np.linspace(-1.0, 1.0, size)
    yy, xx = np.meshgrid(axis, axis, indexing="ij")
    return np.stack([xx.ravel(), yy.ravel()], axis=-1)


def random_tps(rng_seed, strength=0.05, grid_size=5):
    """TPS over a ``grid_size`` x ``grid_size`` control lattice whose targets are
    perturbed by i.i.d. Gaussian noise of standard deviation ``strength``."""
    if strength < 0:
        raise ValueError("strength must be non-negative")
    rng = np.random.default_rng(rng_seed)
    control = control_grid(grid_size)
    target = control + strength * rng.standard_normal(control.shape) if strength > 0 else control.copy()
    return ThinPlateSpline(control, target)


# ---------------------------------------------------------------- Hausdorff

def _check_points(points, name):
    if isinstance(points, torch.Tensor):
        pts = points
    else:
        pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise EmptySet(f"point set {name} must be a non-empty (n, 2) collection")
    return pts


def _sq_dists(a, b):
    diff = a[:, None, :] - b[None, :, :]
    return (diff ** 2).sum(-1)


def hausdorff_directed(a, b):
    """``max_{a in A} min_{b in B} |a - b|``.

    Accepts numpy-like input (returns float) or tensors (returns a
    differentiable scalar tensor).
    """
    a = _check_points(a, "A")
    b = _check_points(b, "B")
    d2 = _sq_dists(a, b)
    if isinstance(d2, torch.Tensor):
        worst = d2.amin(dim=1).amax()
        return _safe_sqrt(worst)
    return float(np.sqrt(d2.min(axis=1).max()))


def hausdorff_twoway(a, b):
    """Two-way Hausdorff distance ``max(h(A, B), h(B, A))``."""
    a = _check_points(a, "A")
    b = _check_points(b, "B")
    d2 = _sq_dists(a, b)
    if isinstance(d2, torch.Tensor):
        worst = torch.maximum(d2.amin(dim=1).amax(), d2.amin(dim=0).amax())
        return _safe_sqrt(worst)
    return float(np.sqrt(max(d2.min(axis=1).max(), d2.min(axis=0).max())))


def _safe_sqrt(x):
    # d/dx sqrt(x) is infinite at 0; take the subgradient 0 there.
    positive = x > 0
    return torch.where(positive, torch.sqrt(torch.where(positive, x, torch.ones_like(x))), torch.zeros_like(x))
