"""Binary morphology, exact Euclidean distance transform, discrete derivatives.

2D masks use a full 3x3 structuring element (8-connectivity), 3D volumes a
3x3x3 one (26-connectivity). Everything outside the grid counts as
background. All operations are pure and bit-deterministic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DataError, EmptyMask, GridTooSmall, NoBoundary


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BinaryImage2D:
    """Binary mask over a 2D pixel grid; pixels[y, x], True = foreground."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2:
            raise ValueError("pixels must be a 2D array")
        object.__setattr__(self, "pixels", px.astype(bool))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def foreground_count(self) -> int:
        return int(self.pixels.sum())

    def to_pgm(self, path) -> None:
        """Binary PGM (P5, maxval 255): foreground 255, background 0."""
        data = np.where(self.pixels, 255, 0).astype(np.uint8)
        with open(path, "wb") as f:
            f.write(f"P5\n{self.width} {self.height}\n255\n".encode("ascii"))
            f.write(data.tobytes())

    @staticmethod
    def from_pgm(path) -> "BinaryImage2D":
        """Reads P5 PGM; values >= 128 become foreground."""
        try:
            raw = Path(path).read_bytes()
        except OSError as exc:
            raise DataError(f"cannot read PGM file {path}: {exc}") from exc
        fields = []
        pos = 0
        while len(fields) < 4:
            while pos < len(raw) and raw[pos : pos + 1].isspace():
                pos += 1
            if raw[pos : pos + 1] == b"#":
                while pos < len(raw) and raw[pos] != 0x0A:
                    pos += 1
                continue
            start = pos
            while pos < len(raw) and not raw[pos : pos + 1].isspace():
                pos += 1
            fields.append(raw[start:pos])
        pos += 1  # single whitespace after maxval
        if fields[0] != b"P5":
            raise DataError(f"{path}: not a binary (P5) PGM file")
        w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
        if maxval > 255:
            raise DataError(f"{path}: 16-bit PGM not supported")
        data = np.frombuffer(raw[pos : pos + w * h], dtype=np.uint8)
        if data.size != w * h:
            raise DataError(f"{path}: truncated PGM payload")
        return BinaryImage2D(data.reshape(h, w) >= 128)


@dataclass(frozen=True)
class BinaryVolume3D:
    """Binary voxel volume; voxels[x, y, z], True = foreground."""

    voxels: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        v = np.asarray(self.voxels)
        if v.ndim != 3:
            raise ValueError("voxels must be a 3D array")
        object.__setattr__(self, "voxels", v.astype(bool))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def dims(self) -> tuple:
        return self.voxels.shape

    @property
    def foreground_count(self) -> int:
        return int(self.voxels.sum())

    def to_raw(self, path) -> None:
        _write_raw(path, self.voxels.astype(np.uint8), self.spacing, "u8")

    @staticmethod
    def from_raw(path) -> "BinaryVolume3D":
        arr, spacing = _read_raw(path, "u8")
        return BinaryVolume3D(arr > 0, spacing)


@dataclass(frozen=True)
class ScalarField:
    """Real-valued field on the same grid as its source mask/volume."""

    values: np.ndarray
    spacing: tuple = field(default=None)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", v)
        sp = self.spacing if self.spacing is not None else (1.0,) * v.ndim
        object.__setattr__(self, "spacing", tuple(float(s) for s in sp))

    def to_raw(self, path) -> None:
        _write_raw(path, self.values.astype(np.float32), self.spacing, "f32")

    @staticmethod
    def from_raw(path) -> "ScalarField":
        arr, spacing = _read_raw(path, "f32")
        return ScalarField(arr.astype(np.float64), spacing)


def _sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def _write_raw(path, arr: np.ndarray, spacing, dtype_tag: str) -> None:
    """Raw little-endian dump, x-fastest, with a JSON sidecar."""
    np_dtype = "<u1" if dtype_tag == "u8" else "<f4"
    Path(path).write_bytes(np.ascontiguousarray(arr.astype(np_dtype)).tobytes(order="F"))
    sidecar = {
        "dims": list(arr.shape),
        "spacing": list(spacing),
        "dtype": dtype_tag,
        "order": "x-fastest",
    }
    _sidecar_path(path).write_text(json.dumps(sidecar, sort_keys=True) + "\n")


def _read_raw(path, expect_dtype: str):
    side = _sidecar_path(path)
    try:
        meta = json.loads(side.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read sidecar {side}: {exc}") from exc
    if meta.get("dtype") != expect_dtype:
        raise DataError(f"{path}: expected dtype {expect_dtype}, sidecar says {meta.get('dtype')}")
    if meta.get("order", "x-fastest") != "x-fastest":
        raise DataError(f"{path}: unsupported voxel order {meta.get('order')}")
    dims = tuple(int(d) for d in meta["dims"])
    spacing = tuple(float(s) for s in meta.get("spacing", (1.0,) * len(dims)))
    np_dtype = "<u1" if expect_dtype == "u8" else "<f4"
    try:
        data = np.frombuffer(Path(path).read_bytes(), dtype=np_dtype)
    except OSError as exc:
        raise DataError(f"cannot read raw file {path}: {exc}") from exc
    if data.size != int(np.prod(dims)):
        raise DataError(f"{path}: payload size {data.size} does not match dims {dims}")
    return data.reshape(dims, order="F"), spacing


def _mask_array(m) -> np.ndarray:
    if isinstance(m, BinaryImage2D):
        return m.pixels
    if isinstance(m, BinaryVolume3D):
        return m.voxels
    return np.asarray(m, dtype=bool)


def _wrap_like(m, arr: np.ndarray):
    if isinstance(m, BinaryImage2D):
        return BinaryImage2D(arr)
    if isinstance(m, BinaryVolume3D):
        return BinaryVolume3D(arr, m.spacing)
    return arr


# ---------------------------------------------------------------------------
# Erosion / dilation / opening / skeleton
# ---------------------------------------------------------------------------

def _shift_reduce(arr: np.ndarray, reduce_or: bool) -> np.ndarray:
    """Min (erode) or max (dilate) over the full 3^d neighborhood.

    Out-of-bounds cells count as background for both reductions.
    """
    padded = np.pad(arr, 1, mode="constant", constant_values=False)
    out = None
    ndim = arr.ndim
    for offsets in np.ndindex(*(3,) * ndim):
        sl = tuple(slice(o, o + s) for o, s in zip(offsets, arr.shape))
        view = padded[sl]
        if out is None:
            out = view.copy()
        elif reduce_or:
            out |= view
        else:
            out &= view
    return out


def erode(m, iterations: int = 1):
    """Minkowski erosion by the full 3x3 (2D) or 3x3x3 (3D) element."""
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    arr = _mask_array(m)
    for _ in range(iterations):
        if not arr.any():
            break
        arr = _shift_reduce(arr, reduce_or=False)
    return _wrap_like(m, arr)


def dilate(m, iterations: int = 1):
    """Minkowski dilation by the same structuring element as erode."""
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    arr = _mask_array(m)
    for _ in range(iterations):
        arr = _shift_reduce(arr, reduce_or=True)
    return _wrap_like(m, arr)


def opening(m):
    """Morphological opening: erosion followed by dilation."""
    arr = _mask_array(m)
    return _wrap_like(m, _shift_reduce(_shift_reduce(arr, False), True))


def skeletonize(m: BinaryImage2D) -> BinaryImage2D:
    """Iterative-erosion skeleton: union over k of (M erode k) minus its opening.

    The erosion depth runs until the eroded mask empties out; the result is
    always a subset of the input.
    """
    arr = _mask_array(m)
    if not arr.any():
        raise EmptyMask("skeletonize: mask has no foreground")
    skel = np.zeros_like(arr)
    eroded = arr
    while eroded.any():
        opened = _shift_reduce(_shift_reduce(eroded, False), True)
        skel |= eroded & ~opened
        eroded = _shift_reduce(eroded, reduce_or=False)
    return _wrap_like(m, skel)


# ---------------------------------------------------------------------------
# Zhang-Suen thinning
# ---------------------------------------------------------------------------

def _zs_neighbors(img: np.ndarray):
    """P2..P9 clockwise from north, as shifted views of a padded copy."""
    p = np.pad(img, 1, mode="constant", constant_values=False)
    h, w = img.shape
    cut = lambda dy, dx: p[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
    return [cut(-1, 0), cut(-1, 1), cut(0, 1), cut(1, 1),
            cut(1, 0), cut(1, -1), cut(0, -1), cut(-1, -1)]


def zhang_suen_thin(m: BinaryImage2D) -> BinaryImage2D:
    """Two-subiteration thinning to a 1-pixel-wide 8-connected skeleton.

    A final sequential pruning pass removes the staircase residue the
    parallel iterations leave behind (pixels whose neighborhood is a single
    arc), so chain pixels end up with at most two neighbors away from true
    junctions. Connectivity is preserved throughout.
    """
    img = _mask_array(m).copy()
    if not img.any():
        raise EmptyMask("zhang_suen_thin: mask has no foreground")
    changed = True
    while changed:
        changed = False
        for sub in (0, 1):
            n = _zs_neighbors(img)
            count = sum(x.astype(np.uint8) for x in n)
            ring = n + n[:1]
            transitions = sum(
                ((~ring[i]) & ring[i + 1]).astype(np.uint8) for i in range(8)
            )
            p2, p4, p6, p8 = n[0], n[2], n[4], n[6]
            if sub == 0:
                cond_a = ~(p2 & p4 & p6)
                cond_b = ~(p4 & p6 & p8)
            else:
                cond_a = ~(p2 & p4 & p8)
                cond_b = ~(p2 & p6 & p8)
            remove = (
                img
                & (count >= 2) & (count <= 6)
                & (transitions == 1)
                & cond_a & cond_b
            )
            if remove.any():
                img[remove] = False
                changed = True
    _prune_staircase(img)
    return _wrap_like(m, img)


# ring offsets (dy, dx) clockwise from north
_RING = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))


_RING_ADJ = [
    [
        j
        for j, (ey, ex) in enumerate(_RING)
        if j != i and max(abs(ey - dy), abs(ex - dx)) <= 1
    ]
    for i, (dy, dx) in enumerate(_RING)
]


def _prune_staircase(img: np.ndarray) -> None:
    """Sequentially drop redundant skeleton pixels, in place.

    A pixel goes when it is not an endpoint and its foreground neighbors
    form a single 8-connected component among themselves: the chain stays
    connected through that component, so the pixel is staircase residue.
    """
    h, w = img.shape
    changed = True
    while changed:
        changed = False
        for y, x in np.argwhere(img):
            ring = [
                bool(img[y + dy, x + dx])
                if 0 <= y + dy < h and 0 <= x + dx < w
                else False
                for dy, dx in _RING
            ]
            fg = [i for i in range(8) if ring[i]]
            if len(fg) < 2:
                continue
            # flood the neighbor set from one member
            seen = {fg[0]}
            stack = [fg[0]]
            while stack:
                cur = stack.pop()
                for nb in _RING_ADJ[cur]:
                    if ring[nb] and nb not in seen:
                        seen.add(nb)
                        stack.append(nb)
            if len(seen) == len(fg):
                img[y, x] = False
                changed = True


def count_components_8(m) -> int:
    """Number of 8-connected (2D) / 26-connected (3D) foreground components."""
    arr = _mask_array(m)
    structure = np.ones((3,) * arr.ndim, dtype=bool)
    _, n = ndimage.label(arr, structure=structure)
    return int(n)


# ---------------------------------------------------------------------------
# Exact Euclidean distance transform
# ---------------------------------------------------------------------------

_INF = np.float64(1e30)


def _sq_dist_pass(f: np.ndarray, axis: int) -> np.ndarray:
    """One exact separable pass: out[i] = min_j (f[j] + (i-j)^2) along axis.

    Evaluated by a vectorized scan over integer offsets; each offset is one
    whole-array shift, so the reduction order is fixed and deterministic.
    """
    n = f.shape[axis]
    out = f.copy()
    moved = np.moveaxis(out, axis, 0)
    src = np.moveaxis(f, axis, 0)
    for d in range(1, n):
        dd = float(d * d)
        moved[d:] = np.minimum(moved[d:], src[:-d] + dd)
        moved[:-d] = np.minimum(moved[:-d], src[d:] + dd)
    return out


def squared_distance_to_set(seed: np.ndarray) -> np.ndarray:
    """Exact squared Euclidean distance from every cell to the seed set."""
    if not seed.any():
        raise NoBoundary("distance transform: empty seed set")
    f = np.where(seed, 0.0, _INF)
    for axis in range(seed.ndim):
        f = _sq_dist_pass(f, axis)
    return f


def boundary_set(arr: np.ndarray) -> np.ndarray:
    """Foreground cells with at least one background face-neighbor.

    Cells on the grid edge count as boundary (virtual outside background).
    """
    inner = np.pad(arr, 1, mode="constant", constant_values=False)
    all_fg = np.ones_like(arr)
    for axis in range(arr.ndim):
        for step in (-1, 1):
            sl = tuple(
                slice(1 + (step if a == axis else 0), 1 + (step if a == axis else 0) + s)
                for a, s in enumerate(arr.shape)
            )
            all_fg &= inner[sl]
    return arr & ~all_fg


def edt(m) -> ScalarField:
    """Exact Euclidean distance to the mask boundary.

    The boundary is the set of foreground cells with a background
    face-neighbor, so the result is 0 on the mask surface and maximal on
    the medial axis. Background cells get their distance to the boundary
    too (useful for distance-to-mask fields).
    """
    arr = _mask_array(m)
    if not arr.any():
        raise EmptyMask("edt: mask has no foreground")
    boundary = boundary_set(arr)
    if not boundary.any():
        raise NoBoundary("edt: mask has no boundary cell")
    spacing = getattr(m, "spacing", None)
    return ScalarField(np.sqrt(squared_distance_to_set(boundary)), spacing)


def distance_to_foreground(m) -> ScalarField:
    """Exact Euclidean distance from every cell to the nearest foreground cell."""
    arr = _mask_array(m)
    if not arr.any():
        raise EmptyMask("distance_to_foreground: mask has no foreground")
    spacing = getattr(m, "spacing", None)
    return ScalarField(np.sqrt(squared_distance_to_set(arr)), spacing)


# ---------------------------------------------------------------------------
# Discrete derivatives
# ---------------------------------------------------------------------------

def _field_values(f) -> np.ndarray:
    return f.values if isinstance(f, ScalarField) else np.asarray(f, dtype=np.float64)


def smooth(f, sigma: float):
    """Gaussian smoothing; sigma == 0 is the identity."""
    vals = _field_values(f)
    if sigma <= 0:
        out = vals
    else:
        out = ndimage.gaussian_filter(vals, sigma=sigma, mode="nearest")
    return ScalarField(out, getattr(f, "spacing", None))


def gradient(f, sigma_smooth: float = 0.0) -> np.ndarray:
    """Central-difference gradient field, shape grid + (ndim,).

    One-sided differences at the borders; optional Gaussian pre-smoothing.
    """
    vals = _field_values(f)
    if min(vals.shape) < 3:
        raise GridTooSmall("gradient: need at least 3 samples per axis")
    if sigma_smooth > 0:
        vals = ndimage.gaussian_filter(vals, sigma=sigma_smooth, mode="nearest")
    return np.stack(np.gradient(vals), axis=-1)


def hessian(f, sigma_smooth: float = 0.0) -> np.ndarray:
    """Symmetric Hessian field, shape grid + (ndim, ndim).

    Diagonal entries use direct second differences (f[i-1] - 2 f[i] + f[i+1]),
    which keeps crease-like ridges sharp; mixed entries use gradient-of-
    gradient and the result is symmetrized.
    """
    vals = _field_values(f)
    if min(vals.shape) < 3:
        raise GridTooSmall("hessian: need at least 3 samples per axis")
    if sigma_smooth > 0:
        vals = ndimage.gaussian_filter(vals, sigma=sigma_smooth, mode="nearest")
    ndim = vals.ndim
    grads = np.gradient(vals)
    H = np.zeros(vals.shape + (ndim, ndim))
    for i in range(ndim):
        # second difference along axis i, replicated at the borders
        padded = np.pad(vals, [(1, 1) if a == i else (0, 0) for a in range(ndim)], mode="edge")
        sl = lambda o: tuple(
            slice(1 + o, 1 + o + s) if a == i else slice(None)
            for a, s in enumerate(vals.shape)
        )
        H[..., i, i] = padded[sl(-1)] - 2.0 * vals + padded[sl(1)]
        for j in range(i + 1, ndim):
            mixed = np.gradient(grads[i], axis=j)
            H[..., i, j] = mixed
            H[..., j, i] = mixed
    return H
