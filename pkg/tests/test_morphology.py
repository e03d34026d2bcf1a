import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wirerecon.errors import EmptyMask, GridTooSmall
from wirerecon.morphology import (
    BinaryImage2D,
    BinaryVolume3D,
    ScalarField,
    boundary_set,
    count_components_8,
    dilate,
    distance_to_foreground,
    edt,
    erode,
    gradient,
    hessian,
    opening,
    skeletonize,
    zhang_suen_thin,
)

# ---------------------------------------------------------------------------
# brute-force oracles
# ---------------------------------------------------------------------------

def brute_erode(arr: np.ndarray) -> np.ndarray:
    """Neighborhood-min rule, out-of-bounds treated as background."""
    out = np.zeros_like(arr)
    ndim = arr.ndim
    for idx in np.ndindex(*arr.shape):
        keep = True
        for off in np.ndindex(*(3,) * ndim):
            nb = tuple(i + o - 1 for i, o in zip(idx, off))
            if any(c < 0 or c >= s for c, s in zip(nb, arr.shape)) or not arr[nb]:
                keep = False
                break
        out[idx] = keep
    return out


def brute_dilate(arr: np.ndarray) -> np.ndarray:
    out = np.zeros_like(arr)
    ndim = arr.ndim
    for idx in np.ndindex(*arr.shape):
        hit = False
        for off in np.ndindex(*(3,) * ndim):
            nb = tuple(i + o - 1 for i, o in zip(idx, off))
            if all(0 <= c < s for c, s in zip(nb, arr.shape)) and arr[nb]:
                hit = True
                break
        out[idx] = hit
    return out


def brute_lantuejoul(arr: np.ndarray) -> np.ndarray:
    """Direct evaluation of the union-of-erosion-residues formula."""
    skel = np.zeros_like(arr)
    eroded = arr.copy()
    while eroded.any():
        opened = brute_dilate(brute_erode(eroded))
        skel |= eroded & ~opened
        eroded = brute_erode(eroded)
    return skel


def brute_edt_to_boundary(arr: np.ndarray) -> np.ndarray:
    boundary = np.argwhere(boundary_set(arr))
    coords = np.indices(arr.shape).reshape(arr.ndim, -1).T
    d2 = ((coords[:, None, :] - boundary[None, :, :]) ** 2).sum(axis=2).min(axis=1)
    return np.sqrt(d2.astype(np.float64)).reshape(arr.shape)


# ---------------------------------------------------------------------------
# erosion / opening / skeleton
# ---------------------------------------------------------------------------

class TestErode:
    def test_solid_5x5_strips_border(self):
        m = BinaryImage2D(np.ones((5, 5), dtype=bool))
        out = erode(m, 1)
        expected = np.zeros((5, 5), dtype=bool)
        expected[1:4, 1:4] = True
        assert np.array_equal(out.pixels, expected)

    def test_zero_iterations_is_identity(self):
        rng = np.random.default_rng(0)
        m = BinaryImage2D(rng.random((12, 9)) > 0.5)
        assert np.array_equal(erode(m, 0).pixels, m.pixels)

    def test_matches_double_brute_force(self):
        rng = np.random.default_rng(1)
        arr = rng.random((32, 32)) > 0.35
        out = erode(BinaryImage2D(arr), 2).pixels
        assert np.array_equal(out, brute_erode(brute_erode(arr)))

    def test_3d_matches_brute_force(self):
        rng = np.random.default_rng(2)
        arr = rng.random((9, 8, 7)) > 0.3
        out = erode(BinaryVolume3D(arr), 1).voxels
        assert np.array_equal(out, brute_erode(arr))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=0, max_value=10_000))
    def test_monotone_in_mask(self, seed):
        rng = np.random.default_rng(seed)
        m2 = rng.random((16, 16)) > 0.4
        m1 = m2 & (rng.random((16, 16)) > 0.3)  # m1 subset of m2
        e1 = erode(BinaryImage2D(m1), 1).pixels
        e2 = erode(BinaryImage2D(m2), 1).pixels
        assert not (e1 & ~e2).any()


class TestSkeletonize:
    def test_thin_line_survives(self):
        arr = np.zeros((7, 20), dtype=bool)
        arr[3, 2:18] = True
        out = skeletonize(BinaryImage2D(arr))
        assert np.array_equal(out.pixels, arr)

    def test_solid_square_center(self):
        arr = np.zeros((11, 11), dtype=bool)
        arr[2:9, 2:9] = True
        out = skeletonize(BinaryImage2D(arr)).pixels
        assert np.array_equal(out, brute_lantuejoul(arr))
        assert out[5, 5]

    def test_empty_raises(self):
        with pytest.raises(EmptyMask):
            skeletonize(BinaryImage2D(np.zeros((5, 5), dtype=bool)))

    def test_random_masks_match_set_formula(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            arr = rng.random((24, 24)) > 0.45
            if not arr.any():
                continue
            out = skeletonize(BinaryImage2D(arr)).pixels
            assert np.array_equal(out, brute_lantuejoul(arr))
            assert not (out & ~arr).any()  # subset of input

    def test_opening_matches_brute(self):
        rng = np.random.default_rng(4)
        arr = rng.random((20, 20)) > 0.4
        assert np.array_equal(opening(BinaryImage2D(arr)).pixels, brute_dilate(brute_erode(arr)))


class TestZhangSuen:
    def test_diagonal_line_unchanged(self):
        arr = np.zeros((16, 16), dtype=bool)
        for i in range(2, 14):
            arr[i, i] = True
        out = zhang_suen_thin(BinaryImage2D(arr))
        assert np.array_equal(out.pixels, arr)

    def test_thick_s_curve_thins_to_unit_width(self):
        yy, xx = np.mgrid[0:40, 0:60]
        curve_y = 20 + 10 * np.sin(xx[0] / 9.0)
        arr = np.abs(yy - curve_y[None, :]) <= 1.5
        out = zhang_suen_thin(BinaryImage2D(arr)).pixels
        # every skeleton pixel has at most 2 neighbors except isolated junctions
        from wirerecon.centerline import neighbor_counts

        counts = neighbor_counts(out)
        assert (counts[out] <= 2).mean() > 0.98

    def test_component_count_preserved(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            arr = np.zeros((40, 40), dtype=bool)
            # two disjoint blobs
            arr[5:15, 5:20] = True
            arr[25:35, 18 + rng.integers(0, 4):34] = True
            out = zhang_suen_thin(BinaryImage2D(arr))
            assert count_components_8(out) == count_components_8(BinaryImage2D(arr)) == 2

    def test_idempotent(self):
        yy, xx = np.mgrid[0:30, 0:30]
        arr = ((xx - 14) ** 2 + (yy - 14) ** 2 <= 100) & ((xx - 14) ** 2 + (yy - 14) ** 2 >= 25)
        once = zhang_suen_thin(BinaryImage2D(arr))
        twice = zhang_suen_thin(once)
        assert np.array_equal(once.pixels, twice.pixels)

    def test_empty_raises(self):
        with pytest.raises(EmptyMask):
            zhang_suen_thin(BinaryImage2D(np.zeros((4, 4), dtype=bool)))


# ---------------------------------------------------------------------------
# EDT
# ---------------------------------------------------------------------------

class TestEdt:
    def test_single_voxel_is_its_own_boundary(self):
        arr = np.zeros((5, 5, 5), dtype=bool)
        arr[2, 2, 2] = True
        d = edt(BinaryVolume3D(arr)).values
        assert d[2, 2, 2] == 0.0

    def test_solid_cube_center_distance(self):
        arr = np.ones((7, 7, 7), dtype=bool)
        d = edt(BinaryVolume3D(arr)).values
        assert d[3, 3, 3] == pytest.approx(3.0, abs=1e-12)
        assert np.allclose(d, brute_edt_to_boundary(arr), atol=1e-9)

    def test_random_volumes_match_brute_force(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            arr = rng.random((16, 16, 16)) > 0.6
            if not arr.any():
                continue
            d = edt(BinaryVolume3D(arr)).values
            assert np.allclose(d, brute_edt_to_boundary(arr), atol=1e-9)

    def test_random_2d_match_brute_force(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            arr = rng.random((16, 16)) > 0.5
            if not arr.any():
                continue
            d = edt(BinaryImage2D(arr)).values
            assert np.allclose(d, brute_edt_to_boundary(arr), atol=1e-9)

    def test_empty_raises(self):
        with pytest.raises(EmptyMask):
            edt(BinaryImage2D(np.zeros((4, 4), dtype=bool)))

    def test_distance_to_foreground(self):
        arr = np.zeros((9, 9), dtype=bool)
        arr[4, 4] = True
        d = distance_to_foreground(BinaryImage2D(arr)).values
        assert d[4, 4] == 0.0
        assert d[4, 7] == pytest.approx(3.0)
        assert d[0, 0] == pytest.approx(np.sqrt(32.0))


# ---------------------------------------------------------------------------
# derivatives
# ---------------------------------------------------------------------------

class TestDerivatives:
    def test_linear_field(self):
        x = np.arange(9, dtype=float)
        vals = np.broadcast_to(x[:, None, None], (9, 8, 7)).copy()
        g = gradient(ScalarField(vals))
        H = hessian(ScalarField(vals))
        assert np.allclose(g[2:-2, 2:-2, 2:-2, 0], 1.0, atol=1e-12)
        assert np.allclose(g[..., 1:], 0.0, atol=1e-12)
        assert np.allclose(H[1:-1, 1:-1, 1:-1], 0.0, atol=1e-12)

    def test_quadratic_field(self):
        x = np.arange(12, dtype=float)
        vals = np.broadcast_to((x**2)[:, None], (12, 6)).copy()
        H = hessian(ScalarField(vals))
        assert np.allclose(H[1:-1, :, 0, 0], 2.0, atol=1e-9)

    def test_gradient_matches_numeric(self):
        rng = np.random.default_rng(8)
        vals = rng.normal(size=(10, 11, 12))
        from scipy.ndimage import gaussian_filter

        vals = gaussian_filter(vals, 1.5)
        g = gradient(ScalarField(vals))
        expect = np.stack(np.gradient(vals), axis=-1)
        assert np.allclose(g, expect, atol=1e-12)

    def test_hessian_symmetry(self):
        rng = np.random.default_rng(9)
        vals = rng.normal(size=(8, 8, 8))
        H = hessian(ScalarField(vals), sigma_smooth=1.0)
        assert np.allclose(H, np.swapaxes(H, -1, -2), atol=1e-12)

    def test_grid_too_small(self):
        with pytest.raises(GridTooSmall):
            gradient(ScalarField(np.zeros((2, 5))))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

class TestIO:
    def test_pgm_roundtrip(self, tmp_path):
        rng = np.random.default_rng(10)
        m = BinaryImage2D(rng.random((17, 23)) > 0.5)
        p = tmp_path / "mask.pgm"
        m.to_pgm(p)
        back = BinaryImage2D.from_pgm(p)
        assert np.array_equal(m.pixels, back.pixels)

    def test_volume_raw_roundtrip(self, tmp_path):
        rng = np.random.default_rng(11)
        v = BinaryVolume3D(rng.random((6, 7, 8)) > 0.5, spacing=(1.0, 1.0, 2.0))
        p = tmp_path / "vol.raw"
        v.to_raw(p)
        back = BinaryVolume3D.from_raw(p)
        assert np.array_equal(v.voxels, back.voxels)
        assert back.spacing == (1.0, 1.0, 2.0)

    def test_raw_is_x_fastest(self, tmp_path):
        arr = np.zeros((3, 2, 2), dtype=bool)
        arr[1, 0, 0] = True  # linear index 1 in x-fastest order
        p = tmp_path / "v.raw"
        BinaryVolume3D(arr).to_raw(p)
        payload = p.read_bytes()
        assert payload[1] == 1 and sum(payload) == 1

    def test_scalar_field_roundtrip(self, tmp_path):
        rng = np.random.default_rng(12)
        f = ScalarField(rng.random((5, 6, 7)).astype(np.float32).astype(np.float64))
        p = tmp_path / "field.raw"
        f.to_raw(p)
        back = ScalarField.from_raw(p)
        assert np.allclose(f.values, back.values, atol=1e-7)
