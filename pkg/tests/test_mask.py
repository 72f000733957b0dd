import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gabor_odo.mask import (FIXED_GABOR, GaborParams, MaskError, MaskRaster, decompose, eval_gabor_cos,
                            eval_gabor_sin, pixel_centers, rasterize)

params_st = st.builds(GaborParams, st.floats(1.0, 20.0), st.floats(0.2, 2.0), st.floats(0.05, 1.0))


def test_gabor_values_match_formula():
    p = GaborParams(6.0, 1.0, 1.0)
    assert eval_gabor_cos(p, 0.0) == 1.0
    assert eval_gabor_sin(p, 0.0) == 0.0
    u = 0.125
    env = np.exp(-(u**2) / 2)
    assert eval_gabor_cos(p, u) == pytest.approx(env * np.cos(2 * np.pi * 6 * u), abs=1e-15)
    assert eval_gabor_sin(p, u) == pytest.approx(env * np.sin(2 * np.pi * 6 * u), abs=1e-15)


def test_decompose_examples():
    assert decompose(0.7) == (0.7, 0.0)
    assert decompose(-0.4) == (0.0, 0.4)
    with pytest.raises(MaskError):
        decompose(1.2)


def test_pixel_centres_are_symmetric():
    u = pixel_centers(128)
    np.testing.assert_allclose(u, -u[::-1], atol=0)
    assert u[0] == pytest.approx(-0.5 + 0.5 / 128)


def test_rasterized_centre_value():
    # no pixel sits exactly at u = 0; the nearest is half a pixel away
    m = rasterize(FIXED_GABOR, 128)
    row = m.g_cos[0]
    assert row[63] == pytest.approx(np.cos(np.pi * 6 / 128) * np.exp(-(0.5 / 128) ** 2 / 2), abs=1e-12)
    assert row[63] == pytest.approx(0.989, abs=1e-3)


@settings(max_examples=40, deadline=None)
@given(params_st, st.sampled_from([32, 64, 128]))
def test_raster_algebra(p, n):
    m = rasterize(p, n)
    u = pixel_centers(n)
    # exact reconstruction and disjoint support
    np.testing.assert_array_equal(m.g_cos[0], eval_gabor_cos(p, u))
    np.testing.assert_array_equal(m.g_sin[0], eval_gabor_sin(p, u))
    assert not np.any((m.cos_plus > 0) & (m.cos_minus > 0))
    assert not np.any((m.sin_plus > 0) & (m.sin_minus > 0))
    for g in m.grids():
        assert g.min() >= 0 and g.max() <= p.alpha


def test_masks_are_constant_along_rows():
    m = rasterize(GaborParams(7.5, 0.5, 0.8), 64)
    for g in m.grids():
        assert np.all(g == g[0])


@pytest.mark.parametrize("xi0", [3, 6, 9, 12, 16])
@pytest.mark.parametrize("sigma", [0.3, 0.5, 1.0, 2.0])
def test_spectral_concentration_at_carrier(xi0, sigma):
    n = 128
    m = rasterize(GaborParams(float(xi0), sigma, 1.0), n)
    for row in (m.g_cos[0], m.g_sin[0]):
        spec = np.abs(np.fft.fft(row)) ** 2
        pos = spec[1:n // 2]
        assert np.argmax(pos) + 1 == xi0
        near = sum(spec[(s * xi0 + k) % n] for s in (1, -1) for k in range(-3, 4))
        assert near / spec[1:].sum() > 0.9
    # the complex quadrature mask is one-sided: g_cos + i g_sin sits at +xi0
    z = np.fft.fft(m.g_cos[0] + 1j * m.g_sin[0])
    assert np.argmax(np.abs(z)) == xi0


def test_parameter_bounds():
    with pytest.raises(MaskError):
        GaborParams(6.0, 1.0, 0.0)
    with pytest.raises(MaskError):
        GaborParams(6.0, 1.0, 1.5)
    with pytest.raises(MaskError):
        GaborParams(0.0, 1.0, 1.0)
    with pytest.raises(MaskError):
        GaborParams(6.0, -1.0, 1.0)
    with pytest.raises(MaskError):
        rasterize(FIXED_GABOR, 16)


def test_raster_rejects_invalid_grids():
    ok = np.zeros((8, 8))
    with pytest.raises(MaskError):
        MaskRaster(np.full((8, 8), 1.2), ok, ok, ok)
    with pytest.raises(MaskError):
        MaskRaster(np.zeros((8, 6)), np.zeros((8, 6)), np.zeros((8, 6)), np.zeros((8, 6)))
    bad = ok.copy()
    bad[3, 2] = 0.5
    with pytest.raises(MaskError):
        MaskRaster(bad, ok, ok, ok)


def test_json_round_trip_is_bit_exact(tmp_path):
    m = rasterize(GaborParams(8.3, 0.7, 0.9), 64)
    back = MaskRaster.from_json(m.to_json())
    for a, b in zip(m.grids(), back.grids()):
        assert a.tobytes() == b.tobytes()
    assert back.params == m.params
    paths = m.save_pgm(tmp_path)
    assert len(paths) == 4 and all(p.exists() for p in paths)
