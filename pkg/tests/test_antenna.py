import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from a2gloc.antenna import (
    HALF_WAVE_DIPOLE_GAIN,
    DipolePattern,
    GriddedPattern,
    IsotropicPattern,
    MalformedRowError,
    NonAscendingGridError,
    NonRectangularGridError,
    PatternFileError,
    dipole_gain,
    load_pattern,
    pattern_gain,
    sampled_dipole_pattern,
    save_pattern,
)
from a2gloc.geometry import SphericalDirection


def _write(tmp_path, rows, header="theta_deg,phi_deg,gain_dbi"):
    p = tmp_path / "pattern.csv"
    p.write_text("\n".join([header, *rows]) + "\n", encoding="utf-8")
    return p


def test_dipole_peak_null_and_sixty_degrees():
    g = HALF_WAVE_DIPOLE_GAIN
    assert dipole_gain(0.0) == pytest.approx(g)
    assert dipole_gain(math.pi / 2) == pytest.approx(0.0, abs=1e-30)
    assert dipole_gain(-math.pi / 2) == pytest.approx(0.0, abs=1e-30)
    assert dipole_gain(math.radians(60)) == pytest.approx(g / 4)


def test_dipole_pattern_ignores_azimuth():
    p = DipolePattern(2.0)
    assert p.gain(0.3, 0.0) == p.gain(0.3, 2.5)


def test_isotropic_pattern():
    assert IsotropicPattern(1.0).gain(1.1, -2.0) == 1.0
    np.testing.assert_array_equal(IsotropicPattern(2.0).gain(np.zeros(3), np.zeros(3)), [2.0, 2.0, 2.0])


@settings(max_examples=200, deadline=None)
@given(st.floats(-math.pi / 2, math.pi / 2))
def test_dipole_symmetric_and_bounded(theta):
    g = dipole_gain(theta)
    assert g == dipole_gain(-theta)
    assert 0 <= g <= HALF_WAVE_DIPOLE_GAIN


def test_zero_dbi_grid_is_unity_everywhere(tmp_path):
    path = _write(tmp_path, ["-90,0,0", "-90,180,0", "90,0,0", "90,180,0"])
    pat = load_pattern(path)
    for theta, phi in [(0.0, 0.0), (0.7, 2.0), (-1.2, 5.9)]:
        assert pat.gain(theta, phi) == pytest.approx(1.0)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_pattern(tmp_path / "absent.csv")


@pytest.mark.parametrize(
    "rows,err,line",
    [
        (["0,0,0", "0,90,0", "0,0,1", "0,90,1"], NonAscendingGridError, 4),  # duplicated theta row
        (["0,0,0", "0,90,x"], MalformedRowError, 3),
        (["0,0,0", "0,90"], MalformedRowError, 3),
        (["0,0,0", "0,90,0", "10,0,0"], NonRectangularGridError, 4),
        (["0,0,0", "0,90,0", "10,0,0", "10,45,0"], NonRectangularGridError, 5),
        (["10,0,0", "10,90,0", "0,0,0", "0,90,0"], NonAscendingGridError, 4),
        (["0,90,0", "0,0,0"], NonAscendingGridError, 3),
    ],
)
def test_parse_errors_name_the_line(tmp_path, rows, err, line):
    with pytest.raises(err) as info:
        load_pattern(_write(tmp_path, rows))
    assert info.value.line == line
    assert f"line {line}" in str(info.value)


def test_bad_header(tmp_path):
    with pytest.raises(PatternFileError):
        load_pattern(_write(tmp_path, ["0,0,0"], header="a,b,c"))


def test_grid_validation():
    with pytest.raises(ValueError):
        GriddedPattern(np.array([0.0, 0.0]), np.array([0.0]), np.zeros((2, 1)))
    with pytest.raises(ValueError):
        GriddedPattern(np.array([0.0]), np.array([0.0, 10.0]), np.zeros((2, 1)))
    with pytest.raises(ValueError):
        GriddedPattern(np.array([0.0]), np.array([0.0]), np.array([[np.inf]]))


def _demo_grid():
    theta = np.array([-30.0, 0.0, 30.0])
    phi = np.arange(0.0, 360.0, 5.0)
    rng = np.random.default_rng(1)
    return GriddedPattern(theta, phi, rng.uniform(-10, 5, size=(3, phi.size)))


def test_query_at_node_returns_node_gain():
    pat = _demo_grid()
    assert pat.gain_db(0.0, math.radians(45)) == pytest.approx(pat.gain_dbi[1, 9], abs=1e-12)


def test_phi_midpoint_is_mean_of_db_values():
    pat = _demo_grid()
    mid = pat.gain_db(math.radians(30), math.radians(47.5))
    assert mid == pytest.approx(0.5 * (pat.gain_dbi[2, 9] + pat.gain_dbi[2, 10]), abs=1e-12)
    assert pat.gain(math.radians(30), math.radians(47.5)) == pytest.approx(10 ** (mid / 10))


def test_seam_interpolation_matches_periodic_extension():
    pat = _demo_grid()
    # oracle: duplicate the first column at 360 and interpolate linearly in phi
    row = np.append(pat.gain_dbi[1], pat.gain_dbi[1, 0])
    grid = np.append(pat.phi_grid, 360.0)
    expected = np.interp(359.0, grid, row)
    assert pat.gain_db(0.0, math.radians(359.0)) == pytest.approx(expected, abs=1e-12)


def test_theta_outside_grid_clamps():
    pat = _demo_grid()
    assert pat.gain_db(math.radians(80), 0.0) == pytest.approx(pat.gain_dbi[2, 0])
    assert pat.gain_db(math.radians(-80), 0.0) == pytest.approx(pat.gain_dbi[0, 0])


def test_seam_continuity_on_smooth_grid():
    theta = np.array([-90.0, 0.0, 90.0])
    phi = np.arange(0.0, 360.0, 10.0)
    g = np.tile(3 * np.cos(np.radians(phi)), (3, 1))
    pat = GriddedPattern(theta, phi, g)
    a = pat.gain_db(0.1, math.radians(359.999))
    b = pat.gain_db(0.1, math.radians(0.001))
    assert abs(a - b) < 1e-3


def test_sampled_dipole_matches_analytic():
    pat = sampled_dipole_pattern(5.0)
    theta = np.radians(np.linspace(-60, 60, 241))
    phi = np.radians(np.linspace(0, 359, 241))
    err = pat.gain_db(theta, phi) - 10 * np.log10(dipole_gain(theta))
    assert np.max(np.abs(err)) <= 0.05


def test_save_load_round_trip(tmp_path):
    pat = _demo_grid()
    save_pattern(pat, tmp_path / "p.csv")
    back = load_pattern(tmp_path / "p.csv")
    np.testing.assert_array_equal(back.theta_grid, pat.theta_grid)
    np.testing.assert_array_equal(back.phi_grid, pat.phi_grid)
    np.testing.assert_array_equal(back.gain_dbi, pat.gain_dbi)


def test_pattern_gain_dispatch():
    d = SphericalDirection.from_degrees(60, 10)
    assert pattern_gain(DipolePattern(), d) == pytest.approx(HALF_WAVE_DIPOLE_GAIN / 4)
    assert pattern_gain(_demo_grid(), d) > 0


@settings(max_examples=200, deadline=None)
@given(st.floats(-math.pi / 2, math.pi / 2), st.floats(-10, 10))
def test_gridded_gain_nonnegative(theta, phi):
    assert _demo_grid().gain(theta, phi) >= 0
