import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from carleman_lab.domain import DomainSpec, Field, GridError, build_grid


def test_spacing_times_intervals_equals_extent():
    spec = DomainSpec(omega=((0.0, 1.0),), t_max=2.0, a_max=3.0, tau_min=0.5, tau_max=1.5)
    g = build_grid(spec, [11, 5, 7, 9])
    for (lo, hi), m, h in zip(spec.extents, g.counts, g.spacings):
        assert h * (m - 1) == pytest.approx(hi - lo, rel=1e-15)
    assert g.t[-1] == 2.0 and g.a[-1] == 3.0 and g.tau[0] == 0.5


def test_two_space_dimensions_axis_layout():
    g = build_grid(DomainSpec(omega=((0, 1), (0, 2))), [5, 6, 3, 4, 7])
    assert g.shape == (5, 6, 3, 4, 7)
    assert (g.t_axis, g.a_axis, g.tau_axis) == (2, 3, 4)
    assert g.hx == pytest.approx((0.25, 0.4))


@pytest.mark.parametrize(
    "kwargs, msg",
    [
        ({"t_max": 0.0}, "non-positive extent"),
        ({"a_max": -1.0}, "non-positive extent"),
        ({"tau_min": 1.0, "tau_max": 1.0}, "empty size interval"),
        ({"omega": ((1.0, 0.0),)}, "non-positive spatial extent"),
        ({"omega": ((0, 1),) * 3}, "spatial dimension"),
    ],
)
def test_invalid_domains(kwargs, msg):
    with pytest.raises(GridError, match=msg):
        DomainSpec(**kwargs)


def test_too_few_nodes():
    with pytest.raises(GridError, match="node count < 3"):
        build_grid(DomainSpec(), [2, 9, 9, 9])
    with pytest.raises(GridError, match="expected 4"):
        build_grid(DomainSpec(), [9, 9, 9])


def test_field_rejects_nonfinite_and_wrong_shape(small_grid):
    bad = np.zeros(small_grid.shape)
    bad[1, 1, 1, 1] = np.nan
    with pytest.raises(GridError, match="non-finite"):
        Field(small_grid, bad)
    with pytest.raises(GridError, match="does not match"):
        Field(small_grid, np.zeros((3, 3)))


def test_field_values_are_read_only(small_grid):
    f = Field.zeros(small_grid)
    with pytest.raises(ValueError):
        f.values[0, 0, 0, 0] = 1.0


def test_ball_mask_keeps_inscribed_nodes():
    g = build_grid(DomainSpec(omega=((-1, 1), (-1, 1)), shape="ball"), [5, 5, 3, 3, 3])
    m = g.omega_mask()
    assert m[2, 2] and m[0, 2] and not m[0, 0]


@given(
    st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3),
    st.integers(3, 9), st.integers(3, 9),
)
def test_trapezoid_exact_for_multilinear(c0, cx, ct, ca, cu, m1, m2):
    spec = DomainSpec(omega=((0.0, 2.0),), t_max=1.0, a_max=3.0, tau_min=-1.0, tau_max=1.0)
    g = build_grid(spec, [m1, m2, m1, m2])
    f = Field.from_function(g, lambda x, t, a, tau: c0 + cx * x + ct * t + ca * a * x + cu * tau)
    # volume 2*1*3*2 = 12; means: x 1, t 0.5, a*x 1.5, tau 0
    exact = 12 * (c0 + cx + 0.5 * ct + 1.5 * ca)
    assert f.integral() == pytest.approx(exact, rel=1e-12, abs=1e-12)
