import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from roughsparse.errors import InvalidInputError, ParameterError, SingularityError
from roughsparse.kernel import (
    MollifiedProfile,
    MollifierSpec,
    RadialCutoff,
    SphereKernel,
    annular_piece_value,
    dini_constant_numeric,
    dini_of_mollified,
    kernel_spec_dict,
    kernel_value,
    load_kernel_spec,
    mollified_kernel,
    mollified_omega,
    mollified_sup_bound,
    omega0_fourier,
    preset_kernel,
    project_zero_mean,
)


def test_project_zero_mean_examples():
    assert np.allclose(project_zero_mean(np.ones(16), 2).samples, 0.0)
    th = 2 * np.pi * np.arange(16) / 16
    assert np.allclose(project_zero_mean(np.cos(th), 2).samples, np.cos(th), atol=1e-15)
    assert np.allclose(project_zero_mean([2.0, 0.0], 1).samples, [1.0, -1.0])
    with pytest.raises(InvalidInputError):
        project_zero_mean([], 2)


def test_sphere_kernel_validation():
    with pytest.raises(Exception):
        SphereKernel(2, np.ones(12))
    with pytest.raises(Exception):
        SphereKernel(1, [1.0, 0.5])
    with pytest.raises(Exception):
        SphereKernel(3, [1.0, -1.0])


@pytest.mark.parametrize("name", ["hilbert", "cos", "sign-bands", "random-rademacher"])
@pytest.mark.parametrize("n", [1, 2])
def test_presets_are_mean_zero(name, n):
    om = preset_kernel(name, n)
    assert abs(om.samples.mean()) <= 1e-12 * max(om.sup_norm, 1.0)


def test_spec_roundtrip(tmp_path):
    om = preset_kernel("random-rademacher", 2, 32, seed=3)
    d = kernel_spec_dict(om)
    again = load_kernel_spec(d)
    assert np.array_equal(again.samples, om.samples)
    p = tmp_path / "k.json"
    import json

    p.write_text(json.dumps(d))
    assert np.array_equal(load_kernel_spec(p).samples, om.samples)


def test_kernel_value_examples():
    assert kernel_value(preset_kernel("hilbert", 1), np.array([2.0])) == pytest.approx(0.5)
    assert kernel_value(preset_kernel("cos", 2), np.array([2.0, 0.0])) == pytest.approx(0.25)
    with pytest.raises(SingularityError):
        kernel_value(preset_kernel("hilbert", 1), np.array([0.0]))


@given(st.floats(0.1, 10.0), st.floats(0, 2 * np.pi))
def test_kernel_homogeneity(r, t):
    om = preset_kernel("random-rademacher", 2, 64, seed=1)
    x = r * np.array([math.cos(t), math.sin(t)])
    a, b = kernel_value(om, x), kernel_value(om, 2 * x)
    if a != 0:
        assert a / b == pytest.approx(4.0, rel=1e-12)


def test_mollifier_rejects_bad_eps():
    om = preset_kernel("hilbert", 1)
    for eps in (0.0, 1.0, -0.3, 1.5):
        with pytest.raises(ParameterError):
            mollified_kernel(om, eps)


def test_mollified_n1_matches_refined_quadrature():
    om = preset_kernel("hilbert", 1)
    coarse = mollified_omega(om, MollifierSpec(0.25), 1.0)
    fine = mollified_omega(om, MollifierSpec(0.25), 1.0, resolution=40960, bump_resolution=10240)
    assert abs(coarse - fine) <= 1e-6
    # for n = 1 the half-lines never mix when eps < 1, so the exact value is Omega(+1)
    assert abs(coarse - 1.0) <= 1e-6


def test_mollified_n2_sup_bound():
    om = preset_kernel("hilbert", 2, 64)
    assert mollified_sup_bound(om) == pytest.approx(9 / (2 * math.log(2)), rel=1e-12)
    for eps in (0.5, 0.125):
        vals = mollified_kernel(om, eps).samples
        assert np.max(np.abs(vals)) <= 6.4921276840003355


def test_profile_route_agrees_with_direct_route():
    om = preset_kernel("cos", 2, 64)
    prof = MollifiedProfile(om, 0.25)
    direct = mollified_omega(om, MollifierSpec(0.25), 0.3, resolution=2048, bump_resolution=48)
    assert prof(0.3) == pytest.approx(direct, abs=5e-4)


def test_radial_cutoff():
    assert RadialCutoff.psi(np.array([4.0]))[0] == 0.0
    assert RadialCutoff.psi(np.array([1.5]))[0] == pytest.approx(0.5)
    om = preset_kernel("hilbert", 1)
    assert annular_piece_value(om, 0, np.array([1.5])) == pytest.approx(0.5 / 1.5)
    # at |x| = 1 the pieces j = -1 and 0 sum to the full kernel
    x = np.array([1.0])
    total = annular_piece_value(om, -1, x) + annular_piece_value(om, 0, x)
    assert total == pytest.approx(kernel_value(om, x))


@given(st.floats(0.01, 100.0))
def test_partition_of_unity(t):
    s = sum(RadialCutoff.psi(np.array([t * 2.0**-j]))[0] for j in range(-12, 12))
    assert s == pytest.approx(1.0, abs=1e-12)


def test_fourier_at_zero_and_small_xi():
    assert abs(omega0_fourier(preset_kernel("hilbert", 1), 0.0)) <= 1e-10
    assert abs(omega0_fourier(preset_kernel("random-rademacher", 2, 64), np.zeros(2))) <= 1e-10
    om = preset_kernel("hilbert", 1)
    xs = np.geomspace(1e-3, 1e-2, 6)
    mags = [abs(omega0_fourier(om, x)) for x in xs]
    slope = np.polyfit(np.log(xs), np.log(mags), 1)[0]
    assert slope >= 0.9


def test_fourier_n1_closed_form():
    # -2i (Si(4 pi xi) - Si(2 pi xi)) evaluated with the sine integral
    val = omega0_fourier(preset_kernel("hilbert", 1), 10.0)
    assert abs(val.real) <= 1e-12
    assert val.imag == pytest.approx(-0.01590143138315181, abs=1e-6)
    fine = omega0_fourier(preset_kernel("hilbert", 1), 10.0, resolution=40960)
    assert abs(val - fine) <= 1e-6


def test_dini_constants():
    assert dini_of_mollified(1.0).dini_constant == 1.0
    assert dini_of_mollified(0.1).dini_constant == pytest.approx(3.302585092994046, rel=1e-15)
    d = dini_of_mollified(0.5)
    assert d.dini_constant == pytest.approx(1.6931471805599454, rel=1e-15)
    assert d.dini_constant <= 2 * math.log(2 / 0.5)
    for eps in (0.5, 0.1, 0.01):
        num = dini_constant_numeric(dini_of_mollified(eps), breakpoints=(eps,))
        assert num == pytest.approx(1 + math.log(1 / eps), rel=1e-9)
    with pytest.raises(ParameterError):
        dini_of_mollified(0.0)
