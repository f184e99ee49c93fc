import numpy as np
import pytest

from bundleflow.grid import BaseDomain, DomainError
from bundleflow.solitons import (
    SolitonSpec,
    band_limited_field,
    harmonic_einstein_residual,
    make_soliton,
    perturb,
    soliton_distance,
)
from bundleflow.state import validate


@pytest.mark.parametrize("kind", ["sol", "nil", "h2xr", "h3"])
def test_closed_forms_satisfy_expander_equations(kind):
    dom = {"sol": BaseDomain(dim=1, sizes=(128,), periods=(1.0,)),
           "nil": BaseDomain(dim=2, sizes=(16, 16), periods=(1.0, 1.0))}.get(kind)
    spec = SolitonSpec(kind, domain=dom)
    st = make_soliton(spec, 2.0)
    res = harmonic_einstein_residual(st, "expander")
    # Nil carries an Euler class, so only the metric parts are checked there
    assert res.res_G < 1e-6 and res.res_detG < 1e-12
    if kind == "nil":
        # nonzero F: the base equation of the F = 0 system cannot balance
        assert res.res_F > 0.1 and res.res_g > 0.1
    else:
        assert res.res_F == 0.0 and res.res_g < 1e-6


def test_flat_is_steady():
    st = make_soliton(SolitonSpec("flat"), 1.0)
    assert harmonic_einstein_residual(st, "steady").total < 1e-11
    assert harmonic_einstein_residual(st, "expander").res_g > 0


def test_shrinker_residual_needs_tau():
    st = make_soliton(SolitonSpec("flat"), 1.0)
    with pytest.raises(ValueError):
        harmonic_einstein_residual(st, "shrinker")
    assert harmonic_einstein_residual(st, "shrinker", 0.5).res_g == pytest.approx(1.0)


def test_distance_vanishes_on_family_and_grows_with_eps(sol_spec, nil_spec):
    for spec in (sol_spec, nil_spec):
        st = make_soliton(spec, 3.0)
        assert soliton_distance(st, spec) < 1e-10
        d1 = soliton_distance(perturb(st, 1e-3, seed=1), spec)
        d2 = soliton_distance(perturb(st, 1e-2, seed=1), spec)
        assert 0 < d1 < d2
        assert 5 < d2 / d1 < 15


def test_sol_distance_ignores_translation_and_reparametrization(sol_spec):
    st = make_soliton(sol_spec, 2.0)
    X = np.array(sol_spec.X)
    shifted = st.with_fields(G=st.G * np.exp(0.3 * X)[None, :, None])
    assert soliton_distance(shifted, sol_spec) < 1e-9


@pytest.mark.parametrize("kind,sizes,period", [("sol", (64, 128, 256), 2 * np.pi),
                                               ("nil", (24, 48, 96), 4.0)])
def test_perturbation_keeps_spd_and_seam(kind, sizes, period):
    defects = []
    for n in sizes:
        dim = 1 if kind == "sol" else 2
        dom = BaseDomain(dim=dim, sizes=(n,) * dim, periods=(period,) * dim)
        st = perturb(make_soliton(SolitonSpec(kind, domain=dom), 1.0), 0.2, seed=5)
        rep = validate(st)
        assert rep.ok
        defects.append(rep.seam_defect)
    # extrapolation defect shrinks at high order under refinement
    assert defects[1] < defects[0] / 8 and defects[2] < defects[1] / 8


def test_perturbation_is_seeded(nil_spec):
    base = make_soliton(nil_spec, 1.0)
    a, b = perturb(base, 0.1, seed=9), perturb(base, 0.1, seed=9)
    assert np.array_equal(a.G, b.G) and np.array_equal(a.a, b.a)
    assert not np.array_equal(a.G, perturb(base, 0.1, seed=10).G)
    assert perturb(base, 0.0) is base


def test_band_limited_field_properties():
    dom = BaseDomain(dim=2, sizes=(32, 32), periods=(1.0, 1.0))
    u = band_limited_field(dom, np.random.default_rng(0), modes=4)
    assert abs(u.mean()) < 1e-14
    assert np.max(np.abs(u)) == pytest.approx(1.0)
    spectrum = np.abs(np.fft.fft2(u))
    k = np.fft.fftfreq(32, 1 / 32)
    kk = k[:, None] ** 2 + k[None, :] ** 2
    assert np.max(spectrum[kk > 4]) < 1e-10


@pytest.mark.parametrize("kwargs", [
    dict(kind="sol", X=(1.0, 1.0)),
    dict(kind="sol", X=(0.0, 0.0)),
    dict(kind="nil", c=0.0),
    dict(kind="h3", kappa=1.0),
    dict(kind="mystery"),
])
def test_spec_validation(kwargs):
    with pytest.raises(ValueError):
        SolitonSpec(**kwargs)


def test_spec_domain_checks():
    with pytest.raises(DomainError):
        SolitonSpec("nil", domain=BaseDomain(dim=1, sizes=(16,), periods=(1.0,)))
    with pytest.raises(ValueError):
        make_soliton(SolitonSpec("sol"), 0.0)
