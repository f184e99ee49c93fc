import math

import numpy as np
import pytest

from bundleflow.flow import (
    StepCollapse,
    StepControl,
    blowdown_rescale,
    checkpoint_times,
    integrate,
    lie_correction,
    rhs_coupled,
    rhs_reduced,
    step_rk4,
)
from bundleflow.grid import BaseDomain
from bundleflow.solitons import SolitonSpec, make_soliton, perturb
from bundleflow.state import DensityField


def rel(x, y):
    return np.max(np.abs(x - y)) / np.max(np.abs(y))


def test_flat_stays_flat_for_ten_thousand_steps():
    spec = SolitonSpec("flat", domain=BaseDomain(dim=1, sizes=(16,), periods=(1.0,)))
    st = make_soliton(spec, 1.0)
    traj = integrate(st, rhs_reduced, 9.0, store_rates=False, checkpoint_every=4)
    assert traj.steps >= 10_000
    end = traj.states[-1]
    assert np.array_equal(end.G, st.G) and np.array_equal(end.g, st.g)


@pytest.mark.parametrize("kind", ["h2xr", "h3"])
def test_homogeneous_solitons_are_exact(kind):
    spec = SolitonSpec(kind, kappa=-0.5)
    traj = integrate(make_soliton(spec, 1.0), rhs_reduced, 3.0)
    ref = make_soliton(spec, 3.0)
    assert rel(traj.states[-1].g, ref.g) < 1e-13


def test_sol_tracks_closed_form(sol_spec):
    traj = integrate(make_soliton(sol_spec, 1.0), rhs_reduced, 1.5)
    ref = make_soliton(sol_spec, 1.5)
    # 64 nodes: the closed form is stationary only up to the O(h^4) truncation error
    assert rel(traj.states[-1].G, ref.G) < 2e-5
    assert rel(traj.states[-1].g, ref.g) < 2e-5


def test_nil_tracks_closed_form(nil_spec):
    traj = integrate(make_soliton(nil_spec, 1.0), rhs_reduced, 2.0)
    ref = make_soliton(nil_spec, 2.0)
    assert rel(traj.states[-1].G, ref.G) < 1e-10
    assert rel(traj.states[-1].g, ref.g) < 1e-10


def test_coupled_minus_reduced_is_lie_derivative(nil_spec):
    st = perturb(make_soliton(nil_spec, 1.0), 0.05, seed=2)
    x, y = st.domain.coordinates()
    f = 0.3 * np.sin(2 * np.pi * x / 4) * np.cos(2 * np.pi * y / 4)
    diff = rhs_coupled(st, f).combine(rhs_reduced(st), 1.0, -1.0)
    lie = lie_correction(st, f)
    assert rel(diff.G, lie.G) < 1e-3
    assert rel(diff.g, lie.g) < 1e-3
    assert rel(diff.a, lie.a) < 1e-3


def test_coupled_f_equation_uses_same_potential(perturbed_sol):
    d = DensityField.uniform(perturbed_sol)
    out = rhs_coupled(perturbed_sol, d)
    red = rhs_reduced(perturbed_sol)
    # constant f: the metric parts coincide and f_t = -(R - 1/4 g:Q - 1/2|F|^2)
    assert np.allclose(out.G, red.G) and np.allclose(out.g, red.g)
    trace = 0.5 * np.einsum("...ab,...ba->...", np.linalg.inv(perturbed_sol.g), red.g)
    assert np.allclose(out.f, trace, atol=1e-12)


def test_blowdown_rescaled_rates_solve_same_equations(nil_spec):
    st = perturb(make_soliton(nil_spec, 1.0), 0.05, seed=1)
    traj = integrate(st, rhs_reduced, 2.0, checkpoint_every=8)
    s = 2.0
    down = blowdown_rescale(traj, s)
    for state, rate in zip(down.states, down.rates):
        fresh = rhs_reduced(state)
        assert rel(rate.G, fresh.G) < 1e-12
        assert rel(rate.g, fresh.g) < 1e-12
        assert np.max(np.abs(rate.a - fresh.a)) < 1e-12 * max(1.0, np.max(np.abs(fresh.a)))


def test_blowdown_fixes_sol_and_needs_coverage(sol_spec):
    traj = integrate(make_soliton(sol_spec, 1.0), rhs_reduced, 4.0, checkpoint_every=8)
    down = blowdown_rescale(traj, 4.0, window=(1.0, 1.0))
    assert down.times == [1.0]
    assert rel(down.states[0].G, make_soliton(sol_spec, 1.0).G) < 5e-5
    with pytest.raises(ValueError):
        blowdown_rescale(traj, 8.0, window=(1.0, 1.0))


def test_hermite_interpolation_is_accurate(perturbed_sol):
    traj = integrate(perturbed_sol, rhs_reduced, 1.2, checkpoint_every=32)
    direct = integrate(perturbed_sol, rhs_reduced, 1.1).states[-1]
    assert rel(traj.at(1.1).G, direct.G) < 1e-6
    assert rel(traj.at(1.1, "linear").G, direct.G) > rel(traj.at(1.1).G, direct.G)


def test_integration_is_deterministic_and_resumes_exactly(perturbed_sol):
    one = integrate(perturbed_sol, rhs_reduced, 1.4, checkpoint_every=16)
    two = integrate(perturbed_sol, rhs_reduced, 1.4, checkpoint_every=16)
    assert np.array_equal(one.states[-1].G, two.states[-1].G)
    half = integrate(perturbed_sol, rhs_reduced, 1.2, checkpoint_every=16)
    rest = integrate(half.anchor, rhs_reduced, 1.4, checkpoint_every=16, origin=half.origin)
    assert rest.states[-1].t == one.states[-1].t
    assert np.array_equal(rest.states[-1].G, one.states[-1].G)
    assert np.array_equal(rest.states[-1].g, one.states[-1].g)


def test_step_collapse_is_reported(perturbed_sol):
    with pytest.raises(StepCollapse):
        step_rk4(perturbed_sol, rhs_reduced, StepControl(dt_min=0.5), dt=1e4)


def test_checkpoint_grid_is_geometric():
    marks = checkpoint_times(1.0, 1.0, math.e, 4)
    assert marks[:-1] == pytest.approx([math.exp(k / 4) for k in (1, 2, 3)])
    assert marks[-1] == math.e
