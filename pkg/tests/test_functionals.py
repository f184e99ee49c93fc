import csv
import math

import numpy as np
import pytest

from bundleflow.experiments import random_smooth_state
from bundleflow.flow import integrate, rhs_reduced
from bundleflow.functionals import (
    FunctionalSample,
    MassError,
    f_functional,
    fbar_identity_check,
    fd_derivative,
    jensen_bound,
    laplacian,
    potential,
    solve_f_backward,
    w_functional,
    wplus_functional,
    write_samples_csv,
)
from bundleflow.grid import BaseDomain, integrate_base, volume_element
from bundleflow.solitons import SolitonSpec, band_limited_field, make_soliton
from bundleflow.state import DensityField


@pytest.fixture
def flat():
    spec = SolitonSpec("flat", domain=BaseDomain(dim=2, sizes=(16, 16), periods=(2.0, 3.0)))
    return make_soliton(spec, 1.0)


def test_flat_values_in_closed_form(flat):
    t, n, vol = 2.5, 2, 6.0
    d = DensityField.uniform(flat, "expander", t)
    assert wplus_functional(flat, d.f, t) == pytest.approx(n - math.log(vol) + 0.5 * n * math.log(4 * math.pi * t), abs=1e-13)
    assert f_functional(flat, DensityField.uniform(flat).f) == pytest.approx(0.0, abs=1e-13)
    tau = 0.7
    d = DensityField.uniform(flat, "shrinker", tau)
    assert w_functional(flat, d.f, tau) == pytest.approx(math.log(vol) - 0.5 * n * math.log(4 * math.pi * tau) - n, abs=1e-13)


def test_mass_violation_is_an_error(flat):
    f = DensityField.uniform(flat, "expander", 1.0).f - 1e-4
    with pytest.raises(MassError):
        wplus_functional(flat, f, 1.0)
    with pytest.raises(MassError):
        w_functional(flat, f, 1.0)


def test_potential_is_minus_half_trace_of_metric_velocity():
    for kind in ("circle", "torus"):
        st = random_smooth_state(kind, seed=7, sizes=(64,) if kind == "circle" else (24, 24), order=4)
        gdot = rhs_reduced(st).g
        trace = 0.5 * np.einsum("...ab,...ba->...", np.linalg.inv(st.g), gdot)
        assert np.allclose(potential(st), -trace, atol=1e-11 * np.max(np.abs(trace)))


def test_laplacian_integrates_to_zero():
    st = random_smooth_state("torus", seed=1, sizes=(24, 24), order=4)
    u = np.exp(band_limited_field(st.domain, np.random.default_rng(0)))
    vol = volume_element(st.g)
    total = integrate_base(laplacian(u, st) * vol / vol, vol, st.domain)
    assert abs(total) < 1e-12


@pytest.mark.parametrize("seed", range(4))
def test_fbar_identity(seed):
    kind = "circle" if seed % 2 == 0 else "torus"
    st = random_smooth_state(kind, seed=seed, sizes=(128,) if kind == "circle" else (48, 48), order=8)
    fbar = 0.4 * band_limited_field(st.domain, np.random.default_rng(seed + 100), 3)
    lhs, rhs, defect = fbar_identity_check(st, fbar)
    assert abs(defect) < 1e-8 * max(1.0, abs(lhs))


def test_jensen_bound_on_random_states():
    for seed in range(3):
        st = random_smooth_state("torus", seed=seed, sizes=(32, 32), order=4)
        t = 1.0 + seed
        f = 0.5 * band_limited_field(st.domain, np.random.default_rng(seed), 3)
        d = DensityField.from_f(f, "expander").normalized(st, t)
        value, bound, margin = jensen_bound(st, d.f, t)
        assert margin > 0


def test_fd_derivative_exact_on_quartics():
    t = np.array([1.0, 1.1, 1.25, 1.3, 1.5, 1.55, 1.7])
    y = 2 * t**4 - t**3 + 3 * t
    assert np.allclose(fd_derivative(t, y), 8 * t**3 - 3 * t**2 + 3, rtol=1e-10)
    assert np.all(np.isnan(fd_derivative(t[:4], y[:4])))


def test_samples_csv_round_trip(tmp_path):
    samples = [FunctionalSample(1.0 / 3, -0.1, 1e-17, 2.0 / 7, 1.0)]
    path = tmp_path / "s.csv"
    write_samples_csv(path, samples)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["t", "value", "dissipation", "fd_derivative", "mass"]
    assert [float(x) for x in rows[1]] == [1.0 / 3, -0.1, 1e-17, 2.0 / 7, 1.0]


@pytest.mark.parametrize("conv", ["plain", "expander", "shrinker"])
def test_backward_solve_conserves_mass(perturbed_sol, conv):
    traj = integrate(perturbed_sol, rhs_reduced, 1.3, checkpoint_every=64)
    final = traj.states[-1]
    tau_end = 0.5
    param = {"plain": None, "expander": final.t, "shrinker": tau_end}[conv]
    dens = solve_f_backward(traj, DensityField.uniform(final, conv, param), conv, tau_end=tau_end)
    for st, d in zip(traj.states, dens):
        p = {"plain": None, "expander": st.t, "shrinker": tau_end + final.t - st.t}[conv]
        assert d.mass(st, p) == pytest.approx(1.0, abs=1e-12)


def test_potential_sources_agree(perturbed_sol):
    traj = integrate(perturbed_sol, rhs_reduced, 1.2, checkpoint_every=128)
    final = DensityField.uniform(traj.states[-1])
    a = solve_f_backward(traj, final, potential_from="rates")
    b = solve_f_backward(traj, final, potential_from="curvature")
    assert np.max(np.abs(a[0].u - b[0].u)) / np.max(a[0].u) < 1e-5
