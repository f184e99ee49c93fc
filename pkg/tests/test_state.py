import numpy as np
import pytest

from bundleflow.grid import BaseDomain
from bundleflow.solitons import SolitonSpec, make_soliton
from bundleflow.state import (
    BundleState,
    CheckpointError,
    DensityField,
    load_checkpoint,
    save_checkpoint,
    validate,
)


def test_checkpoint_round_trip_is_bit_exact(tmp_path, perturbed_sol):
    st = perturbed_sol.with_fields(t=1.0 / 3.0)
    path = tmp_path / "c.zip"
    save_checkpoint(path, st, extra_states={"other": st}, meta={"note": "x"})
    back, header = load_checkpoint(path, with_meta=True)
    assert back.t == st.t
    for key in ("G", "a", "g", "F_bg"):
        assert np.array_equal(getattr(back, key), getattr(st, key))
    assert back.domain == st.domain
    assert header["meta"]["note"] == "x"
    assert np.array_equal(load_checkpoint(path, "other").G, st.G)


def test_truncated_checkpoint_is_rejected(tmp_path, perturbed_sol):
    path = tmp_path / "c.zip"
    save_checkpoint(path, perturbed_sol)
    data = path.read_bytes()
    bad = tmp_path / "bad.zip"
    bad.write_bytes(data[: len(data) // 2])
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)


def test_validate_reports_healthy_soliton(sol_spec):
    rep = validate(make_soliton(sol_spec, 2.0))
    assert rep.ok
    assert rep.min_eig_g == pytest.approx(2.0)
    assert rep.seam_defect < 1e-6
    assert rep.max_F == 0.0


def test_validate_flags_indefinite_metric():
    dom = BaseDomain(dim=1, sizes=(16,), periods=(1.0,))
    G = np.broadcast_to(np.eye(2), (16, 2, 2)).copy()
    G[5] = np.diag([1.0, -1.0])
    st = BundleState(G=G, a=None, g=np.ones((16, 1, 1)), t=1.0, domain=dom)
    rep = validate(st)
    assert not rep.ok
    assert rep.argmin_G == (5,)


def test_validate_without_fiber():
    spec = SolitonSpec("h3")
    assert validate(make_soliton(spec, 1.0)).ok


def test_density_uniform_has_unit_mass(perturbed_sol):
    for conv, p in (("plain", None), ("expander", 2.0), ("shrinker", 0.5)):
        d = DensityField.uniform(perturbed_sol, conv, p)
        assert d.mass(perturbed_sol, p) == pytest.approx(1.0, abs=1e-14)


def test_density_rejects_nonpositive():
    with pytest.raises(ValueError):
        DensityField(np.array([1.0, 0.0, 2.0]))
    with pytest.raises(ValueError):
        DensityField(np.ones(3), "other")


def test_state_arrays_are_read_only(perturbed_sol):
    with pytest.raises(ValueError):
        perturbed_sol.G[0, 0, 0] = 2.0
