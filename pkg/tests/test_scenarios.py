import csv
import textwrap

import numpy as np
import pytest
from scipy.integrate import trapezoid

from nsrhc.errors import ConfigError
from nsrhc.scenarios import (
    bundled_config,
    dump_config,
    inflow_profile,
    load_config,
    loads_config,
    prepare,
    resolve_config,
    run_scenario,
    run_sweep,
    with_override,
)

SMALL = textwrap.dedent(
    """
    [scenario]
    name = small
    geometry = rectangle
    seed = 3

    [geometry]
    x0 = -0.5
    x1 = 0.5
    y0 = -0.5
    y1 = 0.5
    nx = 4
    ny = 4

    [flow]
    nu = 0.05
    dt = 0.02

    [boundary]
    walls = rotation

    [initial]
    kind = zero_flow

    [actuators]
    centre = -0.25 0.25 -0.25 0.25 2 2

    [rhc]
    T_inf = 0.4
    delta = 0.04
    T = 0.2
    beta = 1e-2
    grad_tol = 1e-6
    max_iter = 200

    [mor]
    ell = 6

    [output]
    dir = out/small
    vtk = true
    """
)


def _small(**edits):
    text = SMALL
    for old, new in edits.items():
        text = text.replace(old, new)
    return loads_config(text)


# --------------------------------------------------------------------------
# configuration


def test_bundled_example1():
    c = resolve_config("example1")
    assert c.geometry == "disc_with_hole"
    assert c.nu == 1e-2 and c.rhc.delta == 0.25 and c.rhc.T_inf == 5
    assert sum(d1 * d2 for _, _, d1, d2 in c.actuators) == 48
    assert c.dirichlet_labels == {"disc", "rect"}


def test_bundled_lshape():
    c = resolve_config("example1_lshape")
    assert sum(d1 * d2 for _, _, d1, d2 in c.actuators) == 25


def test_bundled_example2():
    c = resolve_config("example2")
    assert c.geometry == "channel_with_cylinder"
    assert c.nu == pytest.approx(1 / 750)
    assert c.boundary["inflow"] == "parabolic 1.5" and c.boundary["outflow"] == "natural"
    assert c.dirichlet_labels == {"inflow", "walls", "cylinder"}
    assert sum(d1 * d2 for _, _, d1, d2 in c.actuators) == 57
    assert c.rhc.update_basis and c.rhc.snapshot_cap == 2000


@pytest.mark.parametrize("name", ["example1", "example1_lshape", "example2", "example2_shedding"])
def test_round_trip(name):
    c = resolve_config(name)
    assert loads_config(dump_config(c)) == dataclass_without_source(c)


def dataclass_without_source(c):
    import dataclasses

    return dataclasses.replace(c, source=None)


def test_load_from_path(tmp_path):
    p = tmp_path / "s.cfg"
    p.write_text(SMALL)
    assert load_config(p).name == "small"
    assert resolve_config(str(p)).name == "small"


@pytest.mark.parametrize(
    "old, new, where",
    [
        ("delta = 0.04", "delta = 0.05", "delta"),
        ("nu = 0.05", "nu = -1", "nu"),
        ("geometry = rectangle", "geometry = sphere", "geometry"),
        ("walls = rotation", "walls = swirl", "walls"),
        ("centre = -0.25 0.25 -0.25 0.25 2 2", "centre = -0.25 0.25 2 2", "centre"),
        ("kind = zero_flow", "kind = warm", "kind"),
        ("ell = 6", "ell = six", "ell"),
        ("ell = 6", "ell = 0", r"\[mor\] ell"),
        ("max_iter = 200", "max_iter = 200\nbb_variant = BB3", r"\[rhc\] bb_variant"),
        ("grad_tol = 1e-6", "grad_tol = 0", r"\[rhc\] grad_tol"),
        ("beta = 1e-2", "beta = 0", r"\[rhc\] beta"),
        ("grad_tol = 1e-6", "grad_tol = 1e-6\ngrad_rtol = 2", r"\[rhc\] grad_rtol"),
    ],
)
def test_config_errors(old, new, where):
    with pytest.raises(ConfigError, match=where):
        _small(**{old: new})


def test_unknown_bundled():
    with pytest.raises(ConfigError):
        resolve_config("example9")


def test_overrides():
    c = _small()
    assert with_override(c, "T", "0.4").rhc.T == 0.4
    assert with_override(c, "ell", "9").rhc.ell == 9
    d = with_override(c, "dt", 0.01)
    assert d.dt == 0.01 and d.rhc.dt == 0.01
    with pytest.raises(ConfigError):
        with_override(c, "radius", 2)
    with pytest.raises(ConfigError):
        with_override(c, "delta", 0.03)


def test_inflow_profile():
    prof = inflow_profile(1.5, 0.41)
    ux, uy = prof(np.array([0.0, 0.205, 0.41]))
    np.testing.assert_allclose(ux, [0.0, 1.5, 0.0], atol=1e-15)
    assert np.all(uy == 0)
    # mean velocity of the parabola is two thirds of the peak
    y = np.linspace(0, 0.41, 20001)
    assert trapezoid(prof(y)[0], y) / 0.41 == pytest.approx(1.0, rel=1e-6)


# --------------------------------------------------------------------------
# runs


@pytest.fixture(scope="module")
def small_setup():
    return prepare(_small())


def test_prepare_initial_states(small_setup):
    s = small_setup
    np.testing.assert_array_equal(s.v0, -s.yhat)
    r = prepare(_small(**{"kind = zero_flow": "kind = reference"}))
    assert np.all(r.v0 == 0)


def test_spinup_is_seeded():
    edit = {"kind = zero_flow": "kind = spinup\nspinup_time = 0.1\nkick_time = 0.04\nkick_amplitude = 1.0"}
    a, b = prepare(_small(**edit)), prepare(_small(**edit))
    np.testing.assert_array_equal(a.v0, b.v0)
    assert np.abs(a.v0).max() > 0
    mask = a.space.dirichlet_mask
    assert np.all(a.v0[mask] == 0)


def test_stationary_only(tmp_path, small_setup):
    o = run_scenario(small_setup.cfg, "stationary_only", tmp_path, setup=small_setup)
    assert o.exit_code == 0 and o.extra["residual"] <= 1e-10
    np.testing.assert_array_equal(np.load(tmp_path / "reference.npy"), small_setup.yhat)
    assert (tmp_path / "reference.vtk").read_text().startswith("# vtk DataFile")
    assert "residual=" in o.summary


def test_unknown_mode(small_setup):
    with pytest.raises(ConfigError):
        run_scenario(small_setup.cfg, "fast", setup=small_setup)


@pytest.mark.parametrize("mode", ["uncontrolled", "fom_rhc", "mor_rhc"])
def test_modes_write_outputs(tmp_path, small_setup, mode):
    o = run_scenario(small_setup.cfg, mode, tmp_path, setup=small_setup)
    assert o.exit_code == 0, o.summary
    for f in o.files:
        assert f.exists()
    assert "J_total=" in o.summary and "status=ok" in o.summary
    assert loads_config((tmp_path / "config.cfg").read_text()).rhc == small_setup.cfg.rhc


def test_reproducible_csv(tmp_path):
    c = _small()
    run_scenario(c, "fom_rhc", tmp_path / "a")
    run_scenario(c, "fom_rhc", tmp_path / "b")
    for name in ("state_norm.csv", "control.csv", "cost.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_viscosity_controls_decay(tmp_path):
    # the uncontrolled deviation decays faster at higher viscosity
    slow = run_scenario(_small(**{"nu = 0.05": "nu = 0.001"}), "uncontrolled", tmp_path / "lo")
    fast = run_scenario(_small(**{"nu = 0.05": "nu = 0.1"}), "uncontrolled", tmp_path / "hi")
    assert fast.result.state_norms[-1] < slow.result.state_norms[-1]


def test_sweep_table(tmp_path):
    rows, table = run_sweep(_small(), "T", ["0.04", "0.2"], out=tmp_path)
    assert [r[0] for r in rows] == ["no controls", "0.04", "0.2"]
    lines = table.splitlines()
    assert lines[0].split()[:2] == ["T", "J"] and len(lines) == 4
    assert rows[2][1] < rows[0][1]
    with open(tmp_path / "sweep.csv") as fh:
        got = list(csv.reader(fh))
    assert got[0] == ["T", "J_total", "final_norm"] and len(got) == 4
    assert (tmp_path / "T=0.2" / "cost.csv").exists()


def test_sweep_physics_parameter(tmp_path):
    rows, _ = run_sweep(_small(), "nu", ["0.05", "0.1"], mode="uncontrolled", out=tmp_path, include_uncontrolled=False)
    assert len(rows) == 2 and rows[1][1] < rows[0][1]


def test_bundled_config_text():
    assert "[scenario]" in bundled_config("example2")


def test_sweep_validates_before_running(tmp_path):
    with pytest.raises(ConfigError):
        run_sweep(_small(), "delta", ["0.04", "0.05"], out=tmp_path / "sw")
    assert not (tmp_path / "sw").exists()


def test_bundled_shedding_variant():
    a, b = resolve_config("example2"), resolve_config("example2_shedding")
    assert b.nu == 1e-3 and b.dt == a.dt and b.actuators == a.actuators
    assert b.rhc.sg.grad_rtol == 1e-2
    assert b.initial["kind"] == "spinup" and b.rhc.T == 0.3
