import os

import pytest
import yaml

from sddpde import scenario
from sddpde.scenario import ConfigError, from_dict, load

from conftest import SCENARIO_DIR


@pytest.mark.parametrize("name", ["nicholson", "constant_delay", "linear"])
def test_shipped_scenarios_load(name):
    sc = load(os.path.join(SCENARIO_DIR, name + ".yaml"))
    assert sc.name == name
    sc.rhs()


def test_default_is_nicholson(nicholson):
    assert nicholson.name == "nicholson"
    assert (nicholson.m, nicholson.d, nicholson.delay.r) == (16, 0.1, 1.0)
    assert nicholson.nonlinearity.p == 2.0
    assert (nicholson.solver.dt, nicholson.solver.T) == (1e-3, 10.0)


def test_hash_stable_under_key_order():
    a = {"m": 8, "d": 0.2, "solver": {"dt": 0.01, "T": 1.0}, "domain": {"n_grid": 64}}
    b = {"domain": {"n_grid": 64}, "solver": {"T": 1.0, "dt": 0.01}, "d": 0.2, "m": 8}
    assert from_dict(a).config_hash() == from_dict(b).config_hash()
    assert from_dict(a).config_hash() != from_dict({**a, "d": 0.3}).config_hash()


def test_hash_matches_between_file_and_dict():
    path = os.path.join(SCENARIO_DIR, "nicholson.yaml")
    with open(path) as fh:
        data = yaml.safe_load(fh)
    assert load(path).config_hash() == from_dict(data).config_hash()


@pytest.mark.parametrize("data, match", [
    ({"solvr": {}}, "unknown key"),
    ({"solver": {"dtt": 0.1}}, "solver.dtt"),
    ({"domain": {"n_grid": 20}}, "anti-aliasing"),
    ({"solver": {"dt": 2.0, "T": 4.0}}, "maximal delay"),
    ({"solver": {"dt": "abc"}}, "expected a number"),
    ({"kernel": "gaussian"}, "expected a mapping"),
    ({"nonlinearity": {"kind": "cubic"}}, "nonlinearity"),
    ({"study": {"m_list": [4, 100]}}, "anti-aliasing"),
    ({"solver": {"backend": "gpu"}}, "backend"),
    ({"d": -1.0}, "damping"),
])
def test_invalid_configs(data, match):
    with pytest.raises(ConfigError, match=match):
        from_dict(data)


def test_constant_delay_may_exceed_r_only_if_tau_covers_dt():
    base = {"delay": {"kind": "constant", "r": 0.5, "tau0": 0.5}, "m": 1,
            "domain": {"n_grid": 16}, "study": {"m_list": [1]}}
    from_dict({**base, "solver": {"dt": 0.5, "T": 1.0}})
    with pytest.raises(ConfigError):
        from_dict({**base, "solver": {"dt": 1.0, "T": 1.0}})


def test_string_floats_are_coerced(tmp_path):
    p = tmp_path / "s.yaml"
    p.write_text("solver:\n  dt: 1e-3\n  T: 2\n")
    sc = load(str(p))
    assert sc.solver.dt == 1e-3


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load(str(tmp_path / "missing.yaml"))
    bad = tmp_path / "bad.yaml"
    bad.write_text("solver: [unclosed\n")
    with pytest.raises(ConfigError, match="malformed"):
        load(str(bad))


def test_override(nicholson):
    sc = nicholson.with_override("nonlinearity.p", 3.0)
    assert sc.nonlinearity.p == 3.0 and nicholson.nonlinearity.p == 2.0
    assert nicholson.with_override("d", 1.0).d == 1.0
    with pytest.raises(ConfigError):
        nicholson.with_override("nonlinearity.q", 1.0)


def test_provenance(nicholson):
    p = nicholson.provenance()
    assert p["scenario"] == "nicholson" and len(p["config_hash"]) == 64
    assert p["seed"] == scenario.Scenario().seed


def test_initial_history_on_manifold(nicholson, nich_rhs, nich_phi):
    from sddpde.integrator import check_manifold
    assert check_manifold(nich_phi, nich_rhs) < 1e-12
    raw = scenario.from_dict({"initial": {"manifold": False}})
    assert check_manifold(raw.initial_history(nich_rhs), nich_rhs) > 1e-3
