import pytest

from tentspde import config
from tentspde.config import ConfigError


def cfg(**sections):
    sections.setdefault("run", {"seed": 0})
    return config.from_dict(sections)


def test_defaults():
    c = cfg()
    assert c.run.criteria == () and c.run.workers == 1
    assert c.grid_spec().N == 64
    assert c.T_menu() == pytest.approx((0.025, 0.05, 0.1))


@pytest.mark.parametrize("raw,path", [
    ({"run": {"seed": 0, "bogus": 1}}, "run.bogus"),
    ({"run": {"seed": 0}, "extra": {}}, "extra"),
    ({"run": {"seed": 0}, "grid": {"N": 64, "dx": 0.1}}, "grid.dx"),
    ({"run": {}}, "run.seed"),
    ({}, "run.seed"),
    ({"run": {"seed": "zero"}}, "run.seed"),
    ({"run": {"seed": True}}, "run.seed"),
    ({"run": {"seed": -1}}, "run.seed"),
    ({"run": {"seed": 0, "criteria": [1, 99]}}, "run.criteria[1]"),
    ({"run": {"seed": 0, "criteria": [2, 2]}}, "run.criteria"),
    ({"run": {"seed": 0, "workers": 0}}, "run.workers"),
    ({"run": {"seed": 0}, "grid": {"N": 48}}, "grid"),
    ({"run": {"seed": 0}, "coefficients": {"law": "random"}}, "coefficients.law"),
    ({"run": {"seed": 0}, "coefficients": {"lam": 3.0}}, "coefficients.lam"),
    ({"run": {"seed": 0}, "menus": {"p": [1.5, "x"]}}, "menus.p[1]"),
    ({"run": {"seed": 0}, "menus": {"T": [0.5]}}, "menus.T[0]"),
    ({"run": {"seed": 0}, "sweep": {"axis": "q"}}, "sweep.axis"),
    ({"run": {"seed": 0}, "sweep": {"axis": "resolution", "values": [[64, 64], [12, 64]]}}, "sweep.values[1]"),
    ({"run": {"seed": 0}, "sweep": {"axis": "K", "values": [2, 0]}}, "sweep.values[1]"),
    ({"run": {"seed": 0}, "sweep": {"axis": "T", "values": [0.2]}}, "sweep.values[0]"),
    ({"run": {"seed": 0}, "sweep": {"axis": "lambda_ratio", "values": [0.5]}}, "sweep.values[0]"),
])
def test_rejections_name_the_field(raw, path):
    with pytest.raises(ConfigError) as exc:
        config.from_dict(raw)
    assert exc.value.path == path


def test_int_accepted_for_float():
    c = cfg(grid={"T_max": 1})
    assert isinstance(c.grid.T_max, float)


def test_load_file(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('[run]\nseed = 3\ncriteria = [1, 4]\n[menus]\np = [2]\n')
    c = config.load(p)
    assert c.run.seed == 3 and c.run.criteria == (1, 4) and c.menus.p == (2.0,)
    assert c.source == str(p)
    p.write_text("[run\nseed = 3")
    with pytest.raises(ConfigError, match="invalid TOML"):
        config.load(p)
    with pytest.raises(ConfigError):
        config.load(tmp_path / "missing.toml")


def test_packaged_acceptance_config():
    c = config.load(config.packaged("acceptance-n1"))
    assert c.run.criteria == tuple(range(1, 17))
    assert c.sweep.axis == "p" and len(c.sweep.values) == 7
    with pytest.raises(ConfigError):
        config.packaged("nope")


def test_overrides_revalidate():
    c = cfg().with_overrides(seed=5, workers=None, quick=True)
    assert c.run.seed == 5 and c.run.quick and c.run.workers == 1
    with pytest.raises(ConfigError):
        c.with_overrides(criteria=(0,))


def test_as_dict_round_trip():
    c = cfg(run={"seed": 2, "criteria": [3]}, sweep={"axis": "K", "values": [1, 2]})
    d = c.as_dict()
    assert "source" not in d and d["run"]["criteria"] == (3,)
    assert config.from_dict({k: {kk: list(v) if isinstance(v, tuple) else v for kk, v in s.items() if v is not None}
                             for k, s in d.items()}) == c
