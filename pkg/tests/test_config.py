import math
from pathlib import Path

import numpy as np
import pytest

from slipforge.config import (
    DEFAULT_TYRE_PRIOR,
    SEED_ENV,
    config_from_dict,
    course_from_dict,
    load_config,
    load_course,
)
from slipforge.csvio import fmt, read_table, write_rows
from slipforge.errors import ConfigError
from slipforge.model import TyreParams
from slipforge.trials import Arc, Straight, two_corner_course

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


class TestLoad:
    def test_default_file_matches_code_defaults(self):
        cfg = load_config(CONFIGS / "default.toml", env={})
        assert cfg.tyre_true == TyreParams(10, 1.9, 1)
        assert cfg.tyre_prior == DEFAULT_TYRE_PRIOR
        assert cfg.trials == 30
        assert cfg.course == two_corner_course()
        assert cfg.task.mpc_bounds == "estimate"
        assert cfg.task.mpc.f_upper[0] == pytest.approx(1.2 * 0.5 * 1845 * 9.81 / 2)
        np.testing.assert_array_equal(np.diag(cfg.task.mpc.Q), [10, 10, 1, 0.1, 0.1, 0.1])

    def test_road_change_file(self):
        cfg = load_config(CONFIGS / "road_change.toml", env={})
        assert cfg.road_changes == {6: TyreParams(12, 2.3, 0.82)}
        assert cfg.trials == 15

    def test_every_shipped_config_loads(self):
        for path in CONFIGS.glob("*.toml"):
            load_config(path, env={})

    def test_empty_config_uses_defaults(self):
        cfg = config_from_dict({}, env={})
        assert cfg.task.seed == 0 and cfg.initial_state is None

    def test_bad_toml(self, tmp_path):
        p = tmp_path / "bad.toml"
        p.write_text("[vehicle\nm = 1")
        with pytest.raises(ConfigError):
            load_config(p, env={})
        with pytest.raises(ConfigError):
            load_course(p)


class TestValidation:
    @pytest.mark.parametrize("data", [
        {"vehicle": {"mass": 1.0}},
        {"tyre_true": {"B": 10, "C": 1.9}},
        {"mpc": {"horizon": 1}},
        {"mpc": {"f_lower": [-1, -1, -1, -1]}},
        {"mpc": {"Q": [1, 2, 3]}},
        {"mpc": {"bounds": "sometimes"}},
        {"estimator": {"capacity": 0, "bogus": 1}},
        {"task": {"trials": 0}},
        {"task": {"hold_time": -1}},
        {"sim": {"dt": 0}},
        {"road_change": [{"B": 1, "C": 1.5, "D": 0.5}]},
        {"initial_state": {"x": 0}},
        {"course": {"segments": [{"type": "spiral"}]}},
        {"course": {"segments": [{"type": "straight"}]}},
        {"course": {"segments": [{"type": "straight", "length": 5, "width": 3}]}},
        {"course": {"segments": [{"type": "straight", "length": 5}], "radius": 10}},
        {"course": {"radius": -1}},
        {"extra": {}},
    ])
    def test_rejected(self, data):
        with pytest.raises(ConfigError):
            config_from_dict(data, env={})


class TestSeed:
    def test_env_overrides(self):
        assert config_from_dict({"task": {"seed": 4}}, env={SEED_ENV: "11"}).task.seed == 11
        assert config_from_dict({"task": {"seed": 4}}, env={SEED_ENV: ""}).task.seed == 4

    def test_env_must_be_integer(self):
        with pytest.raises(ConfigError):
            config_from_dict({}, env={SEED_ENV: "abc"})


class TestCourse:
    def test_segments(self):
        c = course_from_dict({"target_speed": 10, "segments": [
            {"type": "straight", "length": 20},
            {"type": "arc", "radius": 30, "sweep_deg": 45, "direction": -1},
        ]})
        assert c.segments == (Straight(20.0), Arc(30.0, math.pi / 4, -1))
        assert c.target_speed == 10

    def test_shorthand(self):
        c = course_from_dict({"radius": 40, "lead": 10})
        assert c.segments[0] == Straight(10.0)
        assert c.segments[1] == Arc(40.0, math.pi / 2, -1)

    def test_matrix_forms(self):
        full = np.diag([1.0, 2, 3, 4, 5, 6]).tolist()
        a = config_from_dict({"mpc": {"Q": full}}, env={}).task.mpc.Q
        b = config_from_dict({"mpc": {"Q": [1, 2, 3, 4, 5, 6]}}, env={}).task.mpc.Q
        np.testing.assert_array_equal(a, b)

    def test_explicit_bounds_are_fixed(self):
        cfg = config_from_dict({"mpc": {"f_lower": -100.0, "f_upper": 100.0}}, env={})
        assert cfg.task.mpc_bounds == "fixed"
        np.testing.assert_array_equal(cfg.task.mpc.f_upper, 100.0)


class TestCsv:
    def test_seventeen_digits_round_trip(self, tmp_path):
        vals = [0.1, 1 / 3, np.pi * 1e-7, -2.5e300]
        write_rows(tmp_path / "a.csv", ["v"], [[v] for v in vals])
        back = read_table(tmp_path / "a.csv")["v"]
        assert list(back) == vals
        assert fmt(1 / 3) == "0.33333333333333331"
        assert fmt(True) == "1"

    def test_dict_rows_and_blanks(self, tmp_path):
        write_rows(tmp_path / "d" / "b.csv", ["a", "b"], [{"a": 1.5}, {"a": 2.0, "b": 3.0}])
        t = read_table(tmp_path / "d" / "b.csv")
        assert np.isnan(t["b"][0]) and t["b"][1] == 3.0

    def test_missing_required(self, tmp_path):
        write_rows(tmp_path / "c.csv", ["a"], [[1.0]])
        with pytest.raises(ConfigError):
            read_table(tmp_path / "c.csv", required=("b",))

    def test_non_numeric(self, tmp_path):
        (tmp_path / "e.csv").write_text("a\nfoo\n")
        with pytest.raises(ConfigError):
            read_table(tmp_path / "e.csv", required=("a",))

    def test_ragged(self, tmp_path):
        (tmp_path / "f.csv").write_text("a,b\n1,2\n3\n")
        with pytest.raises(ConfigError):
            read_table(tmp_path / "f.csv")
