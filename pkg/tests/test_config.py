import copy
import json

import numpy as np
import pytest

from tlqg.config import ConfigError, ValidateCase, bundled_scenario, from_dict, parse_config, to_dict


@pytest.fixture
def raw():
    return json.loads(bundled_scenario("fig1").read_text())


class TestBundled:
    def test_fig1_values(self, fig1_config):
        p = fig1_config.problem
        np.testing.assert_array_equal(p.start, [2, -1, 0])
        np.testing.assert_array_equal(p.goal, [3, 1, 0])
        assert p.horizon == 40 and p.goal_radius == 0.2 and p.control_radius == 1.2
        w = p.world
        assert w.epsilon == 1.0 and w.dt == 1.0
        for m in (w.sigma_omega, w.sigma_x0):
            np.testing.assert_array_equal(m, 0.01 * np.eye(3))
        np.testing.assert_array_equal(w.sigma_nu, 0.01 * np.eye(w.nz))
        assert [lm.id for lm in w.landmarks] == sorted(lm.id for lm in w.landmarks)
        assert fig1_config.experiment.validate[0] == ValidateCase(0.05, 2000)
        assert fig1_config.experiment.sweep_epsilons == (0.16, 0.08, 0.04, 0.02)

    def test_round_trip(self, raw):
        cfg = from_dict(raw)
        once = to_dict(cfg)
        twice = to_dict(from_dict(once))
        assert once == twice
        assert json.loads(json.dumps(once)) == once


class TestErrors:
    def test_negative_goal_radius_named(self, raw):
        raw["problem"]["goal_radius"] = -0.1
        with pytest.raises(ConfigError) as exc:
            from_dict(raw)
        assert any("problem.goal_radius" in e for e in exc.value.errors)

    def test_all_errors_reported(self, raw):
        raw["problem"]["goal_radius"] = -0.1
        raw["problem"]["horizon"] = 0
        raw["world"]["epsilon"] = "big"
        with pytest.raises(ConfigError) as exc:
            from_dict(raw)
        joined = "\n".join(exc.value.errors)
        for key in ("problem.goal_radius", "problem.horizon", "world.epsilon"):
            assert key in joined

    def test_missing_required(self, raw):
        del raw["problem"]["start"]
        with pytest.raises(ConfigError, match="problem.start"):
            from_dict(raw)

    def test_unknown_key(self, raw):
        raw["world"]["gravity"] = 9.8
        with pytest.raises(ConfigError, match="gravity"):
            from_dict(raw)

    def test_non_psd_covariance(self, raw):
        raw["world"]["sigma_omega"] = [0.01, -0.02, 0.01]
        with pytest.raises(ConfigError, match="world.sigma_omega"):
            from_dict(raw)

    def test_sigma_nu_must_be_pd(self, raw):
        raw["world"]["sigma_nu"] = [0.0] * (2 * len(raw["world"]["landmarks"]))
        with pytest.raises(ConfigError, match="world.sigma_nu"):
            from_dict(raw)

    def test_wrong_matrix_size(self, raw):
        raw["world"]["G"] = [1.0, 2.0]
        with pytest.raises(ConfigError, match="world.G"):
            from_dict(raw)

    def test_sweep_grid_order(self, raw):
        raw.setdefault("experiment", {})["sweep_epsilons"] = [0.02, 0.04]
        with pytest.raises(ConfigError, match="sweep_epsilons"):
            from_dict(raw)

    def test_duplicate_landmark(self, raw):
        raw["world"]["landmarks"].append(copy.deepcopy(raw["world"]["landmarks"][0]))
        raw["world"]["sigma_nu"] = [0.01] * (2 * len(raw["world"]["landmarks"]))
        with pytest.raises(ConfigError, match="distinct"):
            from_dict(raw)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            parse_config(tmp_path / "nope.json")

    def test_bad_json(self, tmp_path):
        f = tmp_path / "bad.json"
        f.write_text("{not json")
        with pytest.raises(ConfigError):
            parse_config(f)


def test_full_matrix_form(raw):
    raw["world"]["sigma_omega"] = [0.02, 0.01, 0.0, 0.01, 0.02, 0.0, 0.0, 0.0, 0.03]
    cfg = from_dict(raw)
    assert cfg.problem.world.sigma_omega[0, 1] == 0.01
