import json

import pytest

from meanfield_fluct.config import (EXPERIMENTS, ConfigError, load_config, schedule_sizes, scaling_ratio,
                                    validate)


def test_defaults_fill_in():
    cfg = validate({"experiment": "oracle-suite"})
    assert cfg.epsilon == 0.1 and cfg.dt == 0.02 and cfg.n_ref == 16384
    assert cfg.dictionary["members"] == [0, 1, 2]


@pytest.mark.parametrize("raw,fragment", [
    ({"experiment": "oracle-suite", "bogus": 1}, "unknown key bogus"),
    ({"experiment": "oracle-suite", "initial": {"zz": 1}}, "unknown key initial.zz"),
    ({"experiment": "oracle-suite", "options": {"p": 1}}, "unknown key options.p"),
    ({"experiment": "clt-initial", "acceptance": {"rel_tol": 1}}, "unknown key acceptance.rel_tol"),
    ({"experiment": "oracle-suite", "model": {"name": "linrelax", "params": {"nope": 1}}},
     "unknown key model.params.nope"),
    ({"experiment": "nope"}, "experiment must be one of"),
    ({"experiment": "oracle-suite", "epsilon": 0.7}, "epsilon"),
    ({"experiment": "oracle-suite", "alpha": 0.0}, "alpha"),
    ({"experiment": "oracle-suite", "T": 1.0, "dt": 0.3}, "multiple of dt"),
    ({"experiment": "oracle-suite", "N": [10], "d": 2}, "perfect 2-th power"),
    ({"experiment": "oracle-suite", "sizes": [[1, 2, 3]]}, "pairs"),
    ({"experiment": "oracle-suite", "dictionary": {"members": [9]}}, "outside"),
    ({"experiment": "oracle-suite", "seed": -1}, "unsigned"),
    ({"experiment": "oracle-suite", "n_runs": 0}, "positive integer"),
    ({"experiment": "oracle-suite", "initial": {"c": 2.0}}, "initial.c"),
    ({"experiment": "oracle-suite", "model": {"name": "unknown"}}, "model.name"),
])
def test_invalid_configs_name_the_key(raw, fragment):
    with pytest.raises(ConfigError, match=fragment.replace(".", r"\.")):
        validate(raw)


def test_overrides_and_hash():
    a = validate({"experiment": "oracle-suite"})
    b = validate({"experiment": "oracle-suite"}, {"workers": 8, "output": "elsewhere", "seed": None})
    assert b.workers == 8 and a.sha256() == b.sha256()
    c = validate({"experiment": "oracle-suite"}, {"seed": 5})
    assert c.seed == 5 and c.sha256() != a.sha256()


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_config(bad)
    lst = tmp_path / "list.json"
    lst.write_text("[]")
    with pytest.raises(ConfigError, match="mapping"):
        load_config(lst)
    ok = tmp_path / "ok.json"
    ok.write_text(json.dumps({"experiment": "spde-only"}))
    assert load_config(ok).experiment == "spde-only"


def test_schedules():
    assert schedule_sizes("clt", 8192, 0.5, 1) == 81
    for N in (256, 1024, 8192):
        M = schedule_sizes("clt", N, 0.5, 1)
        assert scaling_ratio(M, N, 0.5, 1) <= 0.1 + 1e-12
        assert scaling_ratio(M + 1, N, 0.5, 1) > 0.1
    assert schedule_sizes("critical", 256, 0.5, 1) == 256
    assert schedule_sizes("broken", 256, 0.5, 1) == 2304
    with pytest.raises(ConfigError):
        schedule_sizes("clt", 4, 0.5, 1)
    with pytest.raises(ConfigError):
        schedule_sizes("weird", 64, 0.5, 1)


def test_schedule_decreasing_flag():
    cfg = validate({"experiment": "qv-convergence", "sizes": [[64, 16], [256, 64], [1024, 256]]})
    assert cfg.schedule_decreasing is False  # sqrt(M) N^-1/2 grows along this schedule
    cfg = validate({"experiment": "qv-convergence", "sizes": [[4, 64], [4, 256], [8, 4096]]})
    assert cfg.schedule_decreasing


def test_every_experiment_validates():
    for e in EXPERIMENTS:
        assert validate({"experiment": e}).experiment == e
