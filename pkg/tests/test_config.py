from __future__ import annotations

import pytest
from hypothesis import given, settings, strategies as st

from broadcast_rhc.config import ConfigError, ExperimentConfig, parse_config, serialize_config


def test_first_experiment_line():
    cfg = parse_config("n=15 p=0.3 model=ctmc mu=2 dt=1 r=0.22 trials=10")
    assert cfg.models == ("ctmc",) and cfg.n == 15 and cfg.trials == 10
    assert cfg.K == 4 and cfg.orientation == "in" and cfg.bin_width is None
    assert cfg.trial_seeds() == list(range(10))
    c = cfg.controller("ctmc")
    assert c.predictor == "exact-ctmc" and c.mu == 2 and c.r == 0.22


def test_multiline_and_comments():
    cfg = parse_config("# campaign\nmodel=open-loop,rmc  # two models\nn=20\nseeds=5,6,7 trials=3\n")
    assert cfg.models == ("open-loop", "rmc")
    assert cfg.trial_seeds() == [5, 6, 7]


@pytest.mark.parametrize(
    "text,key",
    [
        ("model=ctmc n=100", "model"),
        ("model=", "model"),
        ("n=5", "model"),
        ("model=rmc colour=blue", "colour"),
        ("model=rmc mu=-1", "mu"),
        ("model=rmc trials=0", "trials"),
        ("model=rmc n=x", "n"),
        ("model=rmc p=2", "p"),
        ("model=rmc orientation=side", "orientation"),
        ("model=rmc trials=3 seeds=1,2", "seeds"),
        ("model=rmc model=ctmc", "model"),
        ("model=sir", "model"),
    ],
)
def test_named_errors(text, key):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.key == key
    assert str(exc.value).startswith(key)


def test_overrides():
    cfg = parse_config("model=rmc n=10", {"out": "x", "n": "12"})
    assert cfg.out == "x" and cfg.n == 12


@given(
    st.lists(st.sampled_from(["open-loop", "ctmc", "rmc"]), min_size=1, max_size=3, unique=True),
    st.integers(1, 20),
    st.floats(0.0, 1.0),
    st.floats(0.01, 10.0),
    st.integers(1, 8),
    st.none() | st.lists(st.integers(0, 10**6), min_size=5, max_size=5).map(tuple),
    st.none() | st.floats(0.01, 10.0),
    st.sampled_from(["in", "out"]),
)
@settings(max_examples=100)
def test_round_trip(models, n, p, mu, K, seeds, width, orient):
    cfg = ExperimentConfig(
        tuple(models), n=n, p=p, mu=mu, K=K, trials=5, seeds=seeds, bin_width=width, orientation=orient,
        out="out dir",
    )
    assert parse_config(serialize_config(cfg)) == cfg
