import pytest
from hypothesis import given, settings, strategies as st

from fedmia.config import (NON_SEMANTIC_KEYS, SCHEMA, ConfigError, load_config,
                           parse_config)
from fedmia.federation import AggregationStrategy

MINIMAL = "dataset.kind = synthetic\n"


def test_minimal_config_fills_defaults():
    cfg = parse_config(MINIMAL)
    for key, (_, default, _, _) in SCHEMA.items():
        if default is not None:
            assert cfg[key] == default
    assert cfg.strategy is AggregationStrategy.FEDAVG
    assert cfg.hidden == [64]
    assert cfg.shadow_epochs == cfg["federation.rounds"] * cfg["train.local_epochs"]


def test_comments_and_blank_lines():
    cfg = parse_config("# header\n\ndataset.kind = synthetic  # inline\nseed = 7\n")
    assert cfg["seed"] == 7


def test_zero_clients_names_key():
    with pytest.raises(ConfigError) as err:
        parse_config(MINIMAL + "federation.n_clients = 0\n")
    assert err.value.key == "federation.n_clients"
    assert err.value.line == 2
    assert "federation.n_clients" in str(err.value)


def test_syntax_error_has_line_number():
    with pytest.raises(ConfigError, match="line 3") as err:
        parse_config("dataset.kind = synthetic\nseed = 1\nthis line is wrong\n")
    assert err.value.line == 3


@pytest.mark.parametrize("text, key", [
    (MINIMAL + "federation.n_client = 5\n", "federation.n_client"),
    ("seed = 1\n", "dataset.kind"),
    (MINIMAL + "seed = 1\nseed = 2\n", "seed"),
    (MINIMAL + "train.lr = fast\n", "train.lr"),
    (MINIMAL + "federation.strategy = median\n", "federation.strategy"),
    (MINIMAL + "split.train_fraction = 1.0\n", "split.train_fraction"),
    (MINIMAL + "model.hidden = 64,x\n", "model.hidden"),
    ("dataset.kind = mnist\n", "dataset.kind"),
])
def test_invalid_configs(text, key):
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert err.value.key == key


def test_missing_files_rejected(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        parse_config("dataset.kind = csv\ndataset.path = nope.csv\n", base_dir=tmp_path)
    with pytest.raises(ConfigError, match="needs"):
        parse_config("dataset.kind = idx\n")


def test_relative_paths_resolve_against_config_file(tmp_path):
    (tmp_path / "d.csv").write_text("f0,label\n0.5,0\n")
    (tmp_path / "exp.cfg").write_text("dataset.kind = csv\ndataset.path = d.csv\n")
    cfg = load_config(tmp_path / "exp.cfg")
    assert cfg["dataset.path"] == str(tmp_path / "d.csv")


def test_strategy_aliases_normalize():
    a = parse_config(MINIMAL + "federation.strategy = RoundRobin\n")
    b = parse_config(MINIMAL + "federation.strategy = round_robin\n")
    assert a == b and a.config_hash == b.config_hash


def test_hash_ignores_non_semantic_keys():
    base = parse_config(MINIMAL)
    other = base.with_values(output_dir="elsewhere", run__workers=8)
    assert set(NON_SEMANTIC_KEYS) == {"output_dir", "run.workers"}
    assert base.config_hash == other.config_hash
    assert base.config_hash != base.with_values(seed=1).config_hash
    assert len(base.config_hash) == 12


def test_with_values_validates():
    with pytest.raises(ConfigError):
        parse_config(MINIMAL).with_values(federation__rounds=-1)


_VALUE = {
    "seed": st.integers(0, 10**9),
    "dataset.samples": st.integers(10, 10**5),
    "dataset.separation": st.floats(0.01, 100, allow_nan=False),
    "split.train_fraction": st.floats(0.01, 0.99),
    "federation.n_clients": st.integers(1, 100),
    "federation.rounds": st.integers(0, 500),
    "federation.strategy": st.sampled_from([s.value for s in AggregationStrategy]),
    "train.lr": st.floats(1e-6, 10.0),
    "model.hidden": st.lists(st.integers(1, 512), max_size=3).map(
        lambda xs: ",".join(map(str, xs))),
    "attack.cadence": st.integers(1, 50),
    "name": st.text("abcdefghij-_", min_size=1, max_size=12),
}


@settings(max_examples=150, deadline=None)
@given(st.dictionaries(st.sampled_from(sorted(_VALUE)), st.none(), max_size=len(_VALUE))
       .flatmap(lambda keys: st.fixed_dictionaries({k: _VALUE[k] for k in keys})))
def test_serialize_round_trip(values):
    text = MINIMAL + "".join(f"{k} = {v!r}\n" if isinstance(v, float) else f"{k} = {v}\n"
                             for k, v in values.items())
    cfg = parse_config(text)
    again = parse_config(cfg.serialize())
    assert again == cfg
    assert again.serialize() == cfg.serialize()
    assert again.config_hash == cfg.config_hash
