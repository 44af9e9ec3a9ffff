import pytest
from hypothesis import given, strategies as st

from bfan.config import Ablation, ModelConfig, RunConfig, TrainConfig, model_hash
from bfan.errors import ConfigError

run_configs = st.builds(
    RunConfig,
    model=st.builds(
        ModelConfig,
        input_size=st.tuples(st.integers(1, 8), st.integers(1, 8)).map(lambda t: (32 * t[0], 32 * t[1])),
        base_channels=st.integers(1, 64),
        boundary_channels=st.integers(1, 64),
        agg_channels=st.integers(1, 64),
        rcu_count=st.integers(0, 3),
        ablation=st.sampled_from(list(Ablation)),
        fpm_subset=st.sets(st.integers(1, 5), min_size=1).map(tuple),
        rng_seed=st.integers(0, 2**32),
    ),
    train=st.builds(
        TrainConfig,
        learning_rate=st.floats(1e-9, 1.0),
        momentum=st.floats(0, 0.999),
        batch_size=st.integers(1, 64),
        epochs=st.integers(1, 500),
        boundary_weight=st.floats(0, 10),
        supervise_stages=st.booleans(),
        plateau_stop=st.booleans(),
        mean_bgr=st.tuples(*[st.floats(0, 255)] * 3),
        input_scale=st.floats(1e-4, 10),
    ),
)


@given(run_configs)
def test_parse_serialize_fixpoint(run):
    text = run.to_text()
    back = RunConfig.from_text(text)
    assert back == run
    assert back.to_text() == text


def test_defaults():
    m = ModelConfig()
    assert m.input_size == (64, 64) and m.base_channels == 16 and m.boundary_channels == 16
    assert m.agg_channels == 32 and m.fpm_subset == (1, 2, 3, 4, 5) and m.ablation is Ablation.AFFM_PLUS
    t = TrainConfig()
    assert (t.momentum, t.weight_decay, t.batch_size) == (0.9, 0.0005, 8)
    assert t.mean_bgr == (104.0, 116.7, 122.7)


def test_comments_and_overrides():
    run = RunConfig.from_text("# desk run\nablation = Baseline  # no boundary branch\ninput_size = 96x128\n")
    assert run.model.ablation is Ablation.BASELINE
    assert run.model.input_size == (96, 128)
    run2 = run.with_overrides({"fpm_subset": "5,4", "learning_rate": "0.02"})
    assert run2.model.fpm_subset == (4, 5) and run2.train.learning_rate == 0.02


@pytest.mark.parametrize("text", [
    "no_such_key = 1\n",
    "input_size = 48,64\n",
    "fpm_subset = \n",
    "fpm_subset = 0,6\n",
    "ablation = Everything\n",
    "base_channels = lots\n",
    "supervise_stages = maybe\n",
    "epochs = 5\nepochs = 6\n",
    "just words\n",
])
def test_bad_configs_rejected(text):
    with pytest.raises(ConfigError):
        RunConfig.from_text(text)


def test_model_hash_tracks_architecture_only():
    a = RunConfig()
    b = a.with_overrides({"learning_rate": "0.5", "epochs": "3"})
    c = a.with_overrides({"ablation": "Baseline"})
    assert model_hash(a.model) == model_hash(b.model)
    assert model_hash(a.model) != model_hash(c.model)
    assert len(model_hash(a.model)) == 64


def test_file_round_trip(tmp_path):
    run = RunConfig().with_overrides({"base_channels": "8", "rng_seed": "3"})
    run.save(tmp_path / "run.cfg")
    assert RunConfig.load(tmp_path / "run.cfg") == run
