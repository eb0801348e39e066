import pytest

from predvision.config import ConfigError, RunConfig, dump_config, load_config


def test_defaults_match_model():
    cfg = RunConfig()
    spec = cfg.hierarchy_spec()
    assert spec.n_tiles == 85
    assert spec.levels[0].K == 400 and spec.levels[0].N == 70 and spec.levels[0].T == 25
    assert cfg.tracker_config().level_weights is None


def test_file_then_overrides(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text('seed = 4\nmodel.K = 64\nmodel.N = 8\ntrack.level_weights = [1, 0.5]\n'
                    '[classify]\nepochs = 3\n')
    cfg = load_config(path, ["model.N=6", "model.context=false", "seed=9"])
    assert cfg.seed == 9
    assert cfg.model.K == 64 and cfg.model.N == 6
    assert cfg.model.context is False
    assert cfg.classify.epochs == 3
    assert cfg.tracker_config().level_weights == (1.0, 0.5)


def test_round_trip(tmp_path):
    cfg = load_config(None, ["model.field_size=32", "model.tile_size=8", "train.passes=2",
                             "model.grad_reduce=sum", "track.level_weights=[2, 1]"])
    path = tmp_path / "dump.toml"
    dump_config(cfg, path)
    again = load_config(path)
    assert again == cfg
    assert dump_config(again) == path.read_text()


@pytest.mark.parametrize("item", ["model.nope=1", "nope.K=1", "model.K=1.5", "model.K=abc",
                                  "model.context=1", "model", "seed.x=1"])
def test_bad_overrides(item):
    with pytest.raises(ConfigError):
        load_config(None, [item])


def test_bad_file(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("model.K = = 3\n")
    with pytest.raises(ConfigError):
        load_config(path)


def test_items_are_flat():
    keys = [k for k, _ in RunConfig().items()]
    assert keys[:2] == ["seed", "threads"]
    assert "model.K" in keys and "analysis.stc_frames" in keys
