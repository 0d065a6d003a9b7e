import pytest

from auwgcn.config import ConfigError, RunConfig, load_config, parse_config


def test_empty_text_gives_defaults():
    assert parse_config("# nothing\n\n") == RunConfig()
    assert load_config(None) == RunConfig()


def test_keys_route_to_sections():
    cfg = parse_config(
        "lr = 0.002  # comment\nepochs = 3\nadjacency = uniform\n"
        "gcn_hidden = 8\nneck_channels = 32, 16\nthr_ap = 0.3\nboundary_radius_fraction = 0.1\n"
    )
    assert (cfg.train.lr, cfg.train.epochs, cfg.train.adjacency) == (0.002, 3, "uniform")
    assert cfg.train.boundary_radius_fraction == 0.1
    assert (cfg.model.gcn_hidden, cfg.model.neck_channels) == (8, (32, 16))
    assert cfg.spot.thr_ap == 0.3


def test_text_round_trip(tmp_path):
    cfg = parse_config("lr = 0.003\ngcn_layers = 2\nnms_iou = 0.4\n")
    assert parse_config(cfg.to_text()) == cfg
    path = tmp_path / "run.cfg"
    path.write_text(cfg.to_text())
    assert load_config(path) == cfg


@pytest.mark.parametrize(
    "text",
    [
        "lr 0.1\n",
        "no_such_key = 1\n",
        "epochs = many\n",
        "adjacency = learned\n",
        "window_stride_fraction = 0\n",
        "kernel = 4\n",
    ],
)
def test_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)
