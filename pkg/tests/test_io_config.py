import json

import numpy as np
import pytest

from mftd.config import CONFIG_VERSION, ConfigError, EvolveConfig, RunConfig, SweepConfig
from mftd.io import fmt, read_csv, read_pgm, read_pgm_image, read_sidecar, write_csv, write_pgm


def test_pgm_round_trip(desk_grid, rng, tmp_path):
    rho = rng.random(desk_grid.n_elements)
    rho[~desk_grid.design] = 1.0
    path = tmp_path / "f.pgm"
    write_pgm(path, desk_grid, rho)
    back, grid = read_pgm(path)
    assert grid.n_elements == desk_grid.n_elements
    assert np.max(np.abs(back - rho)) <= 0.5 / 255 + 1e-15
    assert np.array_equal(back[~desk_grid.design], np.ones((~desk_grid.design).sum()))


def test_pgm_layout(desk_grid, tmp_path):
    rho = np.zeros(desk_grid.n_elements)
    rho[~desk_grid.design] = 1.0
    path = tmp_path / "f.pgm"
    write_pgm(path, desk_grid, rho)
    assert path.read_bytes().startswith(b"P5\n50 50\n255\n")
    img = read_pgm_image(path)
    assert img.shape == (50, 50)
    # void padding: the upper-right quadrant of the bounding box is outside the L
    assert np.all(img[:20, 20:] == 0)
    # the load strip sits on top of the horizontal leg at the right end, i.e. row ny - nw
    assert np.all(img[50 - 20, 45:] == 1)
    meta = read_sidecar(path)
    assert meta["nx"] == "50" and float(meta["element_size"]) == 0.04


def test_pgm_rejects_bad_input(desk_grid, tmp_path):
    with pytest.raises(ValueError):
        write_pgm(tmp_path / "x.pgm", desk_grid, np.ones(3))
    rho = np.zeros(desk_grid.n_elements)
    write_pgm(tmp_path / "x.pgm", desk_grid, rho)
    with pytest.raises(ValueError, match="non-design"):
        read_pgm(tmp_path / "x.pgm")
    (tmp_path / "y.pgm").write_bytes(b"P2\n1 1\n255\n0\n")
    with pytest.raises(ValueError):
        read_pgm_image(tmp_path / "y.pgm")


def test_pgm_header_comments(tmp_path):
    (tmp_path / "c.pgm").write_bytes(b"P5\n# made by hand\n2 1\n255\n" + bytes([0, 255]))
    assert np.array_equal(read_pgm_image(tmp_path / "c.pgm"), [[0.0, 1.0]])


def test_csv_round_trip(tmp_path):
    rows = [(1, 0.1, np.float64(1 / 3), 2), (2, np.inf, np.inf, 3)]
    write_csv(tmp_path / "t.csv", ("id", "a", "b", "rank"), rows)
    header, back = read_csv(tmp_path / "t.csv")
    assert header == ["id", "a", "b", "rank"]
    assert float(back[0][2]) == 1 / 3
    assert back[1][1] == "inf"


def test_fmt():
    assert fmt(0.1) == "0.1" and fmt(np.inf) == "inf" and fmt(-np.inf) == "-inf"


def test_empty_csv_has_header(tmp_path):
    write_csv(tmp_path / "e.csv", ("x", "y"), [])
    assert (tmp_path / "e.csv").read_text() == "x,y\n"


# ---------------------------------------------------------------- config

def test_config_round_trip():
    cfg = RunConfig(seed=7, element_size=0.05, sweep=SweepConfig(volume_fractions=(0.3, 0.4), n_seeds=None),
                    evolve=EvolveConfig(population=5, offspring=6, max_iterations=3))
    back = RunConfig.from_json(cfg.to_json())
    assert back == cfg
    assert json.loads(cfg.to_json())["version"] == CONFIG_VERSION


def test_default_config_values():
    cfg = RunConfig()
    assert cfg.element_size == 0.04
    assert cfg.sweep.continuation == (8.0, 16.0, 32.0) and cfg.sweep.interval == 30
    assert (cfg.evolve.population, cfg.evolve.offspring, cfg.evolve.max_iterations) == (20, 20, 50)
    assert cfg.evolve.checkpoint_every == 10
    assert (cfg.vae.epochs, cfg.vae.batch_size, cfg.vae.learning_rate) == (200, 20, 1e-3)


def test_partial_config_uses_defaults():
    cfg = RunConfig.from_json(json.dumps({"version": 1, "evolve": {"max_iterations": 4}}))
    assert cfg.evolve.max_iterations == 4 and cfg.evolve.population == 20


@pytest.mark.parametrize("text, match", [
    ('{"seed": 1}', "version"),
    ('{"version": 99}', "version"),
    ('{"version": 1, "sede": 1}', "sede"),
    ('{"version": 1, "evolve": {"populaton": 3}}', "populaton"),
    ('{"version": 1, "seed": "one"}', "number"),
    ('{"version": 1, "seed": 1.5}', "integer"),
    ('{"version": 1, "evolve": {"population": 0}}', "positive"),
    ('{"version": 1, "sweep": {"volume_fractions": 0.3}}', "list"),
    ('[1, 2]', "object"),
    ('{"version": 1,', "JSON"),
])
def test_config_rejections(text, match):
    with pytest.raises(ConfigError, match=match):
        RunConfig.from_json(text)


def test_hifi_config_shares_material():
    cfg = RunConfig(force=2.0)
    h = cfg.hifi_config()
    assert h.force == 2.0 and h.E0 == cfg.material.E0 and h.nu == cfg.material.nu


def test_lowfi_config_from_sweep():
    cfg = RunConfig()
    lc = cfg.sweep.lowfi(cfg.material, cfg.force)
    assert lc.schedule.P_at(0) == 8 and lc.schedule.P_at(30) == 16 and lc.schedule.P_at(60) == 32
