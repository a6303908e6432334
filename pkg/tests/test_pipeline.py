import shutil

import numpy as np
import pytest

from mftd import pipeline
from mftd.config import EvolveConfig, RunConfig, SweepConfig
from mftd.geometry import LBracketGeometry
from mftd.io import read_csv, read_pgm
from mftd.nsga import dominates
from mftd.vae import TrainConfig


def tiny_config(**over):
    cfg = RunConfig(
        geometry=LBracketGeometry(nondesign_depth=0.1), element_size=0.1,
        sweep=SweepConfig(volume_fractions=(0.3, 0.45), n_seeds=4, max_iter=25, interval=8, filter_radius=0.15),
        evolve=EvolveConfig(population=4, offspring=4, max_iterations=4, checkpoint_every=2),
        vae=TrainConfig(epochs=5, hidden_dim=16, latent_dim=2), seed=3,
    )
    return cfg.replace(**over) if over else cfg


@pytest.fixture(scope="module")
def seeded(tmp_path_factory):
    out = tmp_path_factory.mktemp("seeded")
    cfg = tiny_config(output=str(out))
    pipeline.cmd_seed(cfg, out)
    return cfg, out


@pytest.fixture
def run_dir(seeded, tmp_path):
    cfg, src = seeded
    dst = tmp_path / "run"
    shutil.copytree(src, dst)
    return cfg.replace(output=str(dst)), dst


def test_seed_outputs(seeded):
    cfg, out = seeded
    seeds = sorted((out / "seeds").glob("seed_*.pgm"))
    assert len(seeds) == 4
    assert len(list((out / "seeds").glob("seed_*_history.csv"))) == 4
    header, rows = read_csv(out / "seeds" / "summary.csv")
    assert header[0] == "seed" and len(rows) == 4
    rho, grid = read_pgm(seeds[0])
    assert grid.n_elements == pipeline.make_grid(cfg).n_elements
    ids, fields = pipeline.load_seeds(out, grid)
    assert np.max(np.abs(fields[0] - rho)) <= 0.5 / 255 + 1e-15
    assert RunConfig.load(out / "config.json") == cfg


def test_one_field_per_fraction_without_multiplication(tmp_path):
    cfg = tiny_config(sweep=SweepConfig(volume_fractions=(0.3, 0.35, 0.4), n_seeds=None, max_iter=3,
                                        interval=8, filter_radius=0.15))
    pipeline.cmd_seed(cfg, tmp_path)
    assert len(list((tmp_path / "seeds").glob("seed_*.pgm"))) == 3


def test_evolve_zero_iterations(run_dir):
    cfg, out = run_dir
    state = pipeline.cmd_evolve(cfg.replace(evolve=EvolveConfig(4, 4, 0, 2)), out)
    assert state.iteration == 0 and len(state.hv_history) == 1
    assert state.vae is None
    assert len(state.population) <= 4
    assert (out / pipeline.CHECKPOINT_NAME).exists()


def test_evolve_and_report(run_dir):
    cfg, out = run_dir
    state = pipeline.cmd_evolve(cfg, out)
    assert state.iteration == 4 and len(state.hv_history) == 5
    hv = [r[1] for r in state.hv_history]
    assert all(b >= a for a, b in zip(hv, hv[1:]))
    assert len(state.population) == 4
    assert np.all(np.diff(state.population.ids) > 0)
    header, loss_rows = read_csv(out / "vae_loss.csv")
    assert header == ["iteration", "epoch", "loss"] and len(loss_rows) == 4 * 5

    rep = pipeline.cmd_report(out, vtk=True)
    header, rows = read_csv(rep / "pareto_front.csv")
    assert tuple(header) == pipeline.PARETO_HEADER
    assert len(rows) == 4
    ranks = [int(r[3]) for r in rows]
    assert min(ranks) == 1 and ranks == sorted(ranks)
    front = [(float(r[1]), float(r[2])) for r in rows if r[3] == "1"]
    for a in front:
        assert not any(dominates(b, a) for b in front)
    header, hv_rows = read_csv(rep / "hypervolume.csv")
    assert tuple(header) == pipeline.HV_HEADER and len(hv_rows) == 5
    assert len(list((rep / "fields").glob("cand_*.pgm"))) == 4
    assert len(list((rep / "meshes").glob("*.vtk"))) == sum(
        1 for r in rows if r[3] == "1" and np.isfinite(float(r[1])))
    for name in ("objective_space.png", "hypervolume.png"):
        assert (rep / "figures" / name).read_bytes()[:4] == b"\x89PNG"
    assert (rep / "summary.json").exists()


def test_resume_equals_uninterrupted(run_dir, tmp_path):
    cfg, out = run_dir
    twin = tmp_path / "twin"
    shutil.copytree(out, twin)
    full = pipeline.cmd_evolve(cfg, out)

    class Stop(Exception):
        pass

    def interrupt(state):
        if state.iteration == 3:
            raise Stop

    with pytest.raises(Stop):
        pipeline.cmd_evolve(cfg.replace(output=str(twin)), twin, on_iteration=interrupt)
    assert pipeline.load_checkpoint(twin / pipeline.CHECKPOINT_NAME).iteration == 2
    resumed = pipeline.cmd_resume(twin)
    assert resumed.iteration == full.iteration
    assert np.array_equal(resumed.population.ids, full.population.ids)
    assert np.array_equal(resumed.population.fields, full.population.fields)
    assert np.array_equal(resumed.population.objectives, full.population.objectives)
    assert resumed.hv_history == full.hv_history
    pipeline.cmd_report(out, figures=False)
    pipeline.cmd_report(twin, figures=False)
    for name in ("pareto_front.csv", "hypervolume.csv"):
        assert (out / "report" / name).read_bytes() == (twin / "report" / name).read_bytes()


def test_resume_extends_iterations(run_dir):
    cfg, out = run_dir
    pipeline.cmd_evolve(cfg.replace(evolve=EvolveConfig(4, 4, 2, 2)), out)
    state = pipeline.cmd_resume(out, max_iterations=3)
    assert state.iteration == 3 and len(state.hv_history) == 4


def test_finished_run_is_noop(run_dir, caplog):
    cfg, out = run_dir
    pipeline.cmd_evolve(cfg.replace(evolve=EvolveConfig(4, 4, 1, 1)), out)
    before = (out / pipeline.CHECKPOINT_NAME).read_bytes()
    state = pipeline.cmd_resume(out)
    assert state.iteration == 1
    assert "already finished" in caplog.text
    assert (out / pipeline.CHECKPOINT_NAME).read_bytes() == before


def test_corrupted_checkpoint_refused(run_dir):
    cfg, out = run_dir
    pipeline.cmd_evolve(cfg.replace(evolve=EvolveConfig(4, 4, 2, 1)), out)
    ck = out / pipeline.CHECKPOINT_NAME
    state = pipeline.load_checkpoint(ck)
    state.hv_ref = state.hv_ref + 1.0
    arrays = pipeline._state_arrays(state)
    arrays["digest"] = np.array(pipeline._digest(pipeline._state_arrays(pipeline.load_checkpoint(ck))))
    np.savez(ck, **arrays)  # stale digest
    listing = sorted(p.name for p in out.rglob("*"))
    with pytest.raises(pipeline.CheckpointError, match="digest"):
        pipeline.cmd_resume(out, max_iterations=5)
    ck.write_bytes(b"garbage")
    with pytest.raises(pipeline.CheckpointError, match="unreadable"):
        pipeline.cmd_resume(out, max_iterations=5)
    assert sorted(p.name for p in out.rglob("*")) == listing


def test_checkpoint_version_mismatch(run_dir):
    cfg, out = run_dir
    state = pipeline.cmd_evolve(cfg.replace(evolve=EvolveConfig(4, 4, 0, 1)), out)
    arrays = pipeline._state_arrays(state)
    arrays["version"] = np.array(99)
    arrays["digest"] = np.array(pipeline._digest(arrays))
    np.savez(out / pipeline.CHECKPOINT_NAME, **arrays)
    with pytest.raises(pipeline.CheckpointError, match="version"):
        pipeline.load_checkpoint(out / pipeline.CHECKPOINT_NAME)


def test_checkpoint_round_trip(run_dir, tmp_path):
    cfg, out = run_dir
    state = pipeline.cmd_evolve(cfg.replace(evolve=EvolveConfig(4, 4, 1, 1)), out)
    pipeline.save_checkpoint(state, tmp_path / "c.npz")
    back = pipeline.load_checkpoint(tmp_path / "c.npz")
    assert back.config == state.config and back.iteration == state.iteration
    assert np.array_equal(back.population.fields, state.population.fields)
    assert back.population.reasons == state.population.reasons
    assert np.array_equal(back.vae.flat(), state.vae.flat())


def test_checkpoint_write_failure_dumps_state(run_dir, monkeypatch, tmp_path):
    cfg, out = run_dir
    state = pipeline.cmd_evolve(cfg.replace(evolve=EvolveConfig(4, 4, 0, 1)), out)

    def fail(path, data):
        raise OSError("disk full")

    monkeypatch.setattr(pipeline.io, "atomic_write_bytes", fail)
    monkeypatch.setattr(pipeline.tempfile, "tempdir", str(tmp_path))
    with pytest.raises(pipeline.CheckpointError, match="dumped"):
        pipeline.save_checkpoint(state, out / "x.npz")
    dumps = list(tmp_path.glob("mftd-state-*.npz"))
    assert len(dumps) == 1 and dumps[0].stat().st_size > 0


def test_empty_archive_report(tmp_path):
    cfg = tiny_config()
    grid = pipeline.make_grid(cfg)
    state = pipeline.RunState(cfg, 0, pipeline.Population.empty(grid.n_elements), 0, np.array([1.0, 1.0]), [])
    pipeline.save_checkpoint(state, tmp_path / pipeline.CHECKPOINT_NAME)
    rep = pipeline.cmd_report(tmp_path)
    assert (rep / "pareto_front.csv").read_text() == ",".join(pipeline.PARETO_HEADER) + "\n"
    assert (rep / "hypervolume.csv").read_text() == ",".join(pipeline.HV_HEADER) + "\n"


def test_missing_seeds(tmp_path):
    with pytest.raises(FileNotFoundError, match="seed"):
        pipeline.cmd_evolve(tiny_config(), tmp_path)


def test_invalid_offspring_are_kept_out_of_training():
    ids = np.arange(4)
    pop = pipeline.Population(ids, np.arange(4.0)[:, None] * np.ones((4, 3)),
                              np.array([[1, 1], [np.inf, np.inf], [2, 0.5], [np.inf, np.inf]]),
                              np.array([True, False, True, False]), ["", "disconnected", "", "empty"])
    assert np.array_equal(pipeline._training_set(pop)[:, 0], [0.0, 2.0])
    survivors, ranks = pipeline._select(pop, 3)
    assert 1 not in survivors.ids or 3 not in survivors.ids
    assert np.all(np.diff(survivors.ids) > 0)


def test_pareto_rows_sorted_by_rank_then_id():
    pop = pipeline.Population(np.array([5, 2, 9]), np.zeros((3, 1)),
                              np.array([[2.0, 2.0], [1.0, 1.0], [1.0, 1.0]]), np.ones(3, bool), [""] * 3)
    assert [(r[0], r[3]) for r in pipeline.pareto_rows(pop)] == [(2, 1), (9, 1), (5, 2)]


def test_check_field(desk_grid):
    rho = np.ones(desk_grid.n_elements)
    pipeline.check_field(rho, desk_grid)
    for bad in (np.ones(3), np.full(desk_grid.n_elements, 1.5), np.zeros(desk_grid.n_elements)):
        with pytest.raises(ValueError):
            pipeline.check_field(bad, desk_grid)


def test_threads_give_identical_results(run_dir, tmp_path):
    cfg, out = run_dir
    grid = pipeline.make_grid(cfg)
    _, fields = pipeline.load_seeds(out, grid)
    a = pipeline.evaluate_fields(fields, grid, cfg.hifi_config(), threads=1)
    b = pipeline.evaluate_fields(fields, grid, cfg.hifi_config(), threads=2)
    assert [r.objectives for r in a] == [r.objectives for r in b]
