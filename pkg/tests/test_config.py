import json

import numpy as np
import pytest

from fmatch import io, shapes
from fmatch.config import ConfigError, RunConfig, config_from_dict, load_config
from fmatch.mesh import save_mesh
from fmatch.pipeline import CacheWarning, match_shapes, prepare_shape, write_manifest


def test_defaults():
    cfg = load_config()
    assert (cfg.k, cfg.k_partial, cfg.rank_cap) == (30, 60, 40)
    assert cfg.mode == "commutativity_weighted" and cfg.alpha == 1e-3
    assert cfg.loss_weights == (1.0, 1.0, 0.001)
    assert cfg.training.lr == 1e-4 and cfg.training.batch == 8
    assert cfg.zoomout.k_final == 120 and cfg.pose is None


def test_file_and_overrides(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"k": 20, "training": {"steps": 5}, "pose": {"up": "z"}}))
    cfg = load_config(path, {"k": 25, "training.seed": 3, "alpha": None})
    assert cfg.k == 25 and cfg.training.steps == 5 and cfg.training.seed == 3
    assert cfg.pose.up == "z" and cfg.pose.forward == "z"
    assert cfg.alpha == 1e-3
    assert load_config(overrides={"pose.up": "x"}).pose.up == "x"


@pytest.mark.parametrize(
    "data, match",
    [
        ({"k": 0}, "k must be"),
        ({"zoomout": {"step": 0}}, "zoomout.step"),
        ({"bogus": 1}, "unknown config field 'bogus'"),
        ({"training": {"lrr": 1}}, "training.'lrr'"),
        ({"training": 3}, "must be an object"),
        ({"mode": "x"}, "mode"),
        ({"alpha": -1}, "alpha"),
        ({"loss_weights": [1, 1]}, "loss_weights"),
        ({"descriptors": {"hks": 0, "wks": 0}}, "descriptor counts"),
        ({"training": {"lr": 0}}, "lr"),
    ],
)
def test_validation_errors(data, match):
    with pytest.raises(ConfigError, match=match):
        config_from_dict(data)


def test_invalid_json(tmp_path):
    path = tmp_path / "c.json"
    path.write_text("{")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(path)
    path.write_text("[1]")
    with pytest.raises(ConfigError):
        load_config(path)


def test_sha256_stable():
    a, b = RunConfig(), config_from_dict({})
    assert a.sha256() == b.sha256()
    assert config_from_dict({"k": 31}).sha256() != a.sha256()
    assert RunConfig(refine=True).k_match_basis == 120
    assert RunConfig().k_match_basis == 30


@pytest.fixture
def mesh_file(tmp_path):
    path = tmp_path / "shape.off"
    save_mesh(shapes.bumpy_sphere(200, seed=2), path)
    return path


def _small_cfg():
    return config_from_dict({"k": 12, "descriptors": {"hks": 8, "wks": 8}})


def test_cache_hit_and_invalidation(tmp_path, mesh_file):
    cfg, cache = _small_cfg(), tmp_path / "cache"
    first = prepare_shape(mesh_file, cfg, 12, 12, cache)
    assert first.cache_status == "computed"
    second = prepare_shape(mesh_file, cfg, 12, 12, cache)
    assert second.cache_status == "hit"
    assert np.array_equal(first.basis.evecs, second.basis.evecs)
    assert np.array_equal(first.descriptors.values, second.descriptors.values)
    # a smaller request reuses the cache, a bigger one recomputes
    assert prepare_shape(mesh_file, cfg, 8, 12, cache).cache_status == "hit"
    assert prepare_shape(mesh_file, cfg, 16, 12, cache).cache_status == "computed"
    # other descriptor parameters key a separate entry
    other = config_from_dict({"k": 12, "descriptors": {"hks": 6, "wks": 8}})
    assert prepare_shape(mesh_file, other, 12, 12, cache).cache_status == "computed"


def test_cache_corruption_recomputed(tmp_path, mesh_file):
    cfg, cache = _small_cfg(), tmp_path / "cache"
    ref = prepare_shape(mesh_file, cfg, 12, 12, cache)
    (basis_file,) = cache.glob("*.fmsb")
    data = bytearray(basis_file.read_bytes())
    data[-3] ^= 0xFF
    basis_file.write_bytes(bytes(data))
    with pytest.warns(CacheWarning, match="recomputing"):
        again = prepare_shape(mesh_file, cfg, 12, 12, cache)
    assert again.cache_status == "recomputed"
    assert np.array_equal(again.basis.evecs, ref.basis.evecs)
    assert prepare_shape(mesh_file, cfg, 12, 12, cache).cache_status == "hit"


def test_cache_env(tmp_path, mesh_file, monkeypatch):
    monkeypatch.setenv("FMATCH_CACHE_DIR", str(tmp_path / "envcache"))
    prepare_shape(mesh_file, _small_cfg(), 12, 12)
    assert any((tmp_path / "envcache").glob("*.json"))


def test_missing_mesh(tmp_path):
    with pytest.raises(FileNotFoundError, match="mesh file not found"):
        prepare_shape(tmp_path / "nope.off", _small_cfg(), 12, 12, tmp_path)


def test_self_match_and_manifest(tmp_path, mesh_file):
    cfg = _small_cfg()
    s = prepare_shape(mesh_file, cfg, 12, 12, tmp_path / "cache")
    res = match_shapes(s, s, cfg)
    assert np.array_equal(res.assignment, np.arange(200))
    assert res.loss.total < 1e-6
    out = tmp_path / "fmap.fmmat"
    io.save_matrix(out, res.C)
    man = json.loads(write_manifest(tmp_path, "match", cfg, [mesh_file], [out]).read_text())
    assert man["config_sha256"] == cfg.sha256()
    assert set(man["outputs"]) == {"fmap.fmmat"}
    assert "time" not in json.dumps(man)
