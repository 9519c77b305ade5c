import json

import numpy as np
import pytest

from affordmap_extract.cli import main
from scenehelpers import GRID, make_scene, save_scene, write_corpus


@pytest.fixture()
def scene_png(tmp_path):
    img, _, _ = make_scene("hold", seed=41)
    return save_scene(tmp_path / "scene.png", img)


def _write_csv(tmp_path, rows):
    listing = tmp_path / "list.csv"
    lines = ["image_path,verb,object"] + [f"{r.image_path},{r.verb},{r.object}" for r in rows]
    listing.write_text("\n".join(lines) + "\n")
    return listing


def test_extract_features_cmd(scene_png, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["extract-features", str(scene_png), str(out)]) == 0
    feats = np.load(out / "features.npy")
    assert feats.shape == (GRID, GRID, 32)
    frag = json.loads((out / "features.meta.json").read_text())
    assert (frag["grid_h"], frag["grid_w"]) == feats.shape[:2]
    assert f"grid={GRID}x{GRID}" in capsys.readouterr().out


def test_extract_features_custom_layers(scene_png, tmp_path):
    out = tmp_path / "out"
    assert main(["extract-features", str(scene_png), str(out), "--layers", "2,5", "--quiet"]) == 0
    frag = json.loads((out / "features.meta.json").read_text())
    assert frag["layer_ids"] == [2, 5]


def test_extract_attn_cmd(scene_png, tmp_path, capsys):
    out = tmp_path / "out"
    rc = main(["extract-attn", str(scene_png), str(out), "--verb", "pick up", "--object", "box"])
    assert rc == 0
    av = np.load(out / "attn_verb.npy")
    assert av.shape == (8, GRID, GRID)
    assert (out / "attn_object.npy").is_file()
    frag = json.loads((out / "attn.meta.json").read_text())
    assert frag["verb_span"] == [4, 6]
    assert "pick up the box" in capsys.readouterr().out


def test_extract_attn_verb_equals_object_is_usage_error(scene_png, tmp_path, capsys):
    rc = main(["extract-attn", str(scene_png), str(tmp_path / "o"), "--verb", "mug", "--object", "mug"])
    assert rc == 2
    assert "mug" in capsys.readouterr().err


def test_extract_features_missing_image(tmp_path, capsys):
    rc = main(["extract-features", str(tmp_path / "none.png"), str(tmp_path / "o")])
    assert rc == 1
    assert "none.png" in capsys.readouterr().err


def test_export_dataset_cmd(tmp_path, capsys):
    rows, _, _ = write_corpus(tmp_path / "imgs", 2, verbs=["hold"], obj="mug")
    listing = _write_csv(tmp_path, rows)
    out = tmp_path / "bundles"
    assert main(["export-dataset", str(listing), str(out)]) == 0
    assert "exported=2" in capsys.readouterr().out
    assert (out / "hold" / "mug" / "img_000" / "meta.json").is_file()

    # resume: everything already present
    assert main(["export-dataset", str(listing), str(out)]) == 0
    assert "skipped=2" in capsys.readouterr().out


def test_export_dataset_manifest_guard(tmp_path, capsys):
    rows, _, _ = write_corpus(tmp_path / "imgs", 1)
    listing = _write_csv(tmp_path, rows)
    out = tmp_path / "bundles"
    assert main(["export-dataset", str(listing), str(out), "--quiet"]) == 0

    rc = main(["export-dataset", str(listing), str(out), "--timesteps", "1,2", "--quiet"])
    assert rc == 2
    assert "force" in capsys.readouterr().err

    rc = main(["export-dataset", str(listing), str(out), "--timesteps", "1,2", "--force", "--quiet"])
    assert rc == 0


def test_export_dataset_bad_csv(tmp_path, capsys):
    listing = tmp_path / "bad.csv"
    listing.write_text("image_path,verb\n/a.png,hold\n")
    assert main(["export-dataset", str(listing), str(tmp_path / "o")]) == 2
    assert "object" in capsys.readouterr().err


def test_unknown_backend(scene_png, tmp_path, capsys):
    rc = main(["extract-features", str(scene_png), str(tmp_path / "o"), "--feature-backend", "vgg"])
    assert rc == 2
    assert "vgg" in capsys.readouterr().err


def test_bad_layers_flag(scene_png, tmp_path, capsys):
    rc = main(["extract-features", str(scene_png), str(tmp_path / "o"), "--layers", "a,b"])
    assert rc == 2
    assert "--layers" in capsys.readouterr().err


def test_argparse_plumbing(capsys):
    assert main([]) == 2
    assert main(["no-such-command"]) == 2
    assert main(["--help"]) == 0
    assert "export-dataset" in capsys.readouterr().out
    assert main(["extract-attn", "img.png", "out"]) == 2  # --verb/--object required
