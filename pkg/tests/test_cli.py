import json

import numpy as np
import pytest

from rotoconv.basis import load_basis, read_pgm
from rotoconv.cli import main
from rotoconv.datasets import write_idx_images, write_idx_labels


def run(*argv):
    return main(list(argv))


@pytest.fixture
def pretrained(tmp_path):
    out = tmp_path / "basis.rcbs"
    code = run("pretrain-basis", "--corpus", "synthetic", "--n-images", "24",
               "--epochs", "2", "--batch-size", "8", "--n-elements", "3",
               "--partial", "--seed", "3", "--out", str(out),
               "--log-csv", str(tmp_path / "loss.csv"))
    assert code == 0
    return out


class TestVerify:
    def test_fresh_checkout_passes(self, capsys):
        assert run("verify") == 0
        out = capsys.readouterr().out
        assert "PASS" in out and "FAIL" not in out


class TestPretrainBasis:
    def test_writes_basis_log_and_manifest(self, tmp_path, pretrained):
        basis = load_basis(pretrained)
        assert basis.kind == "partial"
        assert (tmp_path / "loss.csv").read_text().startswith("epoch,")
        manifest = json.loads((tmp_path / "basis.rcbs.manifest.json").read_text())
        assert manifest["command"] == "pretrain-basis"
        assert manifest["options"]["epochs"] == 2
        assert str(pretrained) in manifest["outputs"]

    def test_reproducible_artifact_hash(self, tmp_path):
        args = ["pretrain-basis", "--corpus", "synthetic", "--n-images", "16",
                "--epochs", "1", "--batch-size", "8", "--n-elements", "2",
                "--seed", "5"]
        a, b = tmp_path / "a.rcbs", tmp_path / "b.rcbs"
        assert run(*args, "--out", str(a)) == 0
        assert run(*args, "--out", str(b)) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_config_file_seeds_flags(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("n_images=16\nepochs=1\nbatch_size=8\nn_elements=2\nseed=5\n")
        out = tmp_path / "c.rcbs"
        assert run("pretrain-basis", "--config", str(cfg), "--out", str(out)) == 0
        manifest = json.loads((tmp_path / "c.rcbs.manifest.json").read_text())
        assert manifest["options"]["n_elements"] == 2


class TestInspectBasis:
    def test_renders_grid_with_exact_quarter_turn_rows(self, tmp_path, pretrained):
        out = tmp_path / "grid.pgm"
        assert run("inspect-basis", "--basis", str(pretrained),
                   "--cell-scale", "2", "--out", str(out)) == 0
        img = read_pgm(out)
        basis = load_basis(pretrained)
        cell = basis.kernel_size * 2
        assert img.shape == (8 * (cell + 1) + 1, basis.n_elements * (cell + 1) + 1)
        def tile(r, i):
            y, x = 1 + r * (cell + 1), 1 + i * (cell + 1)
            return img[y:y + cell, x:x + cell]
        for i in range(basis.n_elements):
            assert np.array_equal(tile(2, i), np.rot90(tile(0, i)))
            assert np.array_equal(tile(6, i), np.rot90(tile(0, i), 3))


class TestTrain:
    def test_train_writes_checkpoint(self, tmp_path, pretrained):
        out = tmp_path / "model.ckpt"
        code = run("train", "--dataset", "synthetic", "--n-train", "20",
                   "--classes", "10", "--model", "group", "--basis", str(pretrained),
                   "--epochs", "1", "--batch-size", "10", "--seed", "0",
                   "--out", str(out))
        assert code == 0
        assert out.exists()
        assert (tmp_path / "model.ckpt.manifest.json").exists()

    def test_fingerprint_mismatch_fails_without_checkpoint(self, tmp_path, pretrained):
        first = tmp_path / "first.ckpt"
        assert run("train", "--dataset", "synthetic", "--n-train", "20",
                   "--model", "group", "--basis", str(pretrained),
                   "--epochs", "1", "--batch-size", "10", "--out", str(first)) == 0
        other_out = tmp_path / "other.rcbs"
        assert run("pretrain-basis", "--corpus", "synthetic", "--n-images", "16",
                   "--epochs", "1", "--batch-size", "8", "--n-elements", "3",
                   "--partial", "--seed", "77", "--out", str(other_out)) == 0
        final = tmp_path / "resumed.ckpt"
        code = run("train", "--dataset", "synthetic", "--n-train", "20",
                   "--model", "group", "--basis", str(other_out),
                   "--init-from", str(first), "--epochs", "1",
                   "--batch-size", "10", "--out", str(final))
        assert code != 0
        assert not final.exists()


class TestEvaluationCommands:
    def test_eval_rotations_and_activations(self, tmp_path, pretrained):
        ckpt = tmp_path / "model.ckpt"
        assert run("train", "--dataset", "synthetic", "--n-train", "20",
                   "--model", "group", "--basis", str(pretrained),
                   "--epochs", "1", "--batch-size", "10", "--out", str(ckpt)) == 0
        sweep = tmp_path / "sweep.csv"
        code = run("eval-rotations", "--checkpoint", str(ckpt), "--basis",
                   str(pretrained), "--dataset", "synthetic", "--n-images", "15",
                   "--angles", "0,90", "--out", str(sweep))
        assert code == 0
        lines = sweep.read_text().strip().splitlines()
        assert lines[0] == "variant,angle_deg,error"
        assert len(lines) == 3
        robust = tmp_path / "robust.csv"
        code = run("eval-activations", "--checkpoint", str(ckpt), "--basis",
                   str(pretrained), "--dataset", "synthetic", "--n-images", "2",
                   "--out", str(robust))
        assert code == 0
        assert robust.read_text().startswith("variant,layer_index,layer_name")

    def test_missing_checkpoint_is_clean_error(self, tmp_path, capsys):
        code = run("eval-rotations", "--checkpoint", str(tmp_path / "nope.ckpt"),
                   "--dataset", "synthetic", "--out", str(tmp_path / "s.csv"))
        assert code == 2
        assert "error" in capsys.readouterr().err


class TestDatasetWiring:
    def test_mnist_via_cli_paths(self, tmp_path, rng):
        data = tmp_path / "data"
        data.mkdir()
        images = rng.integers(0, 256, (30, 28, 28)).astype(np.uint8)
        labels = (np.arange(30) % 10).astype(np.uint8)
        write_idx_images(images, data / "train-images-idx3-ubyte")
        write_idx_labels(labels, data / "train-labels-idx1-ubyte")
        out = tmp_path / "b.rcbs"
        code = run("pretrain-basis", "--corpus", "mnist", "--data-dir", str(data),
                   "--n-images", "20", "--epochs", "1", "--batch-size", "10",
                   "--n-elements", "2", "--out", str(out))
        assert code == 0
        assert out.exists()
