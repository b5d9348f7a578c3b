"""Command-line interface: exit codes, artifact dumps, synth/eval round trips."""

import json
from pathlib import Path

import numpy as np
import pytest

from refill.cli import EXIT_DEGRADED, EXIT_INPUT, EXIT_OK, main
from refill.core import load_image


@pytest.fixture(scope="module")
def pair_dir(tmp_path_factory):
    """One synthetic pair shared by the inpaint tests."""
    out = tmp_path_factory.mktemp("pair")
    assert main(["synth", "--out", str(out), "--regime", "CS",
                 "--seed", "7"]) in (None, EXIT_OK)
    return out


def _inpaint_args(pair: Path, out: Path, *extra: str) -> list:
    return ["inpaint", "--target", str(pair / "target.png"),
            "--mask", str(pair / "mask.png"),
            "--source", str(pair / "source.png"),
            "--out", str(out), *extra]


class TestSynth:
    def test_writes_pair_files(self, pair_dir):
        for name in ("gt.png", "target.png", "source.png", "mask.png",
                     "truth.json"):
            assert (pair_dir / name).exists()
        truth = json.loads((pair_dir / "truth.json").read_text())
        assert truth["regime"] == "both"
        assert truth["seed"] == 7

    def test_deterministic_per_seed(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            main(["synth", "--out", str(out), "--regime", "C", "--seed", "3"])
        for name in ("target.png", "source.png", "mask.png"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_count_makes_numbered_dirs(self, tmp_path):
        main(["synth", "--out", str(tmp_path), "--regime", "mixed",
              "--seed", "1", "--count", "3"])
        dirs = sorted(p.name for p in tmp_path.iterdir())
        assert dirs == ["pair_000", "pair_001", "pair_002"]

    def test_unknown_regime_is_input_error(self, tmp_path):
        rc = main(["synth", "--out", str(tmp_path / "x"), "--regime", "XYZ",
                   "--seed", "1"])
        assert rc == EXIT_INPUT


class TestInpaintExitCodes:
    def test_success_writes_output(self, pair_dir, tmp_path):
        out = tmp_path / "out.png"
        rc = main(_inpaint_args(pair_dir, out))
        assert rc in (None, EXIT_OK)
        img = load_image(out)
        assert img.shape[:2] == load_image(pair_dir / "target.png").shape[:2]

    def test_missing_file_is_input_error(self, pair_dir, tmp_path):
        out = tmp_path / "out.png"
        rc = main(["inpaint", "--target", str(pair_dir / "target.png"),
                   "--mask", str(tmp_path / "missing.png"),
                   "--source", str(pair_dir / "source.png"),
                   "--out", str(out)])
        assert rc == EXIT_INPUT
        assert not out.exists()

    def test_bad_config_is_input_error(self, pair_dir, tmp_path):
        rc = main(_inpaint_args(pair_dir, tmp_path / "o.png",
                                "--config", '{"n_clusters": 0}'))
        assert rc == EXIT_INPUT

    def test_mask_dims_mismatch_is_input_error(self, pair_dir, tmp_path):
        from refill.core import save_hole_mask

        small = tmp_path / "small_mask.png"
        save_hole_mask(small, np.zeros((8, 8)))
        out = tmp_path / "o.png"
        rc = main(["inpaint", "--target", str(pair_dir / "target.png"),
                   "--mask", str(small),
                   "--source", str(pair_dir / "source.png"),
                   "--out", str(out)])
        assert rc == EXIT_INPUT
        assert not out.exists()

    def test_degraded_exit_is_distinct(self, tmp_path):
        """A featureless source cannot support proposals: exit 3, output kept."""
        from refill.core import save_hole_mask, save_image
        from refill.harness import brush_hole, feature_texture

        tgt = feature_texture(64, 96, seed=0)
        flat = np.full_like(tgt, 0.5)
        hole = brush_hole((64, 96), seed=1)
        save_image(tmp_path / "t.png", tgt)
        save_image(tmp_path / "s.png", flat)
        save_hole_mask(tmp_path / "m.png", hole)
        out = tmp_path / "o.png"
        rc = main(["inpaint", "--target", str(tmp_path / "t.png"),
                   "--mask", str(tmp_path / "m.png"),
                   "--source", str(tmp_path / "s.png"), "--out", str(out)])
        assert rc == EXIT_DEGRADED
        assert out.exists()
        assert EXIT_DEGRADED not in (EXIT_OK, EXIT_INPUT)


class TestInpaintModes:
    def test_disable_all_equals_fill_only(self, pair_dir, tmp_path):
        dis, fo = tmp_path / "dis.png", tmp_path / "fo.png"
        main(_inpaint_args(pair_dir, dis, "--disable", "1,2,3,4,5,6"))
        main(_inpaint_args(pair_dir, fo, "--fill-only"))
        assert dis.read_bytes() == fo.read_bytes()

    def test_dump_writes_named_artifacts(self, pair_dir, tmp_path):
        out = tmp_path / "out.png"
        dump = tmp_path / "dump"
        main(_inpaint_args(pair_dir, out, "--dump", str(dump)))
        names = {p.name for p in dump.iterdir()}
        assert {"result.png", "fill.png", "weight_g.png"} <= names
        k = sum(1 for n in names if n.startswith("proposal_"))
        assert k >= 1
        for i in range(1, k + 1):
            for stem in ("proposal", "refined", "confidence", "weight",
                         "preview"):
                assert f"{stem}_{i}.png" in names
        # the dumped result matches the standalone output byte for byte
        assert (dump / "result.png").read_bytes() == out.read_bytes()

    def test_runs_are_deterministic(self, pair_dir, tmp_path):
        a, b = tmp_path / "a.png", tmp_path / "b.png"
        main(_inpaint_args(pair_dir, a))
        main(_inpaint_args(pair_dir, b))
        assert a.read_bytes() == b.read_bytes()

    def test_poisson_flag_runs(self, pair_dir, tmp_path):
        out = tmp_path / "p.png"
        rc = main(_inpaint_args(pair_dir, out, "--poisson"))
        assert rc in (None, EXIT_OK)
        assert out.exists()


class TestEval:
    def test_report_csv_and_figures(self, tmp_path):
        pairs = tmp_path / "pairs"
        for k in range(2):
            main(["synth", "--out", str(pairs / f"p{k:03d}"),
                  "--regime", "C", "--seed", str(k)])
        out = tmp_path / "report.csv"
        rc = main(["eval", "--pairs", str(pairs), "--out", str(out)])
        assert rc in (None, EXIT_OK)
        lines = out.read_text().strip().splitlines()
        assert len(lines) == 3  # header + one row per pair
        assert "psnr_hole" in lines[0]
        report = json.loads(out.with_suffix(".json").read_text())
        assert "mean_psnr_hole" in report["aggregates"]
        for fig in ("psnr_hist.png", "psnr_vs_hole_fraction.png",
                    "ssim_vs_psnr.png"):
            assert (tmp_path / fig).stat().st_size > 0

    def test_empty_pairs_dir_is_input_error(self, tmp_path):
        empty = tmp_path / "none"
        empty.mkdir()
        rc = main(["eval", "--pairs", str(empty),
                   "--out", str(tmp_path / "r.csv")])
        assert rc == EXIT_INPUT
