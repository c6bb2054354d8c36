"""Tests for the coarse-lab command line."""

import json

import numpy as np
import pytest

from coarse_lab import EXIT_FAILED, EXIT_INPUT, EXIT_OK, main, parse_schedule
from coarse_lab.harness import read_pgm
from coarse_lab.utils import INF, CoarseLabError


@pytest.fixture
def workspace(tmp_path):
    """A space, a ground-truth map and its unitary bundle written by the CLI."""
    space = tmp_path / "space.json"
    mapping = tmp_path / "map.json"
    bundle = tmp_path / "bundle.json"
    assert main(["gen-space", "interval", "8", "--out", str(space)]) == EXIT_OK
    assert main(["gen-map", str(space), "-D", "2", "--seed", "1", "--out", str(mapping)]) == EXIT_OK
    assert (
        main(["build-unitary", str(space), str(mapping), "-p", "0", "--out", str(bundle)])
        == EXIT_OK
    )
    return tmp_path


class TestParseSchedule:
    """Test the F,E schedule syntax."""

    def test_steps(self):
        assert parse_schedule("0,0; 1,2;4,inf") == [(0, 0), (1, 2), (4, INF)]

    @pytest.mark.parametrize("text", ["", ";", "1", "1,2,3", "a,b"])
    def test_malformed(self, text):
        with pytest.raises(CoarseLabError):
            parse_schedule(text)


class TestGenerateCommands:
    """Test gen-space, gen-map and build-unitary."""

    def test_gen_space_to_stdout(self, capsys):
        assert main(["gen-space", "multi_component", "3", "--components", "2"]) == EXIT_OK
        data = json.loads(capsys.readouterr().out)
        assert len(data["blocks"]) == 6
        assert data["space"]["dist"][0][3] == "inf"

    def test_gen_map(self, workspace):
        data = json.loads((workspace / "map.json").read_text())
        assert data["distortion"] == 2
        assert len(data["forward"]["mapping"]) == 8

    def test_bundle(self, workspace):
        bundle = json.loads((workspace / "bundle.json").read_text())
        assert bundle["scramble"] == 0
        assert len(bundle["operator"]["matrix"]) == 8

    def test_missing_input(self, tmp_path):
        assert main(["gen-map", str(tmp_path / "none.json")]) == EXIT_INPUT

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "space.json"
        path.write_text("{")
        assert main(["gen-map", str(path)]) == EXIT_INPUT


class TestExtractCommand:
    """Test extraction from bundles and CRLB matrices."""

    def test_recovers_the_map(self, workspace):
        report_path = workspace / "report.json"
        code = main(
            [
                "extract",
                str(workspace / "bundle.json"),
                "--map",
                str(workspace / "map.json"),
                "--out",
                str(report_path),
            ]
        )
        report = json.loads(report_path.read_text())
        assert code == EXIT_OK
        assert report["verdict"] == "recovered"
        assert report["closeness"] == 0
        assert report["extraction"]["success"] is True

    def test_crlb_input(self, workspace, capsys):
        matrix = workspace / "u.crlb"
        space, mapping = workspace / "space.json", workspace / "map.json"
        assert main(["build-unitary", str(space), str(mapping), "--out", str(matrix)]) == EXIT_OK
        code = main(["extract", str(matrix), "--space", str(space), "--map", str(mapping)])
        assert code == EXIT_OK
        assert json.loads(capsys.readouterr().out)["verdict"] == "recovered"

    def test_crlb_needs_a_space(self, workspace):
        matrix = workspace / "u.crlb"
        main(["build-unitary", str(workspace / "space.json"), str(workspace / "map.json"), "--out", str(matrix)])
        assert main(["extract", str(matrix)]) == EXIT_INPUT

    def test_bad_schedule(self, workspace):
        assert main(["extract", str(workspace / "bundle.json"), "--schedule", "1"]) == EXIT_INPUT

    def test_rejected_steps_exit_with_failure(self, workspace):
        config = workspace / "strict.json"
        config.write_text(json.dumps({"thresholds": {"max_expansion": 0, "max_inverse_radius": 0}}))
        code = main(
            ["--config", str(config), "extract", str(workspace / "bundle.json"), "--schedule", "0,0"]
        )
        assert code == EXIT_FAILED


class TestOtherCommands:
    """Test verify-laws, sweep and heatmap."""

    def test_verify_laws(self, tmp_path):
        out = tmp_path / "laws.json"
        assert main(["verify-laws", "support", "--count", "3", "--out", str(out)]) == EXIT_OK
        [report] = json.loads(out.read_text())
        assert report["suite"] == "support"
        assert report["checked"] == 3

    def test_sweep(self, tmp_path, capsys):
        csv_path = tmp_path / "runs.csv"
        code = main(["sweep", "--size", "6", "--runs", "2", "--csv", str(csv_path)])
        assert code == EXIT_OK
        assert len(json.loads(capsys.readouterr().out)) == 2
        assert csv_path.read_text().startswith("seed,kind,size")

    def test_heatmap_demo(self, tmp_path):
        out = tmp_path / "band.pgm"
        assert main(["heatmap", "--size", "6", "--band", "1", "--out", str(out)]) == EXIT_OK
        pixels = read_pgm(out)
        assert pixels.shape == (6, 6)
        rows, cols = np.indices(pixels.shape)
        assert not pixels[np.abs(rows - cols) > 1].any()

    def test_heatmap_of_a_bundle(self, workspace):
        out = workspace / "u.pgm"
        assert main(["heatmap", str(workspace / "bundle.json"), "--out", str(out)]) == EXIT_OK
        assert read_pgm(out).max() == 255

    def test_bad_config(self, tmp_path):
        config = tmp_path / "lab.json"
        config.write_text(json.dumps({"kernel": "python3"}))
        assert main(["--config", str(config), "sweep", "--size", "4", "--runs", "1"]) == EXIT_INPUT
