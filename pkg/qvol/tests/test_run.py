"""Tests for run directories and output files."""

import numpy as np
import pytest
import yaml

from qvol.run import (
    clear_run_dir,
    config_digest,
    format_value,
    get_run_config_file,
    get_run_dir,
    header_line,
    load_run_config,
    persist_run,
    read_lines,
    write_csv,
    write_lines,
)


class TestRunDir:
    """Tests for run directory management."""

    def test_digest_ignores_key_order(self):
        assert config_digest({"n": 4, "t": 0.5}) == config_digest({"t": 0.5, "n": 4})
        assert config_digest({"n": 4}) != config_digest({"n": 5})

    def test_default_location(self, temp_runs_dir):
        run_dir = get_run_dir({"command": "sample", "n": 4})
        assert run_dir.parent == temp_runs_dir
        assert run_dir.name.startswith("sample-")

    def test_explicit_out(self, tmp_path):
        assert get_run_dir({"command": "sample"}, tmp_path / "here") == tmp_path / "here"

    def test_persist_and_load(self):
        config = {"command": "exact", "n": 2, "t": 0.0001}
        run_dir = persist_run(config)
        text = get_run_config_file(run_dir).read_text()
        assert text.splitlines()[0] == header_line(config)
        assert load_run_config(run_dir) == config

    def test_load_missing(self, tmp_path):
        assert load_run_config(tmp_path / "nothing") == {}

    def test_load_corrupt(self, tmp_path):
        get_run_config_file(tmp_path).write_text("n: [unclosed\n")
        assert load_run_config(tmp_path) == {}

    def test_clear(self, tmp_path):
        run_dir = persist_run({"command": "kernel"}, tmp_path / "run")
        assert clear_run_dir(run_dir)
        assert not run_dir.exists()
        assert not clear_run_dir(run_dir)


class TestOutputFiles:
    """Tests for the file writers."""

    def test_header_is_parseable(self):
        line = header_line({"n": 4, "taus": [0.5, 1.0]})
        assert line.startswith("# config: ")
        assert yaml.safe_load(line[len("# config: ") :]) == {"n": 4, "taus": [0.5, 1.0]}

    @pytest.mark.parametrize(
        "value,expected",
        [(True, "true"), (0.1, "0.10000000000000001"), ([1, 2], "1 2"), (np.int64(3), "3"), ("x", "x")],
    )
    def test_format_value(self, value, expected):
        assert format_value(value) == expected

    def test_csv_quotes_commas(self, tmp_path):
        path = write_csv(tmp_path / "checks.csv", {"suite": "identities"}, ["name", "detail"], [["a", "x=1, y=2"]])
        lines = path.read_text().splitlines()
        assert lines[0].startswith("# config:")
        assert lines[1] == "name,detail"
        assert lines[2] == 'a,"x=1, y=2"'

    def test_lines_round_trip(self, tmp_path):
        path = write_lines(tmp_path / "verdict.txt", {}, ["PASS a", "", "FAIL b"])
        assert read_lines(path) == ["PASS a", "FAIL b"]
