import numpy as np
import pytest

from risbl.container import (
    MAGIC,
    load_ground_truth,
    load_matrices,
    load_measurements,
    parse_key_values,
    read_scenario,
    save_ground_truth,
    save_matrices,
    save_measurements,
    scenario_from_mapping,
    write_scenario,
)
from risbl.exceptions import ConfigError
from risbl.harness import build_scenario, make_rng


class TestScenarioText:
    def test_round_trip(self, desk_cfg, tmp_path):
        path = tmp_path / "scenario.txt"
        write_scenario(desk_cfg, path)
        assert read_scenario(path) == desk_cfg

    def test_comments_and_blank_lines(self):
        text = "# header\n\nm1=2  # trailing comment\nm2=3\n"
        parsed = parse_key_values(text)
        assert parsed == {"m1": "2", "m2": "3"}

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown scenario key"):
            scenario_from_mapping({"bogus": "1"})

    def test_unknown_key_ignored_when_requested(self):
        cfg = scenario_from_mapping({"m1": "2", "axis": "snr"}, ignore_extra=True)
        assert cfg.m1 == 2

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigError, match="bad value"):
            scenario_from_mapping({"m1": "two"})

    def test_missing_equals_rejected(self):
        with pytest.raises(ConfigError, match="key=value"):
            parse_key_values("m1 2\n")


class TestBinaryContainer:
    def test_matrix_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        records = {
            "a": rng.standard_normal((3, 4)) + 1j * rng.standard_normal((3, 4)),
            "b": np.array([[1.5]]),
        }
        path = tmp_path / "mats.bin"
        save_matrices(path, records)
        loaded = load_matrices(path)
        assert set(loaded) == {"a", "b"}
        assert np.array_equal(loaded["a"], records["a"])
        assert np.array_equal(loaded["b"], records["b"].astype(complex))

    def test_header_layout(self, tmp_path):
        path = tmp_path / "one.bin"
        save_matrices(path, {"x": np.zeros((2, 2))})
        raw = path.read_bytes()
        assert raw[:16] == MAGIC
        assert int.from_bytes(raw[16:20], "little") == 1

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"\x00" * 24)
        with pytest.raises(ConfigError, match="magic"):
            load_matrices(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        path = tmp_path / "trail.bin"
        save_matrices(path, {"x": np.zeros((1, 1))})
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(ConfigError, match="trailing"):
            load_matrices(path)

    def test_ground_truth_round_trip(self, desk_cfg, tmp_path):
        gt, meas = build_scenario(desk_cfg, make_rng(desk_cfg.seed))
        gt_path = tmp_path / "gt.bin"
        save_ground_truth(gt, gt_path)
        loaded = load_ground_truth(gt_path)
        assert np.array_equal(loaded.h_tilde, gt.h_tilde)
        assert np.array_equal(loaded.u_true, gt.u_true)
        assert np.array_equal(loaded.column_support, gt.column_support)
        assert len(loaded.row_supports) == len(gt.row_supports)
        for a, b in zip(loaded.row_supports, gt.row_supports):
            assert np.array_equal(a, b)
        assert len(loaded.h_physical_per_ue) == desk_cfg.k
        for a, b in zip(loaded.h_physical_per_ue, gt.h_physical_per_ue):
            assert np.array_equal(a, b)

        meas_path = tmp_path / "meas.bin"
        save_measurements(meas, meas_path)
        loaded_meas = load_measurements(meas_path)
        assert np.array_equal(loaded_meas.y_tilde, meas.y_tilde)
        assert np.array_equal(loaded_meas.theta_tilde, meas.theta_tilde)
        assert loaded_meas.sigma2 == meas.sigma2

    def test_little_endian_interleaved_payload(self, tmp_path):
        # one 1x1 record with value 3.0 - 4.0j: payload bytes are re, im f64 LE
        path = tmp_path / "le.bin"
        save_matrices(path, {"v": np.array([[3.0 - 4.0j]])})
        raw = path.read_bytes()
        payload = raw[-16:]
        assert np.frombuffer(payload, dtype="<f8").tolist() == [3.0, -4.0]
