import json
import os
import tempfile
import types
import unittest
from pathlib import Path
from unittest.mock import patch

from shd_config import (
    AppConfig,
    EventLogger,
    ShdConfigError,
    ShdIOError,
    ShdNumericError,
    _env_bool,
    _env_float,
    _env_int,
    _env_optional_float,
    load_yaml_mapping,
    parse_bool,
)


class EnvHelpersTests(unittest.TestCase):
    def test_invalid_numbers_fall_back_to_defaults(self):
        with patch.dict(os.environ, {"SHD_SH_ORDER": "tres", "SHD_BAND_LO_HZ": "1k"}, clear=False):
            self.assertEqual(_env_int("SHD_SH_ORDER", 3), 3)
            self.assertEqual(_env_float("SHD_BAND_LO_HZ", 1000.0), 1000.0)
            cfg = AppConfig()
        self.assertEqual((cfg.sh_order, cfg.band_lo_hz), (3, 1000.0))

    def test_logging_switch_spellings(self):
        for raw, expected in (("y", True), ("Off", False), ("0", False), ("quizas", True)):
            with patch.dict(os.environ, {"SHD_ENABLE_EVENT_LOGGING": raw}, clear=False):
                self.assertEqual(_env_bool("SHD_ENABLE_EVENT_LOGGING", True), expected, raw)

    def test_parse_bool_shared_by_env_and_overrides(self):
        for raw, expected in ((True, True), ("si", True), (" FALSE ", False), ("n", False), ("quizas", None)):
            self.assertEqual(parse_bool(raw), expected, raw)

    def test_eq_limit_can_be_switched_off(self):
        for raw, expected in (("off", None), ("none", None), ("25", 25.0), ("mucho", 40.0)):
            with patch.dict(os.environ, {"SHD_MAX_EQ_GAIN_DB": raw}, clear=False):
                self.assertEqual(_env_optional_float("SHD_MAX_EQ_GAIN_DB", 40.0), expected, raw)
                self.assertEqual(AppConfig().max_eq_gain_db, expected, raw)


class AppConfigTests(unittest.TestCase):
    def test_defaults_match_evaluation_protocol(self):
        cfg = AppConfig()
        self.assertEqual(cfg.sample_rate_hz, 8000)
        self.assertEqual(cfg.window_size, 512)
        self.assertEqual(cfg.hop_size, 256)
        self.assertEqual(cfg.sh_order, 3)
        self.assertEqual(cfg.elev_step_deg, 3.0)
        self.assertEqual(cfg.azim_step_deg, 2.0)
        self.assertEqual(cfg.anomaly_threshold_deg, 10.0)

    def test_app_config_reads_environment_on_instantiation(self):
        env_values = {
            "SHD_OUTPUT_DIR": "/tmp/out",
            "SHD_SH_ORDER": "2",
            "SHD_ENABLE_EVENT_LOGGING": "false",
            "SHD_MAX_LOG_TEXT_CHARS": "123",
            "SHD_MAX_EQ_GAIN_DB": "none",
        }
        with patch.dict(os.environ, env_values, clear=False):
            cfg = AppConfig()

        self.assertEqual(cfg.output_dir, "/tmp/out")
        self.assertEqual(cfg.sh_order, 2)
        self.assertFalse(cfg.enable_event_logging)
        self.assertEqual(cfg.max_log_text_chars, 123)
        self.assertIsNone(cfg.max_eq_gain_db)


class ErrorTaxonomyTests(unittest.TestCase):
    def test_exit_codes_and_cli_line(self):
        self.assertEqual(ShdConfigError("x").exit_code, 2)
        self.assertEqual(ShdIOError("x").exit_code, 3)
        self.assertEqual(ShdNumericError("x").exit_code, 4)
        self.assertEqual(ShdConfigError("banda vacia").cli_line(), "E2 config: banda vacia")

    def test_errors_keep_builtin_bases(self):
        self.assertIsInstance(ShdConfigError("x"), ValueError)
        self.assertIsInstance(ShdIOError("x"), OSError)
        self.assertIsInstance(ShdNumericError("x"), ArithmeticError)


class YamlLoaderTests(unittest.TestCase):
    def test_missing_file_is_io_error(self):
        with self.assertRaises(ShdIOError):
            load_yaml_mapping("/nonexistent/escena.yaml")

    def test_non_mapping_root_is_config_error(self):
        with tempfile.TemporaryDirectory() as tmp_dir:
            path = Path(tmp_dir) / "lista.yaml"
            path.write_text("- 1\n- 2\n", encoding="utf-8")
            with self.assertRaises(ShdConfigError):
                load_yaml_mapping(str(path))

    def test_parse_error_is_config_error(self):
        with tempfile.TemporaryDirectory() as tmp_dir:
            path = Path(tmp_dir) / "roto.yaml"
            path.write_text("clave: [1, 2\n", encoding="utf-8")
            with self.assertRaises(ShdConfigError):
                load_yaml_mapping(str(path))

    def test_uses_yaml_safe_load(self):
        with tempfile.TemporaryDirectory() as tmp_dir:
            path = Path(tmp_dir) / "x.yaml"
            path.write_text("ignored by fake yaml", encoding="utf-8")
            fake_yaml = types.SimpleNamespace(safe_load=lambda _raw: {"radius_m": 0.05}, YAMLError=ValueError)
            with patch.dict("sys.modules", {"yaml": fake_yaml}):
                data = load_yaml_mapping(str(path))
        self.assertEqual(data, {"radius_m": 0.05})


class EventLoggerTests(unittest.TestCase):
    def test_clip_truncates(self):
        logger = EventLogger(AppConfig(max_log_text_chars=5, enable_event_logging=False))
        self.assertEqual(logger.clip("abc"), "abc")
        self.assertEqual(logger.clip("abcdef"), "abcde... [truncated 1 chars]")

    def test_log_writes_jsonl(self):
        with tempfile.TemporaryDirectory() as tmp_dir:
            log_path = os.path.join(tmp_dir, "events.jsonl")
            logger = EventLogger(AppConfig(event_log_file=log_path, enable_event_logging=True, max_log_text_chars=500))
            logger.log("scene_started", sweep_id="s1", t60_s=0.5, run=3)

            with open(log_path, "r", encoding="utf-8") as file:
                rows = [json.loads(line) for line in file if line.strip()]

        self.assertEqual(len(rows), 1)
        self.assertEqual(rows[0]["event"], "scene_started")
        self.assertEqual(rows[0]["sweep_id"], "s1")
        self.assertEqual(rows[0]["t60_s"], 0.5)
        self.assertEqual(rows[0]["run"], 3)
        self.assertIn("ts", rows[0])

    def test_disabled_logger_writes_nothing(self):
        with tempfile.TemporaryDirectory() as tmp_dir:
            log_path = os.path.join(tmp_dir, "events.jsonl")
            EventLogger(AppConfig(event_log_file=log_path, enable_event_logging=False)).log("x")
            self.assertFalse(os.path.exists(log_path))

    def test_unwritable_log_warns_once_without_raising(self):
        with tempfile.TemporaryDirectory() as tmp_dir:
            log_path = os.path.join(tmp_dir, "missing", "events.jsonl")
            logger = EventLogger(AppConfig(event_log_file=log_path, enable_event_logging=True))
            with patch("builtins.print") as fake_print:
                logger.log("a")
                logger.log("b")
        self.assertEqual(fake_print.call_count, 1)


if __name__ == "__main__":
    unittest.main()
