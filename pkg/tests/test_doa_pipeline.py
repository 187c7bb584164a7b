import unittest

import numpy as np

from doa_pipeline import analysis_blocks, localize_signal, parse_methods
from experiments import angular_error, probability_of_detection
from room_sim import SceneSpec, simulate_scene
from sh_basis import build_dictionary
from sh_encoder import ArrayGeometry
from shd_config import AppConfig, ShdConfigError
from stft_analysis import MultichannelSignal


class ParseMethodsTests(unittest.TestCase):
    def test_comma_lists_and_duplicates(self):
        self.assertEqual(parse_methods(["shd-lra,shd-music", "SHD-LRA"]), ["shd-lra", "shd-music"])
        self.assertEqual(parse_methods(["shd-music"]), ["shd-music"])

    def test_unknown_or_empty(self):
        with self.assertRaises(ShdConfigError):
            parse_methods(["shd-lra,beamforming"])
        with self.assertRaises(ShdConfigError):
            parse_methods([" , "])


class LocalizeSignalTests(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.config = AppConfig(enable_event_logging=False, jobs=2)
        cls.geom = ArrayGeometry.default()
        cls.dictionary = build_dictionary(5.0, 5.0, 3)
        scene = SceneSpec(
            room_dims_m=(10.0, 8.0, 6.0),
            t60_s=0.0,
            array_center_m=(4.0, 3.5, 2.0),
            source_elev_deg=70.0,
            source_azim_deg=120.0,
            snr_db=40.0,
            seed=5,
            duration_s=1.5,
        )
        cls.simulation = simulate_scene(scene, cls.geom, cls.config)

    def test_analysis_blocks_layout(self):
        matrices = analysis_blocks(self.simulation.signal, self.geom, self.config)
        self.assertGreater(len(matrices), 0)
        for matrix in matrices:
            self.assertEqual(matrix.entries.shape[0], 16)
            self.assertEqual(matrix.entries.shape[1], matrix.n_frames * 97)
            self.assertAlmostEqual(matrix.time_s, matrix.block_index * 0.3)

    def test_results_sorted_by_block_then_method(self):
        results = localize_signal(
            self.simulation.signal, self.geom, self.dictionary, self.config, methods=["shd-lra", "shd-music"]
        )
        keys = [(item.block_index, item.method) for item in results]
        expected = sorted(keys, key=lambda key: (key[0], 0 if key[1] == "shd-lra" else 1))
        self.assertEqual(keys, expected)
        self.assertEqual(
            sum(1 for item in results if item.method == "shd-lra"),
            sum(1 for item in results if item.method == "shd-music"),
        )
        row = results[0].to_row()
        self.assertEqual(row["method"], "shd-lra")
        self.assertEqual(row["time_s"], f"{results[0].time_s:.3f}")

    def test_direct_path_scene_is_localized(self):
        results = localize_signal(self.simulation.signal, self.geom, self.dictionary, self.config)
        errors = [angular_error(item.estimate.direction, self.simulation.truth) for item in results]
        self.assertGreaterEqual(probability_of_detection(errors), 0.8)

    def test_parallel_matches_sequential(self):
        sequential = localize_signal(self.simulation.signal, self.geom, self.dictionary, self.config, jobs=1)
        parallel = localize_signal(self.simulation.signal, self.geom, self.dictionary, self.config, jobs=3)
        self.assertEqual(
            [item.estimate.grid_index for item in sequential], [item.estimate.grid_index for item in parallel]
        )

    def test_pinv_encoder(self):
        results = localize_signal(
            self.simulation.signal, self.geom, self.dictionary, self.config, encoder="pinv"
        )
        self.assertTrue(results)
        self.assertTrue(all(np.isfinite(item.estimate.residual) for item in results))

    def test_invalid_requests(self):
        with self.assertRaises(ShdConfigError):
            localize_signal(self.simulation.signal, self.geom, build_dictionary(90.0, 90.0, 2), self.config)
        with self.assertRaises(ShdConfigError):
            localize_signal(self.simulation.signal, self.geom, self.dictionary, self.config, encoder="lstsq")
        four_channels = MultichannelSignal(self.simulation.signal.samples[:4], 8000.0)
        with self.assertRaises(ShdConfigError):
            localize_signal(four_channels, self.geom, self.dictionary, self.config)


if __name__ == "__main__":
    unittest.main()
