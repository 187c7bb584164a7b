import os
import tempfile
import unittest

import numpy as np

import stft_analysis
from shd_config import ShdConfigError, ShdIOError
from stft_analysis import (
    MultichannelSignal,
    block_frame_ranges,
    read_wav,
    select_band,
    stft_forward,
    trim_silence,
    write_wav,
)

FS = 8000.0


def noise_signal(channels=2, seconds=1.0, seed=0):
    rng = np.random.default_rng(seed)
    return MultichannelSignal(rng.standard_normal((channels, int(seconds * FS))), FS)


class StftForwardTests(unittest.TestCase):
    def test_framing_parameters(self):
        spec = stft_forward(noise_signal(), 512, 0.5, 512)
        self.assertEqual(spec.hop, 256)
        self.assertEqual(spec.bins.shape[1], 257)
        self.assertAlmostEqual(spec.freqs[1] - spec.freqs[0], 15.625)
        self.assertEqual(spec.n_frames, (8000 - 512) // 256 + 1)

    def test_tone_on_bin_center(self):
        t = np.arange(4096) / FS
        amplitude = 0.7
        tone = amplitude * np.cos(2.0 * np.pi * 1000.0 * t)
        spec = stft_forward(MultichannelSignal(tone, FS))
        magnitudes = np.abs(spec.bins[0, :, 3])
        self.assertEqual(int(np.argmax(magnitudes)), 64)
        self.assertAlmostEqual(magnitudes[64] / (amplitude * 0.54 * 512 / 2.0), 1.0, places=9)

    def test_zero_signal(self):
        spec = stft_forward(MultichannelSignal(np.zeros((3, 2048)), FS))
        self.assertFalse(np.any(spec.bins))

    def test_linearity(self):
        x = noise_signal(seed=1)
        y = noise_signal(seed=2)
        combined = MultichannelSignal(2.0 * x.samples - 0.5 * y.samples, FS)
        expected = 2.0 * stft_forward(x).bins - 0.5 * stft_forward(y).bins
        np.testing.assert_allclose(stft_forward(combined).bins, expected, rtol=1e-10, atol=1e-10)

    def test_parseval_per_frame(self):
        sig = noise_signal(channels=1, seconds=0.2, seed=4)
        spec = stft_forward(sig)
        window = np.hamming(513)[:-1]
        frame = sig.samples[0, 256:768] * window
        bins = spec.bins[0, :, 1]
        one_sided = abs(bins[0]) ** 2 + 2.0 * np.sum(np.abs(bins[1:-1]) ** 2) + abs(bins[-1]) ** 2
        self.assertAlmostEqual(one_sided / (512.0 * np.sum(frame**2)), 1.0, places=9)

    def test_signal_shorter_than_window(self):
        with self.assertRaises(ShdConfigError):
            stft_forward(MultichannelSignal(np.zeros((1, 100)), FS))

    def test_invalid_parameters(self):
        with self.assertRaises(ShdConfigError):
            stft_forward(noise_signal(), window_size=1024, fft_size=512)
        with self.assertRaises(ShdConfigError):
            stft_forward(noise_signal(), overlap=1.0)


class SelectBandTests(unittest.TestCase):
    def setUp(self):
        self.spec = stft_forward(noise_signal())

    def test_evaluation_band(self):
        band = select_band(self.spec, 1000.0, 2500.0)
        self.assertEqual(band.bins.shape[1], 97)
        self.assertEqual(band.freqs[0], 1000.0)
        self.assertEqual(band.freqs[-1], 2500.0)

    def test_full_band_is_identity(self):
        band = select_band(self.spec, 0.0, 4000.0)
        np.testing.assert_array_equal(band.bins, self.spec.bins)

    def test_invalid_bands(self):
        with self.assertRaises(ShdConfigError):
            select_band(self.spec, 3000.0, 2000.0)
        with self.assertRaises(ShdConfigError):
            select_band(self.spec, 1000.0, 5000.0)
        with self.assertRaises(ShdConfigError):
            select_band(self.spec, 1001.0, 1010.0)


class BlockFramingTests(unittest.TestCase):
    def test_frames_fully_inside_blocks(self):
        spec = stft_forward(noise_signal(seconds=3.0))
        blocks = block_frame_ranges(spec, 0.3)
        self.assertEqual(len(blocks), 10)
        self.assertEqual((blocks[0].start_frame, blocks[0].stop_frame), (0, 8))
        self.assertEqual((blocks[1].start_frame, blocks[1].stop_frame), (10, 17))
        self.assertAlmostEqual(blocks[1].time_s, 0.3)
        for block in blocks:
            begin = int(round(block.time_s * FS))
            self.assertGreaterEqual(block.start_frame * 256, begin)
            self.assertLessEqual((block.stop_frame - 1) * 256 + 512, begin + 2400)

    def test_frames_slice_keeps_offset(self):
        spec = stft_forward(noise_signal(seconds=1.0))
        part = spec.frames(10, 17)
        self.assertEqual(part.n_frames, 7)
        self.assertAlmostEqual(part.frame_times[0], 10 * 256 / FS)

    def test_block_shorter_than_window(self):
        spec = stft_forward(noise_signal())
        with self.assertRaises(ShdConfigError):
            block_frame_ranges(spec, 0.01)


class TrimSilenceTests(unittest.TestCase):
    def test_removes_quiet_segments(self):
        loud = np.ones(1600)
        quiet = 1e-3 * np.ones(1600)
        trimmed = trim_silence(np.concatenate([loud, quiet, loud]), FS, threshold_db=-35.0)
        self.assertEqual(trimmed.size, 3200)

    def test_multichannel_uses_joint_energy(self):
        data = np.zeros((2, 3200))
        data[1, :1600] = 1.0
        self.assertEqual(trim_silence(data, FS).shape, (2, 1600))

    def test_all_zero_signal_trims_to_empty(self):
        self.assertEqual(trim_silence(np.zeros(800), FS).size, 0)


@unittest.skipIf(stft_analysis.sf is None, "soundfile no instalado")
class WavTests(unittest.TestCase):
    def test_write_then_read_keeps_channels(self):
        sig = MultichannelSignal(0.1 * noise_signal(channels=4, seconds=0.1).samples, FS)
        with tempfile.TemporaryDirectory() as tmp_dir:
            path = os.path.join(tmp_dir, "x.wav")
            write_wav(path, sig)
            loaded = read_wav(path)
        self.assertEqual(loaded.n_channels, 4)
        self.assertEqual(loaded.sample_rate, FS)
        np.testing.assert_allclose(loaded.samples, sig.samples, atol=1e-6)

    def test_unreadable_files(self):
        with tempfile.TemporaryDirectory() as tmp_dir:
            with self.assertRaises(ShdIOError):
                read_wav(os.path.join(tmp_dir, "missing.wav"))
            bogus = os.path.join(tmp_dir, "bogus.wav")
            with open(bogus, "w", encoding="utf-8") as file:
                file.write("no es audio")
            with self.assertRaises(ShdIOError):
                read_wav(bogus)


if __name__ == "__main__":
    unittest.main()
