# Copyright 2024-2025 egressmon authors, MIT license
"""
Tests for audio module.
"""

import unittest

import numpy as np

from egressmon.audio import (AudioClip, ScramblerBand, dump_spectrum,
                             read_wav, scramble_audio, scramble_audio_bytes,
                             spectrum_db, synth_chord, synth_tone,
                             tone_amplitude, write_wav)
from egressmon.tests.util import tempdir

FS = 48000


class TestCase(unittest.TestCase):

    def test_ultrasonic_tone_removed(self):
        cover = synth_chord()
        x = cover.samples + synth_tone(21500, 0.05)
        clip, stats = scramble_audio(AudioClip(x, FS))
        self.assertGreater(stats['out_of_band_bins'], 0)
        self.assertAlmostEqual(tone_amplitude(x, 21500, FS), 0.05, 3)
        self.assertLess(tone_amplitude(clip.samples, 21500, FS), 1e-4)
        self.assertAlmostEqual(tone_amplitude(clip.samples, 440, FS), 0.2, 2)

    def test_subperceptual_tone_removed(self):
        cover = synth_chord()
        quiet = 0.2 * 10 ** (-60 / 20.)
        x = cover.samples + synth_tone(5000, quiet)
        self.assertLess(abs(tone_amplitude(x, 5000, FS) / quiet - 1), 0.1)
        clip, stats = scramble_audio(AudioClip(x, FS))
        self.assertGreater(stats['sub_floor_bins'], 0)
        self.assertLess(tone_amplitude(clip.samples, 5000, FS), 0.1 * quiet)
        # a tone above the floor survives
        loud = 0.2 * 10 ** (-30 / 20.)
        x = cover.samples + synth_tone(5000, loud)
        clip, _ = scramble_audio(AudioClip(x, FS))
        self.assertLess(abs(tone_amplitude(clip.samples, 5000, FS) / loud - 1),
                        0.05)

    def test_stereo_and_long_clips(self):
        x = np.column_stack((synth_chord().samples,
                             synth_tone(1000, 0.3)))
        clip, _ = scramble_audio(AudioClip(x, FS))
        self.assertEqual(clip.samples.shape, x.shape)
        fs = 8000
        x = synth_chord(duration=70, sample_rate=fs).samples
        clip, _ = scramble_audio(AudioClip(x, fs), ScramblerBand(20, 3900))
        self.assertEqual(len(clip), len(x))
        rms = np.sqrt(np.mean((clip.samples - x) ** 2) / np.mean(x ** 2))
        self.assertLess(rms, 0.02)

    def test_band(self):
        band = ScramblerBand.parse('100:8000', -40)
        self.assertEqual((band.low_hz, band.high_hz, band.floor_db),
                         (100., 8000., -40))
        with self.assertRaises(ValueError):
            ScramblerBand.parse('8000:100')
        with self.assertRaises(ValueError):
            ScramblerBand(floor_db=0)
        with self.assertRaises(ValueError):
            AudioClip(np.zeros(0))

    def test_wav(self):
        clip = synth_chord(duration=0.2)
        data = write_wav(clip)
        clip2 = read_wav(data)
        self.assertEqual(clip2.sample_rate, FS)
        np.testing.assert_allclose(clip2.samples, clip.samples, atol=1e-4)
        clip3 = read_wav(scramble_audio_bytes(data))
        self.assertEqual(len(clip3), len(clip))

    def test_spectrum(self):
        freqs, db = spectrum_db(synth_chord())
        self.assertEqual(db.max(), 0.)
        peak = freqs[np.argmax(db)]
        self.assertTrue(np.isclose((440., 554., 659.), peak).any())
        _, db = spectrum_db(AudioClip(np.zeros(100)))
        self.assertTrue(np.all(np.isneginf(db)))
        with tempdir():
            dump_spectrum(synth_chord(duration=0.1), 'spec.tsv')
            data = np.loadtxt('spec.tsv')
        self.assertEqual(data.shape[1], 2)
        self.assertEqual(data[:, 1].max(), 0.)


if __name__ == '__main__':
    unittest.main()
