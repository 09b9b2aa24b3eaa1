# Copyright 2024-2025 egressmon authors, MIT license
"""
Tests for image module.
"""

import unittest

import numpy as np

from egressmon.image import (LumaBucketConfig, QuantizerSpec, as_rgb,
                             bucket_mean_luma, cmyk_to_rgb, distortion,
                             generate_probe_cover, mean_luma,
                             predict_recovery, quantize_variant, read_image,
                             requantize_rgb, rgb_to_cmyk, scramble_image,
                             scramble_image_bytes, shift_mean_luma,
                             write_image)


def _noise(seed=0, size=32, low=0, high=256):
    return np.random.default_rng(seed).integers(low, high, (size, size, 3),
                                                dtype=np.uint8)


class TestCase(unittest.TestCase):

    def test_requantize_levels(self):
        img = _noise()
        out = requantize_rgb(img, 64)
        self.assertLessEqual(len(np.unique(out)), 64)
        self.assertLessEqual(distortion(img, out)[0], 2)
        np.testing.assert_array_equal(requantize_rgb(out, 64), out)
        np.testing.assert_array_equal(requantize_rgb(img, 256), img)
        # endpoints are kept
        edge = np.array([[[0, 255, 128]]], dtype=np.uint8)
        np.testing.assert_array_equal(requantize_rgb(edge, 2),
                                      [[[0, 255, 255]]])
        with self.assertRaises(ValueError):
            requantize_rgb(img, 1)
        with self.assertRaises(ValueError):
            as_rgb(np.zeros((4, 4)))

    def test_requantize_lsb_planes(self):
        """128 levels keep bit 1 and randomize bit 0, 64 levels both"""
        rng = np.random.default_rng(1)
        img = _noise(2, 64, 64, 192)
        bits = rng.integers(0, 2, img.shape, dtype=np.uint8)
        for plane in (0, 1):
            marked = (img & ~np.uint8(1 << plane)) | (bits << plane)
            out = requantize_rgb(marked, 128)
            acc = np.mean(((out >> plane) & 1) == bits)
            if plane == 1:
                self.assertEqual(acc, 1.)
            else:
                self.assertLess(abs(acc - 0.5), 0.05)
            out = requantize_rgb(marked, 64)
            acc = np.mean(((out >> plane) & 1) == bits)
            self.assertLess(abs(acc - 0.5), 0.05)

    def test_quantizer_spec(self):
        spec = QuantizerSpec.parse('cmyk_random_bits:4:8', seed=3)
        self.assertEqual((spec.lo, spec.hi, spec.seed), (4, 8, 3))
        self.assertEqual(spec.label, 'cmyk_random_bits:4:8')
        self.assertEqual(QuantizerSpec.parse('rgb7_sprinkle6:0.25').label,
                         'rgb7_sprinkle6:0.25')
        self.assertEqual(QuantizerSpec.parse('rgb_levels:64').levels, 64)
        with self.assertRaises(ValueError):
            QuantizerSpec.parse('rgb_dither')
        with self.assertRaises(ValueError):
            QuantizerSpec('k_only_bits', bits=9)

    def test_quantize_variants(self):
        cover = generate_probe_cover()
        self.assertEqual(cover.shape, (128, 128, 3))
        out = quantize_variant(cover, QuantizerSpec.parse('rgb_levels:64'))
        mx, mean = distortion(cover, out)
        self.assertEqual(mx, 2)
        self.assertLess(abs(mean - 1.), 0.05)
        # saturated pixels are fixed points of the CMYK roundtrip
        out, mask = quantize_variant(
            cover, QuantizerSpec.parse('cmyk_levels:4'), return_mask=True)
        np.testing.assert_array_equal(out[~mask], cover[~mask])
        self.assertTrue(mask.any())
        out = quantize_variant(cover, QuantizerSpec.parse('cmyk_levels:256'))
        self.assertLessEqual(distortion(cover, out)[0], 2)
        out, channel = quantize_variant(
            cover, QuantizerSpec('rgb_one_of_three_7bit'), return_mask=True)
        for c in range(3):
            other = [k for k in range(3) if k != c]
            sel = channel == c
            np.testing.assert_array_equal(out[sel][:, other],
                                          cover[sel][:, other])
        out, sprinkle = quantize_variant(
            cover, QuantizerSpec('rgb7_sprinkle6', p=0.5, seed=1),
            return_mask=True)
        self.assertLess(abs(sprinkle.mean() - 0.5), 0.02)
        np.testing.assert_array_equal(out[~sprinkle],
                                      requantize_rgb(cover, 128)[~sprinkle])
        a = quantize_variant(cover, QuantizerSpec('cmyk_random_bits', seed=5))
        b = quantize_variant(cover, QuantizerSpec('cmyk_random_bits', seed=5))
        np.testing.assert_array_equal(a, b)

    def test_predict_recovery(self):
        self.assertEqual(predict_recovery(0.), 0.5)
        self.assertEqual(predict_recovery(1.), 1.)
        self.assertAlmostEqual(predict_recovery(2 / 3.), 5 / 6.)
        with self.assertRaises(ValueError):
            predict_recovery(1.5)

    def test_luma_buckets(self):
        cfg = LumaBucketConfig(buckets=2)
        self.assertEqual(cfg.capacity_bits, 1.)
        for low, high in ((0, 100), (60, 200), (150, 256)):
            img = _noise(low, 32, low, high)
            out, residual = bucket_mean_luma(img, cfg, return_residual=True)
            self.assertLessEqual(abs(residual), cfg.tolerance)
            center = cfg.centers()[int(mean_luma(img) // 127.5)]
            self.assertLessEqual(abs(mean_luma(out) - center), 1.)
        grey = np.full((8, 8, 3), 128, dtype=np.uint8)
        out = bucket_mean_luma(grey, LumaBucketConfig())
        self.assertLessEqual(abs(mean_luma(out) - 143.4375), 1.)
        with self.assertRaises(ValueError):
            LumaBucketConfig(buckets=1)

    def test_scramble_buckets_after_requantizing(self):
        """Every image of one bucket leaves at its center"""
        center = LumaBucketConfig(8).centers()[4]
        self.assertEqual(center, 143.4375)
        means = []
        for value in range(128, 160):
            img = np.full((16, 16, 3), value, dtype=np.uint8)
            means.append(mean_luma(scramble_image(img, 64, luma_buckets=8)))
            out, _ = read_image(scramble_image_bytes(write_image(img),
                                                     luma_buckets=8))
            self.assertLessEqual(abs(mean_luma(out) - center), 1.)
        self.assertLessEqual(max(abs(m - center) for m in means), 1.)
        img = _noise(5, 32, 120, 170)
        for variant in (None, 'cmyk_levels:64'):
            out = scramble_image(img, luma_buckets=8, variant=variant)
            self.assertLessEqual(abs(mean_luma(out) - center), 1.)

    def test_cmyk_random_bits_per_component(self):
        img = _noise(6, 16, 1, 255)
        spec = QuantizerSpec('cmyk_random_bits', lo=1, hi=8, seed=7)
        out = quantize_variant(img, spec)
        depth = np.random.default_rng(7).integers(1, 9, size=(16, 16, 4))
        n = 2. ** depth - 1
        expected = cmyk_to_rgb(np.rint(rgb_to_cmyk(img) * n) / n)
        fixed = (img.max(axis=2) == 255) | (img.max(axis=2) == 0)
        expected[fixed] = img[fixed]
        np.testing.assert_array_equal(out, expected)
        # the four components of a pixel do not share one depth
        self.assertTrue(np.any(depth.min(axis=2) != depth.max(axis=2)))

    def test_cmyk_fixed_points(self):
        px = np.array([[[255, 10, 10], [0, 0, 0], [255, 255, 255]]],
                      dtype=np.uint8)
        for label in ('cmyk_levels:4', 'cmyk_levels:64', 'cmyk_levels:256'):
            out = quantize_variant(px, QuantizerSpec.parse(label))
            np.testing.assert_array_equal(out, px, err_msg=label)

    def test_shift_mean_luma_clamps(self):
        white = np.full((8, 8, 3), 250, dtype=np.uint8)
        out, residual = shift_mean_luma(white, 255.)
        self.assertEqual(out.max(), 255)
        self.assertLess(abs(residual), 1.)

    def test_codec(self):
        img = _noise(4)
        data = write_image(img)
        out, fmt = read_image(data)
        self.assertEqual(fmt, 'PNG')
        np.testing.assert_array_equal(out, img)
        ppm = write_image(img, format='PPM')
        self.assertTrue(ppm.startswith(b'P6'))
        scrambled = scramble_image_bytes(ppm)
        out, fmt = read_image(scrambled)
        self.assertEqual(fmt, 'PPM')
        np.testing.assert_array_equal(out, requantize_rgb(img, 64))


if __name__ == '__main__':
    unittest.main()
