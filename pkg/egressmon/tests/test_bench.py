# Copyright 2024-2025 egressmon authors, MIT license
"""
Tests for bench module.

The full benchmark reproductions only run with the -a flag.
"""

import csv
import io
import sys
import unittest

from egressmon.bench import (BenchConfig, BenchRow, bench_row,
                             design_space_problems, emit_report, run_bench,
                             run_cross_image_bench, run_estimator_bench,
                             run_legitimacy_bench, run_linguistic_bench,
                             run_text_bench, run_timing_bench)
from egressmon.payload import ConfigError


def _rows(rows):
    return {(r.channel, r.setting): r for r in rows}


class TestCase(unittest.TestCase):

    def setUp(self):
        args = sys.argv[1:]
        self.verbose = '-v' in args
        self.all_tests = '-a' in args

    def test_config(self):
        with self.assertRaises(ConfigError):
            BenchConfig(trials=0)
        with self.assertRaises(ConfigError):
            BenchConfig(posture='strict')
        cfg = BenchConfig(seed=3)
        self.assertEqual(cfg.n_trials(), 20)
        self.assertEqual(cfg.n_trials(40), 40)
        self.assertEqual(list(cfg.secrets('x').bits(16)),
                         list(BenchConfig(seed=3).secrets('x').bits(16)))
        self.assertNotEqual(list(cfg.secrets('x').bits(64)),
                            list(cfg.secrets('y').bits(64)))
        with self.assertRaises(ConfigError):
            run_bench('throughput')
        with self.assertRaises(ConfigError):
            run_text_bench(BenchConfig(channels=['morse']))

    def test_bench_row(self):
        x = [[0, 1, 1, 0]] * 50
        row = bench_row('c', 's', x, x)
        self.assertEqual(row.accuracy, 100.)
        self.assertLess(row.reduction, 1.)
        self.assertEqual(row.n, 200)
        self.assertAlmostEqual(row.accuracy_ci[1], 100.)
        self.assertLess(row.accuracy_ci[0], 100.)
        row = bench_row('c', 's', x, [[0, 0, 0, 0]] * 50, detected=0.5)
        self.assertEqual(row.reduction, 100.)
        self.assertEqual(row.accuracy, 50.)
        self.assertEqual(row.detected, 50.)

    def test_text_enforce(self):
        cfg = BenchConfig(trials=2, posture='enforce',
                          channels=('zero_width_tag', 'base64_blob'))
        rows = run_text_bench(cfg)
        self.assertEqual(len(rows), 2)
        for row in rows:
            self.assertEqual(row.reduction, 100., msg=row.channel)
            self.assertEqual(row.detected, 100., msg=row.channel)

    def test_text_default_posture(self):
        cfg = BenchConfig(trials=2,
                          channels=('whitespace_count', 'timing_interval'))
        with self.assertLogs('egressmon.bench', 'INFO'):
            rows = run_text_bench(cfg)
        self.assertEqual([r.channel for r in rows], ['whitespace_count'])
        self.assertEqual(rows[0].accuracy, 100.)
        self.assertEqual(rows[0].detected, 100.)

    def test_linguistic_quick(self):
        cfg = BenchConfig(trials=3, channels=('contraction',))
        rows = _rows(run_linguistic_bench(cfg))
        self.assertEqual(rows[('contraction', 'undefended')].accuracy, 100.)
        row = rows[('contraction', 'semantic')]
        self.assertEqual(row.reduction, 100.)
        self.assertEqual(row.extra['idempotent'], 'yes')

    def test_timing_quick(self):
        rows = _rows(run_timing_bench(BenchConfig(trials=2, bits=16)))
        self.assertEqual(rows[('timing_interval', 'none')].accuracy, 100.)
        self.assertEqual(
            rows[('timing_interval', 'paced_release')].reduction, 100.)

    def test_cross_image_quick(self):
        rows = _rows(run_cross_image_bench(BenchConfig(trials=1, bits=8)))
        self.assertEqual(len(rows), 6)
        self.assertEqual(rows[('mean_luma', 'undefended')].accuracy, 100.)
        self.assertEqual(rows[('sequence_perm', 'undefended')].accuracy, 100.)
        self.assertEqual(rows[('sequence_perm', 'sha256 order')].reduction,
                         100.)

    def test_legitimacy(self):
        rows = run_legitimacy_bench()
        self.assertEqual(len(rows), 6)
        exempt = [r.setting for r in rows if r.extra['outcome'] == 'exempt']
        self.assertEqual(exempt, ['valid, authorized'])
        self.assertEqual({r.extra['no_verifier'] for r in rows},
                         {'scrambled'})

    def test_estimator(self):
        row, = run_estimator_bench(resamples=500)
        self.assertGreater(row.extra['accuracy_proxy_bits'], 0.)
        self.assertLessEqual(row.extra['miller_madow_bits'], 0.001)

    def test_design_space_problems(self):
        def row(setting, acc0, acc1, delta):
            return [BenchRow('lsb_bit%d' % b, setting, accuracy=acc,
                             extra={'mean_delta': delta})
                    for b, acc in ((0, acc0), (1, acc1))]
        rows = (row('rgb_levels:64', 50., 51., 1.) +
                row('rgb_levels:32', 50., 50., 2.) +
                row('cmyk_levels:256', 90., 99., 0.5))
        self.assertEqual(design_space_problems(rows), [])
        rows += row('k_only_bits:2', 49., 50., 0.8)
        self.assertEqual(len(design_space_problems(rows)), 1)

    def test_emit_report(self):
        rows = [bench_row('zero_width_tag', 'enforce', [[1, 0]], [[0, 0]],
                          detected=1.),
                BenchRow('legitimacy', 'absent',
                         extra={'outcome': 'scrambled'})]
        conf = {'bench': 'text', 'seed': 0}
        text = emit_report(rows, conf=conf)
        lines = text.splitlines()
        self.assertEqual(lines[0], '# egressmon bench: bench=text seed=0')
        self.assertIn('over 1 rows', lines[1])
        self.assertTrue(lines[2].startswith('channel'))
        self.assertIn('outcome', lines[2])
        self.assertIn('--', lines[4])
        data = emit_report(rows, 'csv')
        table = list(csv.reader(io.StringIO(data)))
        self.assertEqual(len(table), 3)
        self.assertEqual(table[1][2], '100.0000')
        self.assertEqual(table[2][-1], 'scrambled')
        self.assertEqual(table[2][2], '')
        with self.assertRaises(ValueError):
            emit_report(rows, 'xml')

    def test_x_text_bench_full(self):
        if not self.all_tests:
            raise unittest.SkipTest('save time')
        rows = _rows(run_bench('text', BenchConfig(posture='enforce')))
        self.assertEqual(len(rows), 10)
        for row in rows.values():
            self.assertEqual(row.reduction, 100., msg=row.channel)
        rows = _rows(run_bench('text'))
        self.assertNotIn(('timing_interval', 'default'), rows)
        for cid in ('zero_width_tag', 'variation_selector', 'bidi_control',
                    'homoglyph', 'json_key_order'):
            self.assertEqual(rows[(cid, 'default')].reduction, 100., msg=cid)
        for cid in ('whitespace_count', 'punctuation_count', 'synonym_1bit',
                    'base64_blob'):
            row = rows[(cid, 'default')]
            self.assertLessEqual(row.reduction, 2., msg=cid)
            self.assertEqual(row.detected, 100., msg=cid)

    def test_x_linguistic_bench_full(self):
        if not self.all_tests:
            raise unittest.SkipTest('save time')
        rows = run_bench('linguistic')
        for row in rows:
            if row.setting == 'undefended':
                self.assertLessEqual(row.reduction, 0.5, msg=row.channel)
            else:
                self.assertEqual(row.reduction, 100., msg=row.channel)
                self.assertLess(abs(row.accuracy - 51.6), 3.,
                                msg=row.channel)
                self.assertEqual(row.extra['idempotent'], 'yes')

    def test_x_image_bench_full(self):
        if not self.all_tests:
            raise unittest.SkipTest('save time')
        rows = _rows(run_bench('image'))
        for bit in (0, 1):
            self.assertEqual(rows[('lsb_bit%d' % bit, 'none')].accuracy, 100.)
            self.assertLess(
                abs(rows[('lsb_bit%d' % bit, 'rgb 64')].accuracy - 50.), 3.)
        self.assertEqual(rows[('lsb_bit1', 'rgb 128')].accuracy, 100.)
        self.assertLess(abs(rows[('lsb_bit0', 'rgb 128')].accuracy - 50.), 3.)

    def test_x_design_space_full(self):
        if not self.all_tests:
            raise unittest.SkipTest('save time')
        rows = run_bench('design-space')
        self.assertEqual(design_space_problems(rows), [])
        for row in rows:
            if row.setting == 'rgb_levels:64':
                self.assertEqual(row.extra['max_delta'], 2)
                self.assertLess(abs(row.extra['mean_delta'] - 1.), 0.05)
            if row.extra['predicted'] is not None:
                self.assertLess(abs(row.accuracy - row.extra['predicted']),
                                2., msg=row.setting)

    def test_x_cross_image_full(self):
        if not self.all_tests:
            raise unittest.SkipTest('save time')
        rows = _rows(run_bench('cross-image'))
        row = rows[('mean_luma', 'B=2')]
        self.assertGreater(row.accuracy, 95.)
        self.assertLessEqual(row.extra['buckets'], 2)
        self.assertEqual(rows[('mean_luma', 'B=2 one bucket')].reduction,
                         100.)
        self.assertEqual(rows[('sequence_perm', 'sha256 order')].reduction,
                         100.)

    def test_x_audio_full(self):
        if not self.all_tests:
            raise unittest.SkipTest('save time')
        rows = _rows(run_bench('audio'))
        for cid in ('ultrasonic_bfsk', 'subperceptual_tone'):
            self.assertGreaterEqual(rows[(cid, 'none')].accuracy, 99.)
            row = rows[(cid, 'scrambled')]
            self.assertLess(abs(row.accuracy - 50.), 5., msg=cid)
            self.assertEqual(row.reduction, 100., msg=cid)

    def test_x_timing_full(self):
        if not self.all_tests:
            raise unittest.SkipTest('save time')
        rows = _rows(run_bench('timing'))
        self.assertEqual(rows[('timing_interval', 'none')].accuracy, 100.)
        reduction = rows[('timing_interval', 'quantize_jitter')].reduction
        self.assertTrue(5. <= reduction <= 95., msg=reduction)
        self.assertEqual(
            rows[('timing_interval', 'paced_release')].reduction, 100.)


if __name__ == '__main__':
    unittest.main()
