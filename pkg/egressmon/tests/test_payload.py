# Copyright 2024-2025 egressmon authors, MIT license
"""
Tests for payload module.
"""

import unittest

from egressmon.payload import (Action, Disposition, Finding, MediaKind,
                               MediaPayload, Posture, RejectedInput,
                               StageVerdict, check_sink, decode_text,
                               merge_verdicts)

E = Posture.ENFORCE
A = Posture.AUDIT


class TestCase(unittest.TestCase):

    def test_verdict_shape(self):
        with self.assertRaises(ValueError):
            StageVerdict(Action.REWRITE)
        with self.assertRaises(ValueError):
            StageVerdict(Action.PASS, rewritten_text='x')
        with self.assertRaises(ValueError):
            StageVerdict(Action.DELAY)
        with self.assertRaises(ValueError):
            StageVerdict.delay(-5)
        with self.assertRaises(ValueError):
            Finding('entropy', 'base64-blob', -1.)

    def test_merge_rewrites_and_delays(self):
        verdicts = [(StageVerdict.rewrite('b'), E),
                    (StageVerdict.delay(100), E),
                    (StageVerdict.rewrite('c'), E),
                    (StageVerdict.delay(50), E)]
        outcome = merge_verdicts('a', verdicts)
        self.assertEqual(outcome.disposition, Disposition.DELIVERED)
        self.assertEqual(outcome.final_text, 'c')
        self.assertEqual(outcome.total_delay_ms, 150)

    def test_merge_cancel_is_sticky(self):
        f1 = Finding('taint', 'taint-hit')
        f2 = Finding('noise', 'late')
        verdicts = [(StageVerdict.cancel([f1]), E),
                    (StageVerdict.rewrite('x', [f2]), E)]
        outcome = merge_verdicts('a', verdicts)
        self.assertFalse(outcome.delivered)
        self.assertIsNone(outcome.final_text)
        self.assertEqual(outcome.findings, (f1,))

    def test_merge_audit_records_would(self):
        f = Finding('entropy', 'base64-blob', 216.)
        verdicts = [(StageVerdict.cancel([f]).with_stage('entropy'), A),
                    (StageVerdict.delay(300).with_stage('timing'), A)]
        outcome = merge_verdicts('hello', verdicts)
        self.assertTrue(outcome.delivered)
        self.assertEqual(outcome.final_text, 'hello')
        self.assertEqual(outcome.total_delay_ms, 0)
        self.assertEqual([x.would for x in outcome.findings],
                         ['cancel', 'delay'])
        self.assertEqual(outcome.findings[0].estimated_bits, 216.)
        self.assertIn('delay_ms=300', outcome.findings[1].detail)

    def test_sink_and_text_validation(self):
        self.assertEqual(check_sink('mail:ops'), 'mail:ops')
        check_sink('s' * 256)
        for bad in ('', 's' * 257, None):
            with self.assertRaises(RejectedInput):
                check_sink(bad)
        self.assertEqual(decode_text(b'caf\xc3\xa9'), 'caf\xe9')
        with self.assertRaises(RejectedInput):
            decode_text(b'\xff\xfe')
        with self.assertRaises(RejectedInput):
            decode_text('a\ud800b')

    def test_media_payload(self):
        p = MediaPayload('image', b'\x89PNG')
        self.assertEqual(p.kind, MediaKind.IMAGE)
        self.assertEqual(MediaKind.parse(2), MediaKind.AUDIO)
        with self.assertRaises(ValueError):
            MediaPayload('video', b'x')
        with self.assertRaises(ValueError):
            MediaPayload(MediaKind.AUDIO, b'')


if __name__ == '__main__':
    unittest.main()
