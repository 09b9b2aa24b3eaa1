# Copyright 2024-2025 egressmon authors, MIT license
"""
Tests for mediator module.
"""

import random
import threading
import time
import unittest

import numpy as np

from egressmon.audio import read_wav, synth_chord, write_wav
from egressmon.channels import (decode_subperceptual, decode_ultrasonic_bfsk,
                                embed_lsb, encode_subperceptual,
                                encode_ultrasonic_bfsk, extract_lsb)
from egressmon.image import read_image, requantize_rgb, write_image
from egressmon.mediator import (Mediator, SeamSet, StageRegistration,
                                build_mediator, default_postures)
from egressmon.payload import (ConfigError, Disposition, MediaCancelled,
                               MediaPayload, Posture, RejectedInput,
                               StageVerdict)
from egressmon.stages import LLMScrambler
from egressmon.util import SimClock, sha256

B64 = 'QUJDREVGR0hJSktMTU5PUFFSU1RVVldYWVo0NTY3ODkw'


def _png(seed=0, size=16):
    img = np.random.default_rng(seed).integers(0, 256, (size, size, 3),
                                               dtype=np.uint8)
    return write_image(img)


def _monitor(conf=None, seams=None):
    return build_mediator(conf, seams, SimClock(), random.Random(0))


class TestCase(unittest.TestCase):

    def test_default_posture(self):
        m = _monitor()
        outcome = m.submit('chat', 'Hi\u200b there, see %s' % B64)
        self.assertTrue(outcome.delivered)
        # lossless stages enforce, everything else only audits
        self.assertEqual(outcome.final_text, 'Hi there, see %s' % B64)
        self.assertEqual(outcome.total_delay_ms, 0)
        classes = {f.channel_class for f in outcome.findings}
        self.assertIn('zero-width', classes)
        self.assertIn('base64-blob', classes)
        would = {f.stage: f.would for f in outcome.findings if f.would}
        self.assertEqual(would['timing'], 'delay')

    def test_enforce_posture(self):
        conf = {'posture': 'enforce',
                'ledger': {'bucket_bits': 100, 'refill_bits_per_sec': 1}}
        m = _monitor(conf)
        outcome = m.submit('chat', 'We can\'t utilize the large server!!')
        self.assertTrue(outcome.delivered)
        self.assertEqual(outcome.final_text, 'We cannot use the big server!')
        self.assertGreaterEqual(outcome.total_delay_ms, 0)
        outcome = m.submit('chat', 'payload %s' % B64)
        self.assertEqual(outcome.disposition, Disposition.CANCELLED)
        self.assertIsNone(outcome.final_text)
        self.assertIn('ledger-exhausted',
                      [f.channel_class for f in outcome.findings])

    def test_taint_blocks_in_default_posture(self):
        m = _monitor()
        m.register_taint('s3cr3t-value-42')
        self.assertFalse(m.submit('chat', 'the key: s3cr3t-value-42').delivered)
        self.assertTrue(m.submit('chat', 'the key is elsewhere').delivered)

    def test_bad_input(self):
        m = _monitor()
        with self.assertRaises(RejectedInput):
            m.submit('', 'x')
        with self.assertRaises(RejectedInput):
            m.submit('chat', b'\xc3\x28')

    def test_stage_order(self):
        calls = []

        def stage(name):
            def handler(msg, ctx):
                calls.append(name)
                return StageVerdict.pass_()
            return handler
        m = Mediator()
        for name, prio in (('b', 20), ('a', 10), ('c', 20)):
            m.register_stage(StageRegistration(name, prio, Posture.ENFORCE,
                                               stage(name)))
        with self.assertRaises(ConfigError):
            m.register_stage(StageRegistration('a', 5, Posture.AUDIT,
                                               stage('a')))
        m.submit('s', 'x')
        self.assertEqual(calls, ['a', 'b', 'c'])
        with self.assertRaises(ConfigError):
            m.register_stage(StageRegistration('d', 1, Posture.AUDIT,
                                               stage('d')))

    def test_failing_stage_fails_closed(self):
        def broken(msg, ctx):
            raise RuntimeError('boom')

        def not_a_verdict(msg, ctx):
            return 'pass'
        for handler in (broken, not_a_verdict):
            m = Mediator()
            m.register_stage(StageRegistration('x', 10, Posture.ENFORCE,
                                               handler))
            with self.assertLogs('egressmon.mediator', 'ERROR'):
                outcome = m.submit('s', 'hello')
            self.assertEqual(outcome.disposition, Disposition.CANCELLED)
            self.assertEqual(outcome.findings[0].channel_class,
                             'handler-failure')
        m = Mediator()
        m.register_stage(StageRegistration('x', 10, Posture.AUDIT, broken))
        with self.assertLogs('egressmon.mediator', 'ERROR'):
            outcome = m.submit('s', 'hello')
        self.assertTrue(outcome.delivered)
        self.assertEqual(outcome.final_text, 'hello')
        self.assertIn('boom', outcome.findings[0].detail)

    def test_handler_timeout(self):
        def slow(msg, ctx):
            time.sleep(0.5)
            return StageVerdict.pass_()
        m = Mediator(handler_timeout_ms=20)
        m.register_stage(StageRegistration('slow', 10, Posture.ENFORCE, slow))
        with self.assertLogs('egressmon.mediator', 'ERROR'):
            outcome = m.submit('s', 'hello')
        self.assertFalse(outcome.delivered)
        self.assertIn('timeout', outcome.findings[0].detail)

    def test_busy_sink_lock_is_not_evicted(self):
        m = Mediator(max_sinks=1)
        entered = threading.Event()

        def second():
            with m._sink_lock('a'):
                entered.set()
        with m._sink_lock('a'):
            worker = threading.Thread(target=second)
            worker.start()
            for _ in range(200):
                if m._sink_locks['a'].users == 2:
                    break
                time.sleep(0.005)
            self.assertEqual(m._sink_locks['a'].users, 2)
            # a new sink cannot evict the lock both threads share
            with m._sink_lock('b'):
                pass
            self.assertIn('a', m._sink_locks)
            self.assertFalse(entered.wait(0.05))
        worker.join(1)
        self.assertTrue(entered.is_set())
        with m._sink_lock('c'):
            self.assertEqual(list(m._sink_locks), ['c'])

    def test_license_seam(self):
        m = _monitor(seams=SeamSet(license_probe=lambda: False))
        outcome = m.submit('s', 'a\u200bb')
        self.assertTrue(outcome.delivered)
        self.assertEqual(outcome.final_text, 'a\u200bb')
        self.assertEqual(outcome.findings[0].channel_class,
                         'monitor-unlicensed')

        def unreachable():
            raise OSError('license server down')
        m = _monitor(seams=SeamSet(license_probe=unreachable))
        with self.assertLogs('egressmon.mediator', 'WARNING'):
            outcome = m.submit('s', 'a\u200bb')
        self.assertEqual(outcome.final_text, 'a b')

    def test_escalate_per_sink(self):
        m = _monitor()
        m.escalate('mail:ops', 'noise')
        self.assertEqual(m.submit('mail:ops', 'Done!!!').final_text, 'Done!')
        self.assertEqual(m.submit('chat', 'Done!!!').final_text, 'Done!!!')
        with self.assertRaises(KeyError):
            m.escalate('chat', 'nonexistent')

    def test_audit_log(self):
        m = _monitor()
        with self.assertLogs('egressmon.audit', 'INFO') as cm:
            m.submit('chat', 'a\u200bb')
        line = [l for l in cm.output if 'zero-width' in l][0]
        self.assertIn('\tchat\tcanonicalizer\tzero-width\t1.0\t', line)

    def test_config_errors(self):
        with self.assertRaises(ConfigError):
            default_postures('lenient')
        with self.assertRaises(ConfigError):
            _monitor({'postures': {'bogus': 'audit'}})
        with self.assertRaises(ConfigError):
            _monitor({'scrambler': 'gpt'})
        m = _monitor()
        with self.assertRaises(ConfigError):
            m.register_stage(StageRegistration('llm', 46, Posture.AUDIT,
                                               LLMScrambler()))

    def test_llm_scrambler(self):
        seams = SeamSet(rephrase_model=lambda prompt: 'Rephrased.')
        m = _monitor({'posture': 'enforce', 'scrambler': 'llm'}, seams)
        outcome = m.submit('chat', 'Original wording.')
        self.assertEqual(outcome.final_text, 'Rephrased.')
        self.assertNotIn('semantic', [r.name for r in m.stages])

    def test_media_unsigned_is_scrambled(self):
        png = _png()
        m = _monitor()
        out = m.process_media(MediaPayload('image', png))
        img, _ = read_image(png)
        np.testing.assert_array_equal(read_image(out.data)[0],
                                      requantize_rgb(img, 64))
        m = _monitor({'image': {'levels': 256}})
        out = m.process_media(MediaPayload('image', png))
        np.testing.assert_array_equal(read_image(out.data)[0], img)

    def test_media_signed_is_exempt(self):
        png = _png()
        seams = SeamSet(media_verifier=lambda digest, token: token == 'ok')
        m = _monitor(seams=seams)
        payload = MediaPayload('image', png, 'ok')
        self.assertIs(m.process_media(payload), payload)
        out = m.process_media(MediaPayload('image', png, 'forged'))
        self.assertNotEqual(out.data, png)

        def broken(digest, token):
            raise ValueError('bad token')
        m = _monitor(seams=SeamSet(media_verifier=broken))
        with self.assertLogs('egressmon.mediator', 'WARNING'):
            out = m.process_media(payload)
        self.assertIsNot(out, payload)

    def test_media_without_verifier_is_at_chance(self):
        """A token means nothing when no verifier is configured"""
        m = _monitor()
        rng = np.random.default_rng(8)
        cover = rng.integers(0, 256, (64, 64, 3), dtype=np.uint8)
        secret = rng.integers(0, 2, 64 * 64, dtype=np.uint8)
        for bit in (0, 1):
            stego = embed_lsb(cover, secret, bit)
            payload = MediaPayload('image', write_image(stego), 'ok')
            out = m.process_media(payload)
            self.assertNotEqual(out.data, payload.data)
            y = extract_lsb(read_image(out.data)[0], len(secret), bit)
            self.assertLess(abs(np.mean(y == secret) - 0.5), 0.05)
        clip = synth_chord(duration=2.5)
        secret = rng.integers(0, 2, 100, dtype=np.uint8)
        codecs = ((encode_ultrasonic_bfsk, decode_ultrasonic_bfsk),
                  (encode_subperceptual, decode_subperceptual))
        for encode, decode in codecs:
            y = decode(encode(secret, clip), len(secret))
            self.assertGreaterEqual(np.mean(y == secret), 0.95)
            payload = MediaPayload('audio', write_wav(encode(secret, clip)),
                                   'ok')
            y = decode(read_wav(m.process_media(payload).data), len(secret))
            self.assertLess(abs(np.mean(y == secret) - 0.5), 0.2)

    def test_media_cancelled(self):
        wav = write_wav(synth_chord(duration=0.1))
        with self.assertRaises(MediaCancelled):
            _monitor({'audio': {'unsigned': 'drop'}}).process_media(
                MediaPayload('audio', wav))
        with self.assertRaises(MediaCancelled):
            Mediator().process_media(MediaPayload('audio', wav))
        with self.assertLogs('egressmon.mediator', 'ERROR'):
            with self.assertRaises(MediaCancelled):
                _monitor().process_media(MediaPayload('image', b'no image'))
        out = _monitor().process_media(MediaPayload('audio', wav))
        self.assertEqual(len(read_wav(out.data)), len(read_wav(wav)))

    def test_media_batch_order(self):
        seams = SeamSet(media_verifier=lambda digest, token: token == 'ok')
        m = _monitor(seams=seams)
        batch = [MediaPayload('image', _png(i)) for i in range(4)]
        batch[1] = MediaPayload('image', _png(1), 'ok')
        out = m.process_media_batch(batch)
        self.assertIs(out[1], batch[1])
        digests = [sha256(p.data) for i, p in enumerate(out) if i != 1]
        self.assertEqual(digests, sorted(digests))
        # the emitted order does not depend on the submitted order
        out2 = m.process_media_batch([batch[3], batch[1], batch[0], batch[2]])
        self.assertEqual([p.data for p in out], [p.data for p in out2])

    def test_cover_traffic_tick(self):
        sent = []
        seams = SeamSet(cover_emitter=lambda sink, text: sent.append(sink))
        m = _monitor({'cover_traffic': {'enabled': True, 'rate_per_sec': 1}},
                     seams)
        self.assertEqual(m.tick(3000), 3)
        self.assertEqual(sent, ['cover'] * 3)


if __name__ == '__main__':
    unittest.main()
