# Copyright 2024-2025 egressmon authors, MIT license
"""
Text and media chokepoints

:class:`Mediator` owns a priority-ordered stage registry and the
fail-closed runner of the text chokepoint, plus the media scrambler
registry drained by the media chokepoint.

A handler that raises (or exceeds ``handler_timeout_ms``) is converted to
cancel when its stage enforces and to a finding when it audits. The host
supplies behavior through a :class:`SeamSet`; absent seams default to
inert, a missing media verifier rejects every payload.

:func:`build_mediator` assembles a ready monitor from a configuration
dictionary.
"""

from collections import OrderedDict
import concurrent.futures
from contextlib import contextmanager
from dataclasses import dataclass, replace
import logging
import random
import threading

from egressmon.audio import ScramblerBand, scramble_audio_bytes
from egressmon.image import canonicalize_sequence, scramble_image_bytes
from egressmon.ledger import CapacityLedger
from egressmon.payload import (Action, ConfigError, Disposition,
                               EgressMessage, EgressOutcome, Finding,
                               MediaCancelled, MediaKind, MediaPayload,
                               OutcomeBuilder, Posture, StageVerdict,
                               check_sink, decode_text)
from egressmon.stages import (LOSSLESS_STAGES, STAGE_PRIORITIES,
                              BehavioralGate, Canonicalizer, CoverTraffic,
                              EntropyScanner, LLMScrambler, NoiseInjector,
                              ReplaySentinel, SemanticScrambler, TaintTracker,
                              TimingScrambler)
from egressmon.util import sha256

log = logging.getLogger('egressmon.mediator')
audit_log = logging.getLogger('egressmon.audit')

EXCLUSIVE_STAGES = ('semantic', 'llm')


@dataclass(frozen=True)
class StageRegistration:
    name: str
    priority: int
    posture: Posture
    handler: object


@dataclass(frozen=True)
class SeamSet:

    """Host-injected functions, all optional

    :license_probe: ``() -> bool``, absent means enabled
    :cover_emitter: ``(sink, text) -> None``, absent means inert
    :rephrase_model: ``(prompt) -> str or None``, absent means inert
    :media_verifier: ``(content_hash, token) -> bool``, absent rejects all
    """
    license_probe: object = None
    cover_emitter: object = None
    rephrase_model: object = None
    media_verifier: object = None


class PipelineContext(object):

    """Per-message state handed to every stage handler"""

    def __init__(self, message, ledger, clock=None, rng=None, seams=None):
        self.message = message
        self.ledger = ledger
        self.clock = clock
        self.rng = rng
        self.seams = seams or SeamSet()
        self.findings_so_far = []
        self.charged_bits = 0.
        self.delay_ms = 0
        self.posture = None

    def now(self):
        return self.message.arrival_time

    def release_candidate(self):
        """Release time if no further delay were added"""
        return self.message.arrival_time + self.delay_ms


class _SinkLock(object):

    __slots__ = ('lock', 'users')

    def __init__(self):
        self.lock = threading.Lock()
        self.users = 0


def _tsv_field(value):
    return str(value).replace('\t', ' ').replace('\n', ' ')


class Mediator(object):

    def __init__(self, ledger=None, seams=None, clock=None, rng=None,
                 handler_timeout_ms=None, max_sinks=1024):
        self.ledger = ledger or CapacityLedger()
        self.seams = seams or SeamSet()
        self.clock = clock
        self.rng = rng or random.SystemRandom()
        self.handler_timeout_ms = handler_timeout_ms
        self.max_sinks = max_sinks
        self.cover = None
        self._stages = []
        self._ordered = None
        self._scramblers = {}
        self._sink_postures = {}
        self._sink_locks = OrderedDict()
        self._guard = threading.Lock()
        self._executor = None

    # setup

    def register_stage(self, reg):
        """Add a stage; ties in priority keep registration order"""
        if self._ordered is not None:
            raise ConfigError('stage %r registered after the first message'
                              % reg.name)
        names = {r.name for r in self._stages}
        if reg.name in names:
            raise ConfigError('duplicate stage %r' % reg.name)
        if reg.name in EXCLUSIVE_STAGES and names & set(EXCLUSIVE_STAGES):
            raise ConfigError('semantic and llm scramblers are alternatives')
        self._stages.append(replace(reg, posture=Posture(reg.posture)))

    def register_scrambler(self, kind, func):
        """Register ``func(bytes) -> bytes`` for one media kind"""
        self._scramblers[MediaKind.parse(kind)] = func

    def stage(self, name):
        for reg in self._stages:
            if reg.name == name:
                return reg
        raise KeyError(name)

    @property
    def stages(self):
        if self._ordered is not None:
            return self._ordered
        return sorted(self._stages, key=lambda r: r.priority)

    def escalate(self, sink, stage, posture=Posture.ENFORCE):
        """Override the posture of one stage for one sink"""
        self.stage(stage)
        self._sink_postures.setdefault(sink, {})[stage] = Posture(posture)
        log.info('sink %r: stage %s now %s', sink, stage, Posture(posture).value)

    def posture_for(self, sink, reg):
        return self._sink_postures.get(sink, {}).get(reg.name, reg.posture)

    def register_taint(self, value):
        self.stage('taint').handler.register(value)

    # text chokepoint

    @contextmanager
    def _sink_lock(self, sink):
        """Serialize the messages of one sink

        A lock is only evicted while no thread holds or waits for it.
        """
        with self._guard:
            entry = self._sink_locks.get(sink)
            if entry is None:
                self._evict_idle_locks()
                entry = self._sink_locks[sink] = _SinkLock()
            else:
                self._sink_locks.move_to_end(sink)
            entry.users += 1
        try:
            with entry.lock:
                yield
        finally:
            with self._guard:
                entry.users -= 1

    def _evict_idle_locks(self):
        # busy sinks may push the table past max_sinks until they finish
        idle = (k for k, e in self._sink_locks.items() if not e.users)
        for key in list(idle):
            if len(self._sink_locks) < self.max_sinks:
                break
            del self._sink_locks[key]

    def _licensed(self):
        check = self.seams.license_probe
        if check is None:
            return True
        try:
            return bool(check())
        except Exception as ex:
            log.warning('license probe failed, monitor stays enabled: %s', ex)
            return True

    def _invoke(self, reg, msg, ctx):
        if not self.handler_timeout_ms:
            return reg.handler(msg, ctx)
        if self._executor is None:
            self._executor = concurrent.futures.ThreadPoolExecutor(
                max_workers=4, thread_name_prefix='egressmon-stage')
        future = self._executor.submit(reg.handler, msg, ctx)
        return future.result(timeout=self.handler_timeout_ms / 1000.)

    def _run_stage(self, reg, msg, ctx, posture):
        try:
            verdict = self._invoke(reg, msg, ctx)
            if not isinstance(verdict, StageVerdict):
                raise TypeError('handler returned %r' % (verdict,))
        except Exception as ex:
            if isinstance(ex, concurrent.futures.TimeoutError):
                detail = 'timeout after %d ms' % self.handler_timeout_ms
            else:
                detail = '%s: %s' % (type(ex).__name__, ex)
            log.exception('stage %s failed on sink %r', reg.name, msg.sink)
            finding = Finding(reg.name, 'handler-failure', 0., detail)
            if posture == Posture.ENFORCE:
                verdict = StageVerdict.cancel([finding])
            else:
                verdict = StageVerdict.pass_([finding])
        return verdict.with_stage(reg.name)

    def process_text(self, msg):
        """Run a message through all stages and return the outcome

        :raise RejectedInput: invalid UTF-8 text or bad sink id
        """
        check_sink(msg.sink)
        msg = replace(msg, text=decode_text(msg.text))
        with self._guard:
            if self._ordered is None:
                self._ordered = self.stages
        with self._sink_lock(msg.sink):
            if not self._licensed():
                finding = Finding('mediator', 'monitor-unlicensed')
                outcome = EgressOutcome(Disposition.DELIVERED, msg.text, 0,
                                        (finding,))
            else:
                outcome = self._run(msg)
        self._audit(msg, outcome)
        return outcome

    def _run(self, msg):
        ctx = PipelineContext(msg, self.ledger, self.clock, self.rng,
                              self.seams)
        builder = OutcomeBuilder(msg.text)
        for reg in self._ordered:
            posture = self.posture_for(msg.sink, reg)
            ctx.posture = posture
            running = replace(msg, text=builder.text)
            verdict = self._run_stage(reg, running, ctx, posture)
            if builder.add(verdict, posture):
                break
            if posture == Posture.ENFORCE and verdict.action == Action.DELAY:
                ctx.delay_ms += verdict.delay_ms
            ctx.findings_so_far = list(builder.findings)
        outcome = builder.outcome()
        if not outcome.delivered:
            log.debug('cancelled message on sink %r', msg.sink)
        return outcome

    def submit(self, sink, text):
        """Process text arriving now on the mediator's clock"""
        now = self.clock.now() if self.clock is not None else 0
        return self.process_text(EgressMessage(sink, text, now))

    def _audit(self, msg, outcome):
        for f in outcome.findings:
            fields = (msg.arrival_time, msg.sink, f.stage, f.channel_class,
                      '%.1f' % f.estimated_bits, f.would or '-', f.detail)
            audit_log.info('%s', '\t'.join(_tsv_field(v) for v in fields))

    def tick(self, now=None):
        """Emit due cover traffic"""
        if self.cover is None:
            return 0
        if now is None:
            now = self.clock.now() if self.clock is not None else 0
        return self.cover.tick(now, self.seams.cover_emitter)

    # media chokepoint

    def verify(self, payload):
        verifier = self.seams.media_verifier
        if verifier is None:
            return False
        try:
            return bool(verifier(sha256(payload.data), payload.token))
        except Exception as ex:
            log.warning('media verifier failed, payload unsigned: %s', ex)
            return False

    def _scramble(self, payload):
        func = self._scramblers.get(payload.kind)
        if func is None:
            raise MediaCancelled('no scrambler for %s payloads' %
                                 payload.kind.label)
        try:
            data = func(payload.data)
        except MediaCancelled:
            raise
        except Exception as ex:
            log.exception('%s scrambler failed', payload.kind.label)
            raise MediaCancelled('%s scrambler failed: %s' %
                                 (payload.kind.label, ex)) from ex
        return MediaPayload(payload.kind, data)

    def process_media(self, payload):
        """Return the payload unchanged if its token verifies, else scrambled

        :raise MediaCancelled: unknown kind, scrambler failure or drop policy
        """
        if self.verify(payload):
            log.debug('exempt %s payload', payload.kind.label)
            return payload
        return self._scramble(payload)

    def process_media_batch(self, payloads):
        """Process a batch and canonicalize the order of unsigned payloads"""
        exempt = [self.verify(p) for p in payloads]
        out = [p if ok else self._scramble(p)
               for p, ok in zip(payloads, exempt)]
        return canonicalize_sequence(out, exempt)


def drop_media(data):
    raise MediaCancelled('unsigned payload dropped by policy')


def default_postures(posture='default'):
    """Stage postures of the named posture

    'default' enforces the lossless stages and audits all others,
    'enforce' enforces every stage.
    """
    if posture not in ('default', 'enforce'):
        raise ConfigError('posture is default or enforce, not %r' % posture)
    return {name: Posture.ENFORCE
            if posture == 'enforce' or name in LOSSLESS_STAGES
            else Posture.AUDIT for name in STAGE_PRIORITIES}


def build_mediator(conf=None, seams=None, clock=None, rng=None):
    """Create a mediator with all stages and media scramblers installed

    :param conf: configuration dictionary, see ``example/conf.json``
    """
    conf = conf or {}
    postures = default_postures(conf.get('posture', 'default'))
    for name, value in (conf.get('postures') or {}).items():
        if name not in postures:
            raise ConfigError('unknown stage %r in postures' % name)
        postures[name] = Posture(value)
    ledger = CapacityLedger(conf.get('ledger'))
    max_sinks = ledger.conf.max_sinks
    m = Mediator(ledger, seams, clock, rng, conf.get('handler_timeout_ms'),
                 max_sinks=max_sinks)
    scrambler = conf.get('scrambler', 'semantic')
    if scrambler not in ('semantic', 'llm', 'none'):
        raise ConfigError('scrambler is semantic, llm or none')
    handlers = OrderedDict([
        ('canonicalizer',
         Canonicalizer(whitespace=conf.get('canonical_whitespace', 'fold'))),
        ('taint', TaintTracker(conf.get('taint', ()))),
        ('entropy', EntropyScanner(conf.get('entropy'))),
        ('replay', ReplaySentinel(conf.get('replay_ring', 128), max_sinks)),
        ('noise', NoiseInjector()),
        ('semantic', SemanticScrambler() if scrambler == 'semantic' else None),
        ('llm', LLMScrambler() if scrambler == 'llm' else None),
        ('timing', TimingScrambler(
            (conf.get('timing') or {}).get('max_delay_ms', 2000))),
        ('behavioral', BehavioralGate(conf.get('behavioral'), max_sinks)),
    ])
    for name, handler in handlers.items():
        if handler is not None:
            m.register_stage(StageRegistration(
                name, STAGE_PRIORITIES[name], postures[name], handler))
    for sink, stages in (conf.get('sink_postures') or {}).items():
        for stage, posture in stages.items():
            m.escalate(sink, stage, posture)
    cover = dict(conf.get('cover_traffic') or {})
    start = clock.now() if clock is not None else 0
    m.cover = CoverTraffic(rng=m.rng, start=start, **cover)
    image = dict(conf.get('image') or {})
    m.register_scrambler(MediaKind.IMAGE, lambda data: scramble_image_bytes(
        data, levels=image.get('levels', 64),
        luma_buckets=image.get('luma_buckets'),
        variant=image.get('variant')))
    audio = dict(conf.get('audio') or {})
    unsigned = audio.pop('unsigned', 'scramble')
    if unsigned == 'drop':
        m.register_scrambler(MediaKind.AUDIO, drop_media)
    elif unsigned == 'scramble':
        band = ScramblerBand(**audio)
        m.register_scrambler(MediaKind.AUDIO,
                             lambda data: scramble_audio_bytes(data, band))
    else:
        raise ConfigError('audio.unsigned is scramble or drop')
    return m
