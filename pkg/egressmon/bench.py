# Copyright 2024-2025 egressmon authors, MIT license
"""
Benchmark harness

Every run draws seeded L-bit secrets, encodes them with a channel codec,
pushes the payload through the monitor and decodes what is delivered (the
empty string if the monitor cancelled). Embedded and recovered bits of all
trials are pooled into one joint count table per row, from which the
capacity reduction is computed.

All runs use simulated time and seeded generators, identical
configurations give identical reports.
"""

from collections import OrderedDict
import csv
from dataclasses import dataclass, field
import io
import logging
import random
import zlib

import numpy as np
from cryptography.hazmat.primitives.asymmetric import ed25519
from statsmodels.stats.proportion import proportion_confint

from egressmon.audio import read_wav, synth_chord, write_wav
from egressmon.capacity import (accuracy_proxy_experiment,
                                capacity_reduction, joint_counts)
from egressmon.channels import (codec, decode_mean_luma,
                                decode_sequence, decode_subperceptual,
                                decode_timing, decode_ultrasonic_bfsk,
                                embed_lsb, encode_mean_luma, encode_sequence,
                                encode_subperceptual, encode_timing,
                                encode_ultrasonic_bfsk, extract_lsb,
                                lsb_positions, sequence_bits)
from egressmon.image import (QuantizerSpec, distortion, generate_probe_cover,
                             mean_luma, predict_recovery, quantize_variant,
                             read_image, write_image)
from egressmon.legitimacy import (Accreditor, LegitimacyToken, TrustSet,
                                  build_verifier, issue_launch_authority,
                                  raw_public, sign_media)
from egressmon.mediator import (Mediator, SeamSet, StageRegistration,
                                build_mediator)
from egressmon.payload import (ConfigError, EgressMessage, MediaKind,
                               MediaPayload, Posture)
from egressmon.stages import (STAGE_PRIORITIES, BehavioralConfig,
                              BehavioralGate, TimingScrambler, fold_choices,
                              load_lexicon, scramble_semantic)
from egressmon.util import SimClock, SplitMix64

log = logging.getLogger('egressmon.bench')

TEXT_CHANNELS = ('zero_width_tag', 'variation_selector', 'bidi_control',
                 'homoglyph', 'json_key_order', 'whitespace_count',
                 'punctuation_count', 'synonym_1bit', 'base64_blob',
                 'timing_interval')
LINGUISTIC_CHANNELS = ('synonym_1bit', 'synonym_2bit', 'contraction',
                       'active_passive')
IMAGE_LEVELS = (None, 256, 128, 64, 32)
DESIGN_SPACE = ('rgb_levels:256', 'rgb_levels:200', 'rgb_levels:128',
                'rgb_levels:64', 'rgb_levels:32', 'rgb_levels:16',
                'cmyk_levels:256', 'cmyk_levels:64', 'k_only_bits:2',
                'k_only_bits:4', 'cmyk_random_bits:4:8',
                'rgb_one_of_three_7bit', 'rgb7_sprinkle6:0.5')
TIMING_SETTINGS = ('none', 'quantize_jitter', 'paced_release')
# the text benchmark ledger is small enough to refuse one base64 blob
TEXT_LEDGER = {'bucket_bits': 256, 'refill_bits_per_sec': 1}
FORMATS = ('text', 'csv')


@dataclass(frozen=True)
class BenchConfig:

    """Trials, secret length, seed, posture and channel filter

    ``trials`` None selects the benchmark's own default (20, or 40 for the
    linguistic benchmark).
    """
    trials: int = None
    bits: int = 64
    seed: int = 0
    posture: str = 'default'
    channels: tuple = ()
    ledger: dict = None

    def __post_init__(self):
        if self.trials is not None and self.trials < 1:
            raise ConfigError('trials must be at least 1')
        if self.bits < 1:
            raise ConfigError('bits must be at least 1')
        if self.posture not in ('default', 'enforce'):
            raise ConfigError('posture is default or enforce, not %r' %
                              self.posture)
        object.__setattr__(self, 'channels', tuple(self.channels or ()))

    def n_trials(self, default=20):
        return default if self.trials is None else self.trials

    def secrets(self, name):
        """Secret generator of one benchmark row"""
        return SplitMix64((self.seed ^ zlib.crc32(name.encode('utf-8'))) &
                          0xFFFFFFFFFFFFFFFF)


@dataclass
class BenchRow:

    """One report line; percentages, None where not applicable"""
    channel: str
    setting: str = ''
    reduction: float = None
    accuracy: float = None
    detected: float = None
    n: int = 0
    accuracy_ci: tuple = None
    extra: OrderedDict = field(default_factory=OrderedDict)


def bench_row(channel, setting, x, y, detected=None, **extra):
    """Row from pooled embedded bits x and recovered bits y"""
    x = np.concatenate([np.ravel(v) for v in x]).astype(int)
    y = np.concatenate([np.ravel(v) for v in y]).astype(int)
    counts = joint_counts(x, y)
    correct = int(np.sum(x == y))
    low, high = proportion_confint(correct, len(x), alpha=0.05,
                                   method='wilson')
    row = BenchRow(channel, setting, 100. * capacity_reduction(counts),
                   100. * correct / len(x),
                   None if detected is None else 100. * detected, len(x),
                   (100. * low, 100. * high), OrderedDict(extra))
    log.debug('%s %s: reduction %.1f%%, accuracy %.1f%%', channel, setting,
              row.reduction, row.accuracy)
    return row


def _detected(outcome):
    return not outcome.delivered or any(f.estimated_bits > 0
                                        for f in outcome.findings)


def _check_channels(cfg, allowed):
    ids = cfg.channels or allowed
    unknown = [c for c in ids if c not in allowed]
    if unknown:
        raise ConfigError('unknown channel %s, choose from %s' %
                          (', '.join(unknown), ', '.join(allowed)))
    return ids


# timing side channel

def _timing_trial(mediator, sink, secret, start=0):
    sched = encode_timing(secret, start=start)
    releases = []
    for t, text in sched.events:
        outcome = mediator.process_text(EgressMessage(sink, text, t))
        if outcome.delivered:
            releases.append(t + outcome.total_delay_ms)
    return decode_timing(releases, len(secret))


def timing_mediator(setting='paced_release', seed=0, max_delay_ms=1000):
    """Monitor with only the timing scrambler and the behavioral gate"""
    if setting not in TIMING_SETTINGS:
        raise ConfigError('unknown timing setting %r' % setting)
    m = Mediator(rng=random.Random(seed))
    if setting == 'none':
        return m
    gate = BehavioralGate(BehavioralConfig(max_msgs_per_min=1000,
                                           mode=setting))
    for name, handler in (('timing', TimingScrambler(max_delay_ms)),
                          ('behavioral', gate)):
        m.register_stage(StageRegistration(name, STAGE_PRIORITIES[name],
                                           Posture.ENFORCE, handler))
    return m


def run_timing_bench(cfg=None):
    """Timing channel without shaping, with jitter plus grid quantization
    and with paced release"""
    cfg = cfg or BenchConfig()
    rows = []
    for setting in TIMING_SETTINGS:
        rng = cfg.secrets('timing_interval')
        m = timing_mediator(setting, cfg.seed)
        xs, ys = [], []
        for t in range(cfg.n_trials()):
            secret = rng.bits(cfg.bits)
            xs.append(secret)
            ys.append(_timing_trial(m, 'timing-%d' % t, secret))
        rows.append(bench_row('timing_interval', setting, xs, ys))
    return rows


# text channels through the full pipeline

def text_conf(cfg):
    """Monitor configuration of the text benchmark"""
    return {'posture': cfg.posture,
            'ledger': cfg.ledger or TEXT_LEDGER,
            'behavioral': {'max_msgs_per_min': 1000}}


def run_text_bench(cfg=None):
    """Text and timing channels behind the mediator, one posture"""
    cfg = cfg or BenchConfig()
    rows = []
    for cid in _check_channels(cfg, TEXT_CHANNELS):
        rng = cfg.secrets(cid)
        m = build_mediator(text_conf(cfg), clock=SimClock(),
                           rng=random.Random(cfg.seed))
        xs, ys, detected = [], [], 0
        if cid == 'timing_interval':
            if cfg.posture == 'default':
                log.info('timing shaping is enforce only, row skipped')
                continue
            for t in range(cfg.n_trials()):
                secret = rng.bits(cfg.bits)
                xs.append(secret)
                ys.append(_timing_trial(m, 'bench-%s-%d' % (cid, t), secret))
            rows.append(bench_row(cid, cfg.posture, xs, ys))
            continue
        c = codec(cid)
        for t in range(cfg.n_trials()):
            secret = rng.bits(cfg.bits)
            payload = c.encode(secret, rng=rng)
            outcome = m.process_text(EgressMessage(
                'bench-%s-%d' % (cid, t), payload, 1000 * t))
            delivered = outcome.final_text if outcome.delivered else ''
            xs.append(secret)
            ys.append(c.decode(delivered, cfg.bits))
            detected += _detected(outcome)
        rows.append(bench_row(cid, cfg.posture, xs, ys,
                              detected / cfg.n_trials()))
    return rows


# linguistic channels against the semantic scrambler alone

def run_linguistic_bench(cfg=None):
    """Undefended and scrambled rows of the linguistic carriers"""
    cfg = cfg or BenchConfig()
    lex = load_lexicon()
    T = cfg.n_trials(40)
    rows = []
    for cid in _check_channels(cfg, LINGUISTIC_CHANNELS):
        c = codec(cid)
        rng = cfg.secrets(cid)
        xs, clear, scrambled = [], [], []
        flagged = 0
        idempotent = True
        for _ in range(T):
            secret = rng.bits(cfg.bits)
            text = c.encode(secret, rng=rng)
            out, counts = fold_choices(text, lex)
            if scramble_semantic(out, lex) != out:
                log.error('%s: scrambler output is not a fixed point', cid)
                idempotent = False
            flagged += any(counts.values())
            xs.append(secret)
            clear.append(c.decode(text, cfg.bits))
            scrambled.append(c.decode(out, cfg.bits))
        rows.append(bench_row(cid, 'undefended', xs, clear))
        rows.append(bench_row(cid, 'semantic', xs, scrambled, flagged / T,
                              idempotent='yes' if idempotent else 'no'))
    return rows


# images

def noise_cover(seed, size=64, low=0, high=256):
    rng = np.random.default_rng(seed)
    return rng.integers(low, high, size=(size, size, 3), dtype=np.uint8)


def _image_through(mediator, img):
    payload = MediaPayload(MediaKind.IMAGE, write_image(img))
    return read_image(mediator.process_media(payload).data)[0]


def run_image_bench(cfg=None):
    """LSB carriers in bit 0 and bit 1 of blue against RGB requantization"""
    cfg = cfg or BenchConfig()
    T = cfg.n_trials()
    rng = cfg.secrets('lsb')
    covers = [generate_probe_cover(64, 64)]
    covers += [noise_cover(cfg.seed + t) for t in range(1, T)]
    secrets = [rng.bits(cfg.bits) for _ in range(T)]
    positions = [lsb_positions(c.shape, cfg.bits, cfg.seed + t)
                 for t, c in enumerate(covers)]
    rows = []
    for levels in IMAGE_LEVELS:
        m = build_mediator({'image': {'levels': levels}}) if levels else None
        setting = 'rgb %d' % levels if levels else 'none'
        for bit in (0, 1):
            ys = []
            for cover, secret, pos in zip(covers, secrets, positions):
                stego = embed_lsb(cover, secret, bit, pos)
                if m is not None:
                    stego = _image_through(m, stego)
                ys.append(extract_lsb(stego, cfg.bits, bit, pos))
            rows.append(bench_row('lsb_bit%d' % bit, setting, secrets, ys))
    return rows


def _untouched(spec, mask, bit):
    """Fraction of pixels whose blue bit survives, None if not modeled"""
    if spec.variant == 'rgb_one_of_three_7bit':
        return float(np.mean(mask != 2)) if bit == 0 else 1.
    if spec.variant == 'rgb7_sprinkle6':
        return 0. if bit == 0 else float(np.mean(~mask))


def run_design_space_probe(cfg=None):
    """Every quantizer variant against full-plane bit-0 and bit-1 secrets
    on the probe cover"""
    cfg = cfg or BenchConfig()
    cover = generate_probe_cover()
    n = cover.shape[0] * cover.shape[1]
    secret = cfg.secrets('design-space').bits(n)
    positions = np.arange(n)
    rows = []
    for label in DESIGN_SPACE:
        spec = QuantizerSpec.parse(label, cfg.seed)
        max_delta, mean_delta = distortion(cover,
                                           quantize_variant(cover, spec))
        for bit in (0, 1):
            stego = embed_lsb(cover, secret, bit, positions)
            out, mask = quantize_variant(stego, spec, return_mask=True)
            y = extract_lsb(out, n, bit, positions)
            untouched = _untouched(spec, mask, bit)
            predicted = (None if untouched is None else
                         100. * predict_recovery(untouched))
            rows.append(bench_row('lsb_bit%d' % bit, spec.label, [secret],
                                  [y], max_delta=max_delta,
                                  mean_delta=mean_delta, predicted=predicted))
    for problem in design_space_problems(rows):
        log.warning('design space: %s', problem)
    return rows


def design_space_problems(rows):
    """Qualitative orderings the probe table must show"""
    acc = {(r.setting, r.channel): r.accuracy for r in rows}
    delta = {r.setting: r.extra['mean_delta'] for r in rows}
    problems = []
    for bit in (0, 1):
        if acc.get(('cmyk_levels:256', 'lsb_bit%d' % bit), 100.) <= 55.:
            problems.append('cmyk_levels:256 bit %d at chance' % bit)
    at_chance = [s for s in delta
                 if all(abs(acc[(s, 'lsb_bit%d' % b)] - 50.) <= 3.
                        for b in (0, 1))]
    best = [s for s in at_chance
            if delta[s] <= min(delta[t] for t in at_chance)]
    if best != ['rgb_levels:64']:
        problems.append('minimum-distortion variant at chance is %s' %
                        ', '.join(best))
    return problems


def run_cross_image_bench(cfg=None):
    """Mean-luma and sequence-order carriers across images"""
    cfg = cfg or BenchConfig()
    T, L = cfg.n_trials(), cfg.bits
    rng = cfg.secrets('mean_luma')
    secrets = [rng.bits(L) for _ in range(T)]
    covers = [[noise_cover(cfg.seed + 1000 * t + i, 16, 96, 161)
               for i in range(L)] for t in range(T)]
    rows = []
    for setting, buckets, low, high in (('undefended', None, 64, 192),
                                        ('B=8', 8, 64, 192),
                                        ('B=2', 2, 64, 192),
                                        ('B=2 one bucket', 2, 70, 110)):
        m = build_mediator({'image': {'luma_buckets': buckets}})
        ys, seen = [], set()
        for secret, cov in zip(secrets, covers):
            imgs = encode_mean_luma(secret, cov, low, high)
            if buckets:
                imgs = [_image_through(m, img) for img in imgs]
                seen.update(int(mean_luma(img) // (255. / buckets))
                            for img in imgs)
            ys.append(decode_mean_luma(imgs, L, (low + high) / 2.))
        bound = np.log2(buckets) if buckets else None
        rows.append(bench_row('mean_luma', setting, secrets, ys,
                              bound_bits=bound,
                              buckets=len(seen) if buckets else None))
    seq = [noise_cover(cfg.seed + i, 16) for i in range(4)]
    k = sequence_bits(len(seq))
    rng = cfg.secrets('sequence_perm')
    secrets = [rng.bits(k) for _ in range(T)]
    m = build_mediator()
    for setting in ('undefended', 'sha256 order'):
        ys = []
        for secret in secrets:
            imgs = encode_sequence(secret, seq)
            if setting != 'undefended':
                batch = [MediaPayload(MediaKind.IMAGE, write_image(img))
                         for img in imgs]
                imgs = [read_image(p.data)[0]
                        for p in m.process_media_batch(batch)]
            ys.append(decode_sequence(imgs, k, seq))
        bound = np.log2(24.) if setting == 'undefended' else 0.
        rows.append(bench_row('sequence_perm', setting, secrets, ys,
                              bound_bits=bound))
    return rows


# audio

def run_audio_bench(cfg=None):
    """Ultrasonic BFSK and sub-perceptual tone against the audio scrambler"""
    cfg = cfg or BenchConfig()
    T, L = cfg.n_trials(), cfg.bits
    clip = synth_chord(duration=max(2., L / 50. + 0.5))
    m = build_mediator()
    rows = []
    for cid, encode, decode in (
            ('ultrasonic_bfsk', encode_ultrasonic_bfsk,
             decode_ultrasonic_bfsk),
            ('subperceptual_tone', encode_subperceptual,
             decode_subperceptual)):
        rng = cfg.secrets(cid)
        secrets = [rng.bits(L) for _ in range(T)]
        clean = decode(clip, L)
        rows.append(bench_row(cid, 'clean carrier', secrets,
                              [clean] * len(secrets)))
        for setting in ('none', 'scrambled'):
            ys = []
            for secret in secrets:
                stego = encode(secret, clip)
                if setting == 'scrambled':
                    payload = MediaPayload(MediaKind.AUDIO, write_wav(stego))
                    stego = read_wav(m.process_media(payload).data)
                ys.append(decode(stego, L))
            rows.append(bench_row(cid, setting, secrets, ys))
    return rows


# legitimacy gate

def legitimacy_cases(data, kind=MediaKind.IMAGE, data_class='chart'):
    """Payloads of the six gate cases plus the mediator setup

    :return: trust set, live pool, list of (case, payload, expected exempt)
    """
    root = ed25519.Ed25519PrivateKey.generate()
    broker = Accreditor(raw_public(root), clock=lambda: 0)
    auth = issue_launch_authority(root, 'launcher', now=0)
    handle = broker.mint_signing_key(broker.mint_identity(auth, 'producer'))
    trust = TrustSet(authorized_pairs=frozenset([(kind, data_class)]))
    rogue = ed25519.Ed25519PrivateKey.generate()
    rogue_broker = Accreditor(raw_public(rogue), clock=lambda: 0)
    rogue_handle = rogue_broker.mint_signing_key(rogue_broker.mint_identity(
        issue_launch_authority(rogue, 'launcher', now=0), 'producer'))
    valid = sign_media(handle, kind, data_class, data)
    sig = bytearray(valid.signature)
    sig[0] ^= 1
    cases = [
        ('absent', MediaPayload(kind, data), False),
        ('valid, authorized', MediaPayload(kind, data, valid), True),
        ('valid, unauthorized class', MediaPayload(
            kind, data, sign_media(handle, kind, 'photo', data)), False),
        ('hash mismatch', MediaPayload(
            kind, data, sign_media(handle, kind, data_class, data + b'\0')),
         False),
        ('untrusted key', MediaPayload(
            kind, data, sign_media(rogue_handle, kind, data_class, data)),
         False),
        ('tampered signature', MediaPayload(
            kind, data, LegitimacyToken(valid.claim, bytes(sig))), False),
    ]
    return trust, broker.trust_pool, cases


def run_legitimacy_bench(cfg=None):
    """The six gate cases with and without an installed verifier"""
    data = write_image(generate_probe_cover(64, 64))
    trust, pool, cases = legitimacy_cases(data)
    gated = build_mediator(seams=SeamSet(
        media_verifier=build_verifier(trust, pool)))
    bare = build_mediator()
    rows = []
    for case, payload, expected in cases:
        out = gated.process_media(payload)
        exempt = out.data == payload.data
        if exempt != expected:
            log.error('legitimacy case %r: exempt=%s', case, exempt)
        bare_exempt = bare.process_media(payload).data == payload.data
        rows.append(BenchRow('legitimacy', case, extra=OrderedDict([
            ('outcome', 'exempt' if exempt else 'scrambled'),
            ('no_verifier', 'exempt' if bare_exempt else 'scrambled')])))
    n_exempt = sum(r.extra['outcome'] == 'exempt' for r in rows)
    if n_exempt != 1:
        log.error('%d exempt legitimacy rows, expected one', n_exempt)
    return rows


def run_estimator_bench(cfg=None, resamples=10000, n=640):
    """Accuracy proxy against Miller-Madow MI on independent bits"""
    cfg = cfg or BenchConfig()
    res = accuracy_proxy_experiment(resamples, n, cfg.seed)
    return [BenchRow('independent bits', 'N=%d' % n, n=n, extra=OrderedDict([
        ('resamples', resamples),
        ('accuracy_proxy_bits', res['accuracy_proxy']),
        ('miller_madow_bits', res['miller_madow'])]))]


BENCHES = OrderedDict([
    ('text', run_text_bench),
    ('linguistic', run_linguistic_bench),
    ('image', run_image_bench),
    ('design-space', run_design_space_probe),
    ('cross-image', run_cross_image_bench),
    ('audio', run_audio_bench),
    ('legitimacy', run_legitimacy_bench),
    ('timing', run_timing_bench),
    ('estimator', run_estimator_bench),
])


# report

_COLUMNS = ('channel', 'setting', 'reduction', 'accuracy', 'ci95',
            'detected', 'n')


def _cell(value, csv_=False):
    if value is None:
        return '' if csv_ else '--'
    if isinstance(value, (float, np.floating)):
        return '%.4f' % value if csv_ else '%.3f' % value
    return str(value)


def _cells(row, extras, csv_=False):
    def pct(v, fmt):
        if v is None:
            return '' if csv_ else '--'
        return '%.4f' % v if csv_ else fmt % v
    if row.accuracy_ci is None:
        ci = '' if csv_ else '--'
    elif csv_:
        ci = '%.4f %.4f' % row.accuracy_ci
    else:
        ci = '[%.1f, %.1f]' % row.accuracy_ci
    cells = [row.channel, row.setting, pct(row.reduction, '%.1f%%'),
             pct(row.accuracy, '%.1f%%'), ci, pct(row.detected, '%.0f%%'),
             str(row.n)]
    return cells + [_cell(row.extra.get(k), csv_) for k in extras]


def _echo(rows, conf):
    lines = ['# egressmon bench: ' + ' '.join(
        '%s=%s' % (k, v) for k, v in conf.items())]
    reductions = [r.reduction for r in rows if r.reduction is not None]
    if reductions:
        lines.append('# mean reduction %.1f%% over %d rows' %
                     (np.mean(reductions), len(reductions)))
    return lines


def emit_report(rows, format='text', conf=None):
    """Render rows as an aligned text table or CSV

    :param conf: ordered mapping echoed as comment line (seed, trials, ...)
    """
    if format not in FORMATS:
        raise ValueError('unknown report format %r' % format)
    rows = list(rows)
    extras = []
    for r in rows:
        extras.extend(k for k in r.extra if k not in extras)
    header = list(_COLUMNS) + extras
    echo = _echo(rows, conf) if conf and rows else []
    if format == 'csv':
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator='\n')
        writer.writerow(header)
        for r in rows:
            writer.writerow(_cells(r, extras, csv_=True))
        return ''.join(l + '\n' for l in echo) + buf.getvalue()
    table = [header] + [_cells(r, extras) for r in rows]
    widths = [max(len(line[i]) for line in table) for i in range(len(header))]
    lines = ['  '.join(c.ljust(w) for c, w in zip(line, widths)).rstrip()
             for line in table]
    return '\n'.join(echo + lines) + '\n'


def run_bench(name, cfg=None):
    try:
        func = BENCHES[name]
    except KeyError:
        raise ConfigError('unknown benchmark %r' % name)
    cfg = cfg or BenchConfig()
    log.info('run %s benchmark (seed %d)', name, cfg.seed)
    return func(cfg)
