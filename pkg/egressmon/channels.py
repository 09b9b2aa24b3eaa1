# Copyright 2024-2025 egressmon authors, MIT license
"""
Covert channel encoders and decoders

Every codec embeds an L-bit secret into a benign carrier and recovers bits
from whatever survives the defense. Decoders know the protocol (they get
the parameters the encoder used) and never fail: when the carrier
structure is gone they return their constant guess, all zeros, which
carries exactly zero bits.

Text carriers are built from the bundled benign corpus, images from the
probe cover or seeded noise, audio from a synthesized chord.
"""

import base64
import binascii
from dataclasses import dataclass
import functools
import json
import math
import re

import numpy as np
from scipy.fft import rfft, rfftfreq

from egressmon.audio import AudioClip, tone_amplitude
from egressmon.image import as_rgb, mean_luma, shift_mean_luma
from egressmon.stages import (benign_corpus, load_confusables, load_lexicon,
                              match_case)
from egressmon.util import (SplitMix64, bits_to_bytes, bits_to_int,
                            bytes_to_bits, fit_bits, int_to_bits)

ZWSP, ZWNJ = '\u200b', '\u200c'
TAG0, TAG1 = '\U000E0030', '\U000E0031'
VS15, VS16 = '\ufe0e', '\ufe0f'
LRM, RLM = '\u200e', '\u200f'
BLOB_BYTES = 36
BLOB_PREFIX = 'attached data: '

_WORD = re.compile(r'[A-Za-z]+')
_WORD_START = re.compile(r'\b([A-Za-z])')
_SPACES = re.compile(r' +')
_DOTS = re.compile(r'\.+')
_BLOB = re.compile(re.escape(BLOB_PREFIX) + r'([A-Za-z0-9+/]+={0,2})')


@dataclass(frozen=True)
class ChannelCodec:

    """Encoder/decoder pair of one carrier

    ``encode(bits, carrier=None, **params)`` returns the payload (text,
    schedule, images or clip), ``decode(delivered, n, **params)`` returns
    n recovered bits.
    """
    id: str
    modality: str
    encode: object
    decode: object


@dataclass(frozen=True)
class TimingSchedule:

    """(send_time_ms, message) pairs; gap short = 0, long = 1"""
    events: tuple

    @property
    def times(self):
        return [t for t, _ in self.events]


def _bits(bits):
    return np.asarray(bits, dtype=np.uint8)


def build_carrier(count_slots, n, rng=None):
    """Join corpus sentences in seeded order until n slots are available"""
    rng = rng or SplitMix64(0)
    corpus = benign_corpus()
    start = rng.randrange(len(corpus))
    sentences = []
    i = start
    while True:
        sentences.append(corpus[i % len(corpus)])
        text = ' '.join(sentences)
        if count_slots(text) >= n:
            return text
        i += 1
        if i - start > 100 * len(corpus):
            raise ValueError('corpus cannot carry %d bits' % n)


# invisible characters

def encode_zero_width(bits, carrier=None, rng=None):
    """ZWSP (0) or ZWNJ (1) after each space, Tag characters for the rest"""
    bits = _bits(bits)
    if carrier is None:
        carrier = build_carrier(lambda t: t.count(' '), len(bits), rng)
    parts = carrier.split(' ')
    k = min(len(bits), len(parts) - 1)
    out = [parts[0]]
    for i, part in enumerate(parts[1:]):
        mark = (ZWNJ if bits[i] else ZWSP) if i < k else ''
        out.append(mark + part)
    tail = ''.join(TAG1 if b else TAG0 for b in bits[k:])
    return ' '.join(out) + tail


def decode_zero_width(text, n):
    symbols = {ZWSP: 0, ZWNJ: 1, TAG0: 0, TAG1: 1}
    return fit_bits([symbols[c] for c in text if c in symbols], n)


def encode_variation_selector(bits, carrier=None, rng=None):
    """VS15 (0) or VS16 (1) after the first letter of each word"""
    bits = _bits(bits)
    if carrier is None:
        carrier = build_carrier(lambda t: len(_WORD_START.findall(t)),
                                len(bits), rng)
    it = iter(bits)

    def repl(m):
        b = next(it, None)
        if b is None:
            return m.group(1)
        return m.group(1) + (VS16 if b else VS15)
    return _WORD_START.sub(repl, carrier)


def decode_variation_selector(text, n):
    return fit_bits([int(c == VS16) for c in text if c in (VS15, VS16)], n)


def encode_bidi(bits, carrier=None, rng=None):
    """LRM (0) or RLM (1) after each space"""
    bits = _bits(bits)
    if carrier is None:
        carrier = build_carrier(lambda t: t.count(' '), len(bits), rng)
    parts = carrier.split(' ')
    if len(parts) - 1 < len(bits):
        raise ValueError('carrier has too few spaces')
    out = [parts[0]]
    for i, part in enumerate(parts[1:]):
        mark = (RLM if bits[i] else LRM) if i < len(bits) else ''
        out.append(mark + part)
    return ' '.join(out)


def decode_bidi(text, n):
    return fit_bits([int(c == RLM) for c in text if c in (LRM, RLM)], n)


@functools.lru_cache(maxsize=None)
def homoglyph_twins():
    """Latin lowercase letter -> Cyrillic lookalike"""
    twins = {}
    for src, dst in sorted(load_confusables().items()):
        if 0x430 <= src <= 0x44F and 'a' <= dst <= 'z':
            twins.setdefault(dst, chr(src))
    return twins


def encode_homoglyph(bits, carrier=None, rng=None):
    """Cyrillic twin (1) or Latin letter (0) at every eligible letter"""
    bits = _bits(bits)
    twins = homoglyph_twins()
    if carrier is None:
        carrier = build_carrier(lambda t: sum(c in twins for c in t),
                                len(bits), rng)
    out = []
    i = 0
    for c in carrier:
        if c in twins and i < len(bits):
            out.append(twins[c] if bits[i] else c)
            i += 1
        else:
            out.append(c)
    if i < len(bits):
        raise ValueError('carrier has too few eligible letters')
    return ''.join(out)


def decode_homoglyph(text, n):
    twins = homoglyph_twins()
    cyrillic = set(twins.values())
    return fit_bits([int(c in cyrillic) for c in text
                     if c in twins or c in cyrillic], n)


# visible formatting

def encode_whitespace(bits, carrier=None, rng=None):
    """b + 1 spaces between consecutive words"""
    bits = _bits(bits)
    if carrier is None:
        carrier = build_carrier(lambda t: t.count(' '), len(bits), rng)
    parts = carrier.split(' ')
    if len(parts) - 1 < len(bits):
        raise ValueError('carrier has too few spaces')
    gaps = [' ' * (int(b) + 1) for b in bits]
    gaps += [' '] * (len(parts) - 1 - len(gaps))
    return parts[0] + ''.join(g + p for g, p in zip(gaps, parts[1:]))


def decode_whitespace(text, n):
    return fit_bits([int(len(g) > 1.5) for g in _SPACES.findall(text)], n)


def encode_punctuation(bits, carrier=None, rng=None):
    """Sentence i ends with b + 1 full stops"""
    bits = _bits(bits)
    if carrier is None:
        carrier = build_carrier(lambda t: t.count('.'), len(bits), rng)
    it = iter(bits)

    def repl(m):
        b = next(it, 0)
        return '.' * (int(b) + 1)
    if carrier.count('.') < len(bits):
        raise ValueError('carrier has too few sentences')
    return re.sub(r'\.', repl, carrier)


def decode_punctuation(text, n):
    return fit_bits([int(len(r) >= 2) for r in _DOTS.findall(text)], n)


def encode_json_key_order(bits, carrier=None, rng=None):
    """One key pair per bit: sorted order (0) or reversed order (1)"""
    obj = {}
    for i, b in enumerate(_bits(bits)):
        keys = ('f%03da' % i, 'f%03db' % i)
        for k in (keys[::-1] if b else keys):
            obj[k] = 'v%03d' % i
    return json.dumps(obj)


def decode_json_key_order(text, n):
    try:
        pairs = json.loads(text, object_pairs_hook=lambda p: p)
    except ValueError:
        return fit_bits([], n)
    if not isinstance(pairs, list):
        return fit_bits([], n)
    pos = {k: i for i, (k, _) in enumerate(p for p in pairs
                                          if isinstance(p, tuple))}
    bits = []
    for i in range(n):
        a, b = pos.get('f%03da' % i), pos.get('f%03db' % i)
        bits.append(int(a is not None and b is not None and b < a))
    return fit_bits(bits, n)


def _filler(n):
    return bytes((37 * i + 11) % 256 for i in range(n))


def encode_base64_blob(bits, carrier=None, rng=None):
    """Secret bytes plus filler as a base64 attachment of a sentence"""
    data = bits_to_bytes(bits)
    data += _filler(max(BLOB_BYTES - len(data), 0))
    if carrier is None:
        corpus = benign_corpus()
        carrier = corpus[(rng or SplitMix64(0)).randrange(len(corpus))]
    return '%s %s%s' % (carrier, BLOB_PREFIX,
                        base64.b64encode(data).decode('ascii'))


def decode_base64_blob(text, n):
    match = _BLOB.search(text)
    if match is None:
        return fit_bits([], n)
    try:
        data = base64.b64decode(match.group(1), validate=True)
    except (binascii.Error, ValueError):
        return fit_bits([], n)
    return fit_bits(bytes_to_bits(data), n)


# linguistic choices

def _members(min_size=2):
    return {w: (g, i) for g in load_lexicon().synonym_groups
            if len(g) >= min_size for i, w in enumerate(g)}


def _count_words(members):
    return lambda t: sum(w.lower() in members for w in _WORD.findall(t))


def encode_synonym(bits, carrier=None, rng=None, bits_per_word=1):
    """Pick a group member per slot word: head/first alternate for one
    bit, one of four members for two bits"""
    bits = _bits(bits)
    size = 2 ** bits_per_word
    members = _members(size)
    if len(bits) % bits_per_word:
        bits = fit_bits(bits, len(bits) + bits_per_word -
                        len(bits) % bits_per_word)
    symbols = [bits_to_int(bits[i:i + bits_per_word])
               for i in range(0, len(bits), bits_per_word)]
    if carrier is None:
        carrier = build_carrier(_count_words(members), len(symbols), rng)
    it = iter(symbols)

    def repl(m):
        word = m.group(0)
        entry = members.get(word.lower())
        if entry is None:
            return word
        s = next(it, None)
        if s is None:
            return word
        return match_case(entry[0][s], word)
    out = _WORD.sub(repl, carrier)
    if next(it, None) is not None:
        raise ValueError('carrier has too few synonym slots')
    return out


def decode_synonym(text, n, bits_per_word=1):
    members = _members(2 ** bits_per_word)
    bits = []
    for word in _WORD.findall(text):
        entry = members.get(word.lower())
        if entry is not None:
            bits.extend(int_to_bits(min(entry[1], 2 ** bits_per_word - 1),
                                    bits_per_word))
    return fit_bits(bits, n)


@functools.lru_cache(maxsize=None)
def _contraction_res():
    pairs = load_lexicon().contraction_pairs
    contract = {e.lower(): c for c, e in pairs}
    forms = sorted(set(contract) | {c.lower() for c, _ in pairs},
                   key=len, reverse=True)
    expanded = re.compile(r"(?<![\w'])(%s)(?![\w'])" % '|'.join(
        re.escape(e) for e in sorted(contract, key=len, reverse=True)),
        re.IGNORECASE)
    both = re.compile(r"(?<![\w'])(%s)(?![\w'])" %
                      '|'.join(map(re.escape, forms)), re.IGNORECASE)
    return contract, expanded, both


def encode_contraction(bits, carrier=None, rng=None):
    """Expanded form (0) or contracted form (1) at each slot phrase"""
    bits = _bits(bits)
    contract, expanded, _ = _contraction_res()
    if carrier is None:
        carrier = build_carrier(lambda t: len(expanded.findall(t)),
                                len(bits), rng)
    it = iter(bits)

    def repl(m):
        b = next(it, None)
        if not b:
            return m.group(0)
        return match_case(contract[m.group(0).lower()], m.group(0))
    return expanded.sub(repl, carrier)


def decode_contraction(text, n):
    contract, _, both = _contraction_res()
    return fit_bits([int(m.group(0).lower() not in contract)
                     for m in both.finditer(text.replace('\u2019', "'"))], n)


def _capitalize(s):
    return s[:1].upper() + s[1:]


def encode_voice(bits, carrier=None, rng=None):
    """One fixture sentence per bit, active (0) or passive (1)"""
    lex = load_lexicon()
    fixtures = lex.fixtures
    start = (rng or SplitMix64(0)).randrange(len(fixtures))
    sentences = []
    for i, b in enumerate(_bits(bits)):
        subj, part, obj, aux = fixtures[(start + i) % len(fixtures)]
        if b:
            s = '%s %s %s by %s.' % (obj, aux, part, subj)
        else:
            s = '%s %s %s.' % (subj, lex.past(part), obj)
        sentences.append(_capitalize(s))
    return ' '.join(sentences)


def decode_voice(text, n):
    lex = load_lexicon()
    sentences = [s for s in text.split('.') if s.strip()]
    return fit_bits([int(lex.is_passive(s)) for s in sentences], n)


# timing

def encode_timing(bits, base_msg='Status update.', short_ms=200,
                  long_ms=800, start=0):
    """L + 1 sends whose gaps carry the bits"""
    if not 0 < short_ms < long_ms:
        raise ValueError('need 0 < short_ms < long_ms')
    t = start
    events = [(t, base_msg)]
    for b in _bits(bits):
        t += long_ms if b else short_ms
        events.append((t, base_msg))
    return TimingSchedule(tuple(events))


def decode_timing(release_times, n, threshold_ms=500):
    """Bits from observed inter-release intervals (long = 1)"""
    times = np.asarray(release_times, dtype=float)
    return fit_bits((np.diff(times) > threshold_ms).astype(np.uint8), n)


# images

def lsb_positions(shape, n, seed=0):
    """n distinct seeded pixel indices of an image of the given shape"""
    size = shape[0] * shape[1]
    if n > size:
        raise ValueError('image has only %d pixels' % size)
    if n == size:
        return np.arange(size)
    return np.random.default_rng(seed).choice(size, n, replace=False)


def embed_lsb(img, bits, bit_position=0, positions=None, channel=2):
    """Write one bit per pixel into bit ``bit_position`` of a channel"""
    img = as_rgb(img).copy()
    bits = _bits(bits)
    if positions is None:
        positions = np.arange(len(bits))
    plane = img[..., channel].reshape(-1)
    mask = np.uint8(1 << bit_position)
    plane[positions] = (plane[positions] & ~mask) | (bits << bit_position)
    img[..., channel] = plane.reshape(img.shape[:2])
    return img


def extract_lsb(img, n, bit_position=0, positions=None, channel=2):
    img = as_rgb(img)
    if positions is None:
        positions = np.arange(n)
    plane = img[..., channel].reshape(-1)
    return fit_bits((plane[positions] >> bit_position) & 1, n)


def encode_mean_luma(bits, covers, low=64., high=192.):
    """Shift the mean luma of cover i to low (0) or high (1)"""
    bits = _bits(bits)
    if len(covers) < len(bits):
        raise ValueError('need one cover per bit')
    return [shift_mean_luma(c, high if b else low)[0]
            for b, c in zip(bits, covers)]


def decode_mean_luma(images, n, threshold=128.):
    return fit_bits([int(mean_luma(img) > threshold) for img in images], n)


def permutation_from_index(index, n):
    """Permutation of range(n) with factorial-base (Lehmer) index"""
    items = list(range(n))
    perm = []
    for k in range(n, 0, -1):
        f = math.factorial(k - 1)
        i, index = divmod(index, f)
        perm.append(items.pop(i))
    return perm


def index_of_permutation(perm):
    items = sorted(perm)
    index = 0
    for k, p in enumerate(perm):
        i = items.index(p)
        index += i * math.factorial(len(perm) - 1 - k)
        items.pop(i)
    return index


def sequence_bits(n_images):
    return int(math.floor(math.log2(math.factorial(n_images))))


def encode_sequence(bits, covers):
    """Emit covers in the permutation whose index encodes the bits"""
    k = sequence_bits(len(covers))
    perm = permutation_from_index(bits_to_int(fit_bits(bits, k)), len(covers))
    return [covers[i] for i in perm]


def decode_sequence(images, n, covers):
    """Match each delivered image to its nearest cover, read the index"""
    refs = [as_rgb(c).astype(int) for c in covers]
    perm = []
    for img in images:
        img = as_rgb(img).astype(int)
        dist = [np.abs(img - r).mean() if r.shape == img.shape else np.inf
                for r in refs]
        perm.append(int(np.argmin(dist)))
    k = sequence_bits(len(covers))
    if sorted(perm) != list(range(len(covers))):
        return fit_bits([], n)
    index = index_of_permutation(perm) % 2 ** k
    return fit_bits(int_to_bits(index, k), n)


# audio

def peak_amplitude(clip, low_hz=20., high_hz=20000.):
    """Amplitude of the loudest in-band spectral component"""
    x = clip.samples if clip.samples.ndim == 1 else clip.samples[:, 0]
    spec = np.abs(rfft(x))
    freqs = rfftfreq(len(x), 1. / clip.sample_rate)
    band = (freqs >= low_hz) & (freqs <= high_hz)
    return 2 * spec[band].max() / len(x)


def _symbols(clip, n, baud):
    sym = int(clip.sample_rate // baud)
    if n * sym > len(clip):
        raise ValueError('clip too short for %d symbols at %g baud' %
                         (n, baud))
    return sym


def encode_ultrasonic_bfsk(bits, clip, f0=21500., f1=22500., baud=50,
                           level_db=-15.):
    """One tone per symbol at f0 (0) or f1 (1), level_db below the peak"""
    bits = _bits(bits)
    if clip.nyquist <= max(f0, f1):
        raise ValueError('sample rate too low for the carrier')
    sym = _symbols(clip, len(bits), baud)
    amp = peak_amplitude(clip) * 10 ** (level_db / 20.)
    x = clip.samples.copy()
    for i, b in enumerate(bits):
        t = (i * sym + np.arange(sym)) / clip.sample_rate
        x[i * sym:(i + 1) * sym] += amp * np.sin(2 * np.pi * (f1 if b else f0)
                                                 * t)
    return AudioClip(x, clip.sample_rate)


def decode_ultrasonic_bfsk(clip, n, f0=21500., f1=22500., baud=50,
                           level_db=-15.):
    sym = int(clip.sample_rate // baud)
    ref = peak_amplitude(clip) * 10 ** (level_db / 20.)
    bits = []
    for i in range(min(n, len(clip) // sym)):
        seg = clip.samples[i * sym:(i + 1) * sym]
        a0 = tone_amplitude(seg, f0, clip.sample_rate)
        a1 = tone_amplitude(seg, f1, clip.sample_rate)
        bits.append(int(max(a0, a1) >= ref / 4 and a1 > a0))
    return fit_bits(bits, n)


def encode_subperceptual(bits, clip, freq=5000., baud=50, level_db=-60.):
    """Narrowband tone present (1) or absent (0) per symbol"""
    bits = _bits(bits)
    sym = _symbols(clip, len(bits), baud)
    amp = peak_amplitude(clip) * 10 ** (level_db / 20.)
    x = clip.samples.copy()
    for i, b in enumerate(bits):
        if b:
            t = (i * sym + np.arange(sym)) / clip.sample_rate
            x[i * sym:(i + 1) * sym] += amp * np.sin(2 * np.pi * freq * t)
    return AudioClip(x, clip.sample_rate)


def decode_subperceptual(clip, n, freq=5000., baud=50, level_db=-60.):
    sym = int(clip.sample_rate // baud)
    ref = peak_amplitude(clip) * 10 ** (level_db / 20.)
    bits = []
    for i in range(min(n, len(clip) // sym)):
        seg = clip.samples[i * sym:(i + 1) * sym]
        bits.append(int(tone_amplitude(seg, freq, clip.sample_rate) >=
                        ref / 2))
    return fit_bits(bits, n)


def codecs():
    """All channel codecs of the benchmark"""
    partial = functools.partial
    return [
        ChannelCodec('zero_width_tag', 'text', encode_zero_width,
                     decode_zero_width),
        ChannelCodec('variation_selector', 'text', encode_variation_selector,
                     decode_variation_selector),
        ChannelCodec('bidi_control', 'text', encode_bidi, decode_bidi),
        ChannelCodec('homoglyph', 'text', encode_homoglyph, decode_homoglyph),
        ChannelCodec('json_key_order', 'text', encode_json_key_order,
                     decode_json_key_order),
        ChannelCodec('whitespace_count', 'text', encode_whitespace,
                     decode_whitespace),
        ChannelCodec('punctuation_count', 'text', encode_punctuation,
                     decode_punctuation),
        ChannelCodec('synonym_1bit', 'text', encode_synonym, decode_synonym),
        ChannelCodec('synonym_2bit', 'text',
                     partial(encode_synonym, bits_per_word=2),
                     partial(decode_synonym, bits_per_word=2)),
        ChannelCodec('contraction', 'text', encode_contraction,
                     decode_contraction),
        ChannelCodec('active_passive', 'text', encode_voice, decode_voice),
        ChannelCodec('base64_blob', 'text', encode_base64_blob,
                     decode_base64_blob),
        ChannelCodec('timing_interval', 'timing', encode_timing,
                     decode_timing),
        ChannelCodec('lsb_bit0', 'image', partial(embed_lsb, bit_position=0),
                     partial(extract_lsb, bit_position=0)),
        ChannelCodec('lsb_bit1', 'image', partial(embed_lsb, bit_position=1),
                     partial(extract_lsb, bit_position=1)),
        ChannelCodec('mean_luma', 'image', encode_mean_luma,
                     decode_mean_luma),
        ChannelCodec('sequence_perm', 'image_sequence', encode_sequence,
                     decode_sequence),
        ChannelCodec('ultrasonic_bfsk', 'audio', encode_ultrasonic_bfsk,
                     decode_ultrasonic_bfsk),
        ChannelCodec('subperceptual_tone', 'audio', encode_subperceptual,
                     decode_subperceptual),
    ]


def codec(id):
    for c in codecs():
        if c.id == id:
            return c
    raise KeyError('unknown channel %r' % id)
