# Copyright 2024-2025 egressmon authors, MIT license
"""
Audio scrambler

One real FFT over the whole clip, bins outside the audible band and bins
below a perceptual floor relative to the loudest in-band bin are zeroed,
then the inverse FFT. Clips longer than ``MAX_BLOCK_SEC`` are processed in
half-overlapping raised-cosine windows, stereo clips per channel.
"""

from dataclasses import dataclass
import io
import logging

import numpy as np
from scipy.fft import irfft, rfft, rfftfreq
from scipy.io import wavfile

log = logging.getLogger('egressmon.audio')

MAX_BLOCK_SEC = 30


@dataclass(frozen=True)
class AudioClip:

    """Samples in [-1, 1], shape (n,) for mono or (n, channels)"""
    samples: np.ndarray
    sample_rate: int = 48000

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.size == 0:
            raise ValueError('audio clip is empty')
        if self.sample_rate <= 0:
            raise ValueError('sample rate must be positive')
        object.__setattr__(self, 'samples', samples)

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate

    @property
    def nyquist(self):
        return self.sample_rate / 2.


@dataclass(frozen=True)
class ScramblerBand:
    low_hz: float = 20.
    high_hz: float = 20000.
    floor_db: float = -50.

    def __post_init__(self):
        if not 0 <= self.low_hz < self.high_hz:
            raise ValueError('need 0 <= low_hz < high_hz')
        if not self.floor_db < 0:
            raise ValueError('floor_db must be negative')

    @classmethod
    def parse(cls, band, floor_db=-50.):
        """Band from 'LO:HI'"""
        lo, hi = band.split(':')
        return cls(float(lo), float(hi), floor_db)


def _scramble_block(x, fs, band):
    n = len(x)
    spec = rfft(x)
    freqs = rfftfreq(n, 1. / fs)
    out_band = (freqs < band.low_hz) | (freqs > band.high_hz)
    spec[out_band] = 0
    mag = np.abs(spec)
    peak = mag[~out_band].max() if np.any(~out_band) else 0.
    floor = peak * 10 ** (band.floor_db / 20.)
    sub_floor = ~out_band & (mag < floor)
    spec[sub_floor] = 0
    return irfft(spec, n), int(out_band.sum()), int(sub_floor.sum())


def _scramble_mono(x, fs, band):
    block = MAX_BLOCK_SEC * fs
    if len(x) <= block:
        return _scramble_block(x, fs, band)
    hop = block // 2
    # periodic Hann windows at 50 % overlap sum to one
    win = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(block) / block)
    padded = np.concatenate((np.zeros(hop), x, np.zeros(block)))
    out = np.zeros_like(padded)
    n_oob = n_sub = 0
    for start in range(0, len(x) + hop, hop):
        seg, a, b = _scramble_block(padded[start:start + block] * win, fs,
                                    band)
        out[start:start + block] += seg
        n_oob += a
        n_sub += b
    return out[hop:hop + len(x)], n_oob, n_sub


def scramble_audio(clip, band=None):
    """Zero out-of-band and sub-floor bins

    :return: scrambled :class:`AudioClip`, dict with the zeroed bin counts
        ``out_of_band_bins`` and ``sub_floor_bins``
    """
    band = band or ScramblerBand()
    if band.high_hz >= clip.nyquist:
        log.debug('band edge %.0f Hz at or above Nyquist', band.high_hz)
    x = clip.samples
    stats = {'out_of_band_bins': 0, 'sub_floor_bins': 0}
    channels = x[:, None] if x.ndim == 1 else x
    out = np.empty_like(channels)
    for i in range(channels.shape[1]):
        y, n_oob, n_sub = _scramble_mono(channels[:, i], clip.sample_rate,
                                         band)
        out[:, i] = y
        stats['out_of_band_bins'] += n_oob
        stats['sub_floor_bins'] += n_sub
    out = np.clip(out, -1., 1.)
    if x.ndim == 1:
        out = out[:, 0]
    msg = 'zeroed %d out-of-band and %d sub-floor bins'
    log.debug(msg, stats['out_of_band_bins'], stats['sub_floor_bins'])
    return AudioClip(out, clip.sample_rate), stats


def synth_tone(freq, amp=1., duration=1., sample_rate=48000, phase=0.):
    t = np.arange(int(round(duration * sample_rate))) / sample_rate
    return amp * np.sin(2 * np.pi * freq * t + phase)


def synth_chord(freqs=(440., 554., 659.), amp=0.2, duration=1.,
                sample_rate=48000):
    """Audible cover: sum of equal-amplitude sine tones"""
    x = sum(synth_tone(f, amp, duration, sample_rate) for f in freqs)
    return AudioClip(x, sample_rate)


def tone_amplitude(x, freq, sample_rate):
    """Amplitude of a sinusoid at freq in x (Hann-windowed single-bin DFT)"""
    x = np.asarray(x, dtype=float)
    n = len(x)
    win = np.hanning(n)
    phasor = np.exp(-2j * np.pi * freq * np.arange(n) / sample_rate)
    return 2 * abs(np.sum(x * win * phasor)) / np.sum(win)


def spectrum_db(clip):
    """Frequencies and magnitudes in dB relative to the loudest bin"""
    x = clip.samples if clip.samples.ndim == 1 else clip.samples.mean(axis=1)
    mag = np.abs(rfft(x))
    freqs = rfftfreq(len(x), 1. / clip.sample_rate)
    peak = mag.max()
    if peak == 0:
        return freqs, np.full_like(freqs, -np.inf)
    with np.errstate(divide='ignore'):
        db = 20 * np.log10(mag / peak)
    return freqs, db


def dump_spectrum(clip, fname):
    """Write 'frequency<TAB>dB' lines"""
    freqs, db = spectrum_db(clip)
    np.savetxt(fname, np.column_stack((freqs, np.maximum(db, -300.))),
               fmt='%.3f', delimiter='\t', header='freq_hz\tdb',
               comments='# ')


def read_wav(data):
    """Read 16 bit PCM (or float) WAV from bytes or a file name"""
    if isinstance(data, (bytes, bytearray)):
        data = io.BytesIO(data)
    fs, x = wavfile.read(data)
    if x.dtype == np.int16:
        x = x / 32768.
    elif x.dtype == np.int32:
        x = x / 2147483648.
    elif x.dtype == np.uint8:
        x = (x - 128.) / 128.
    return AudioClip(x.astype(float), fs)


def write_wav(clip, fname=None):
    """Write 16 bit PCM WAV, return bytes if fname is None"""
    pcm = np.rint(np.clip(clip.samples, -1., 1.) * 32767).astype(np.int16)
    if fname is not None:
        wavfile.write(fname, clip.sample_rate, pcm)
        return
    buf = io.BytesIO()
    wavfile.write(buf, clip.sample_rate, pcm)
    return buf.getvalue()


def scramble_audio_bytes(data, band=None):
    """Media chokepoint scrambler for WAV payloads"""
    clip, _ = scramble_audio(read_wav(data), band)
    return write_wav(clip)
