# Copyright 2024-2025 egressmon authors, MIT license
"""Some utility functions"""

import functools
import hashlib
import time

import numpy as np
from pkg_resources import resource_filename

MASK64 = (1 << 64) - 1


def cache(f):
    cache = f.cache = {}

    @functools.wraps(f)
    def _f(*args, **kwargs):
        key = str(args) + str(kwargs)
        if key not in cache:
            cache[key] = f(*args, **kwargs)
        return cache[key]
    return _f


LOGGING_DEFAULT_CONFIG = {
    'version': 1,
    'disable_existing_loggers': False,
    'capture_warnings': True,
    'formatters': {
        'file': {
            'format': ('%(asctime)s %(module)-9s%(process)-6d%(levelname)-8s'
                       '%(message)s')
        },
        'console': {
            'format': '%(levelname)-8s%(message)s'
        },
        'audit': {
            'format': '%(message)s'
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'console',
            'level': None,
        },
        'file': {
            'class': 'logging.FileHandler',
            'formatter': 'file',
            'level': None,
            'filename': None,
        },
        'audit': {
            'class': 'logging.FileHandler',
            'formatter': 'audit',
            'level': 'INFO',
            'filename': None,
            'encoding': 'utf-8',
        },
    },
    'loggers': {
        'egressmon': {
            'handlers': ['console', 'file'],
            'level': 'DEBUG',
            'propagate': False,
        },
        'egressmon.audit': {
            'handlers': ['audit'],
            'level': 'INFO',
            'propagate': False,
        },
        'py.warnings': {
            'handlers': ['console', 'file'],
            'level': 'DEBUG',
            'propagate': False,
        }

    }
}


class SplitMix64(object):

    """Seeded 64 bit generator used for every benchmark secret

    Each call of :meth:`next` advances the state by the golden-ratio
    increment 0x9E3779B97F4A7C15 and returns the state passed through the
    two xor-shift-multiply rounds (multipliers 0xBF58476D1CE4E5B9 and
    0x94D049BB133111EB, shifts 30, 27, 31). Bits are taken most
    significant first, so a secret of L bits is reproducible from the seed
    alone.
    """

    def __init__(self, seed=0):
        self.state = seed & MASK64

    def next(self):
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def bits(self, n):
        """Return n bits as uint8 array"""
        out = []
        while len(out) < n:
            word = self.next()
            out.extend((word >> (63 - i)) & 1 for i in range(64))
        return np.array(out[:n], dtype=np.uint8)

    def random(self):
        """Float in [0, 1) with 53 bits of precision"""
        return (self.next() >> 11) / float(1 << 53)

    def randrange(self, n):
        return int(self.random() * n)


class SimClock(object):

    """Simulated monotonic clock in milliseconds"""

    def __init__(self, start=0):
        self.t = start

    def now(self):
        return self.t

    def advance(self, ms):
        if ms < 0:
            raise ValueError('simulated time does not run backwards')
        self.t += ms
        return self.t

    def set(self, t):
        if t < self.t:
            raise ValueError('simulated time does not run backwards')
        self.t = t


class MonotonicClock(object):

    def now(self):
        return int(time.monotonic() * 1000)


def sha256(data):
    return hashlib.sha256(data).digest()


def int_to_bits(value, n):
    return np.array([(value >> (n - 1 - i)) & 1 for i in range(n)],
                    dtype=np.uint8)


def bits_to_int(bits):
    value = 0
    for b in bits:
        value = (value << 1) | int(b)
    return value


def bytes_to_bits(data):
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8))


def bits_to_bytes(bits):
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes()


def fit_bits(bits, n):
    """Truncate or zero-pad bits to length n"""
    bits = np.asarray(bits, dtype=np.uint8)[:n]
    if len(bits) < n:
        bits = np.hstack((bits, np.zeros(n - len(bits), dtype=np.uint8)))
    return bits


def data_lines(name):
    """Lines of a packaged data file with comments and blanks removed"""
    fname = resource_filename('egressmon', 'data/%s' % name)
    with open(fname, encoding='utf-8') as f:
        lines = [l.split('#', 1)[0].rstrip('\n') for l in f]
    return [l for l in lines if l.strip()]
