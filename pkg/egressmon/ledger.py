# Copyright 2024-2025 egressmon authors, MIT license
"""
Per-sink capacity ledger

Each sink owns a leaky bucket of covert-bit tokens. The bucket refills at
``refill_bits_per_sec`` up to ``bucket_bits``; the entropy scanner charges
its estimates against it and the behavioral stage reads the level.

The sink table is bounded by ``max_sinks``. When it is full the
least-recently-charged sink is dropped and its id is remembered in a
second bounded table of ``evicted_memory`` ids. A remembered sink that
returns starts with an empty bucket, a sink never seen before starts full.
"""

from collections import OrderedDict
from dataclasses import dataclass
import logging
import threading

from egressmon.payload import ConfigError

log = logging.getLogger('egressmon.ledger')


@dataclass(frozen=True)
class LedgerConfig:
    bucket_bits: float = 4096.
    refill_bits_per_sec: float = 64.
    max_sinks: int = 1024
    evicted_memory: int = 4096

    def __post_init__(self):
        if not (self.bucket_bits > 0 and self.refill_bits_per_sec > 0 and
                self.max_sinks > 0 and self.evicted_memory > 0):
            raise ConfigError('ledger settings must be positive')


@dataclass(frozen=True)
class Charge:
    covered: bool
    deficit: float = 0.

    @property
    def exhausted(self):
        return not self.covered


class SinkBucket(object):

    __slots__ = ('level_bits', 'last_update')

    def __init__(self, level_bits, last_update):
        self.level_bits = level_bits
        self.last_update = last_update

    def refill(self, now, conf):
        elapsed = max(now - self.last_update, 0) / 1000.
        self.level_bits = min(conf.bucket_bits,
                              self.level_bits + conf.refill_bits_per_sec * elapsed)
        self.last_update = max(now, self.last_update)


class CapacityLedger(object):

    def __init__(self, conf=None):
        if conf is None:
            conf = LedgerConfig()
        elif isinstance(conf, dict):
            conf = LedgerConfig(**conf)
        self.conf = conf
        self._sinks = OrderedDict()
        self._evicted = OrderedDict()
        self._lock = threading.Lock()
        self.evictions = 0

    def __len__(self):
        return len(self._sinks)

    def __contains__(self, sink):
        return sink in self._sinks

    def _bucket(self, sink, now):
        bucket = self._sinks.get(sink)
        if bucket is None:
            self.evict_if_needed()
            level = self._initial_level(sink, forget=True)
            bucket = self._sinks[sink] = SinkBucket(level, now)
        else:
            self._sinks.move_to_end(sink)
            bucket.refill(now, self.conf)
        return bucket

    def _initial_level(self, sink, forget=False):
        if sink in self._evicted:
            if forget:
                del self._evicted[sink]
            return 0.
        return self.conf.bucket_bits

    def evict_if_needed(self):
        """Drop least-recently-charged sinks until a new one fits"""
        while len(self._sinks) >= self.conf.max_sinks:
            sink, _ = self._sinks.popitem(last=False)
            self._evicted[sink] = None
            self._evicted.move_to_end(sink)
            if len(self._evicted) > self.conf.evicted_memory:
                self._evicted.popitem(last=False)
            self.evictions += 1
            log.debug('evict sink %r from capacity ledger', sink)

    def charge(self, sink, bits, now):
        """Refill the sink's bucket up to ``now`` and debit ``bits``

        :return: :class:`Charge`, covered iff the level before the debit
            was at least ``bits``; otherwise the level clamps to zero and
            the deficit is reported
        """
        if bits < 0:
            raise ValueError('cannot charge negative bits')
        with self._lock:
            bucket = self._bucket(sink, now)
            if bucket.level_bits >= bits:
                bucket.level_bits -= bits
                return Charge(True)
            deficit = bits - bucket.level_bits
            bucket.level_bits = 0.
        msg = 'sink %r exhausted its covert-bit budget (deficit %.1f bits)'
        log.info(msg, sink, deficit)
        return Charge(False, deficit)

    def level(self, sink, now):
        """Current level after refill

        Unknown sinks report a full bucket, recently evicted ones an empty
        one.
        """
        with self._lock:
            bucket = self._sinks.get(sink)
            if bucket is None:
                return self._initial_level(sink)
            bucket.refill(now, self.conf)
            return bucket.level_bits
