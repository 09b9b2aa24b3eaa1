# Copyright 2024-2025 egressmon authors, MIT license
"""
Egress data model shared by all other modules

A text message enters the chokepoint as :class:`EgressMessage`, every stage
answers with a :class:`StageVerdict`, and :func:`merge_verdicts` folds the
verdicts into one :class:`EgressOutcome`:

* rewrites compose on the running text,
* delays of enforcing stages add up,
* the first enforcing cancel is sticky and short-circuits,
* auditing stages only contribute findings; their would-be decision is
  recorded as ``would=<action>`` in the finding detail.

Media travels as :class:`MediaPayload`.
"""

from dataclasses import dataclass, field, replace
import enum
import re

MAX_SINK_BYTES = 256


class EgressError(Exception):
    pass


class ConfigError(EgressError):
    pass


class RejectedInput(EgressError):
    pass


class MediaCancelled(EgressError):
    pass


class LegitimacyError(EgressError):
    pass


class ParseError(EgressError):
    pass


class Action(enum.Enum):
    PASS = 'pass'
    REWRITE = 'rewrite'
    DELAY = 'delay'
    CANCEL = 'cancel'


class Posture(enum.Enum):
    AUDIT = 'audit'
    ENFORCE = 'enforce'


class Disposition(enum.Enum):
    DELIVERED = 'delivered'
    CANCELLED = 'cancelled'


class MediaKind(enum.Enum):
    IMAGE = 1
    AUDIO = 2

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        if isinstance(value, int):
            return cls(value)
        try:
            return cls[str(value).upper()]
        except KeyError:
            raise ValueError('unknown media kind %r' % (value,))

    @property
    def label(self):
        return self.name.lower()


_WOULD = re.compile(r'would=(\w+)')


@dataclass(frozen=True)
class Finding:
    stage: str
    channel_class: str
    estimated_bits: float = 0.
    detail: str = ''

    def __post_init__(self):
        if not self.estimated_bits >= 0:
            raise ValueError('estimated_bits must be non-negative')

    @property
    def would(self):
        """Would-be action of an auditing stage, '' for enforced findings"""
        match = _WOULD.search(self.detail)
        return match.group(1) if match else ''

    def audited(self, action):
        detail = 'would=%s' % action.value
        if self.detail:
            detail = '%s; %s' % (detail, self.detail)
        return replace(self, detail=detail)


@dataclass(frozen=True)
class StageVerdict:
    action: Action = Action.PASS
    rewritten_text: str = None
    delay_ms: int = None
    findings: tuple = ()
    stage: str = ''

    def __post_init__(self):
        object.__setattr__(self, 'findings', tuple(self.findings))
        if (self.rewritten_text is not None) != (self.action == Action.REWRITE):
            raise ValueError('rewritten_text is present iff action=rewrite')
        if (self.delay_ms is not None) != (self.action == Action.DELAY):
            raise ValueError('delay_ms is present iff action=delay')
        if self.delay_ms is not None and self.delay_ms < 0:
            raise ValueError('delay_ms must be non-negative')

    @classmethod
    def pass_(cls, findings=()):
        return cls(Action.PASS, findings=findings)

    @classmethod
    def rewrite(cls, text, findings=()):
        return cls(Action.REWRITE, rewritten_text=text, findings=findings)

    @classmethod
    def delay(cls, ms, findings=()):
        return cls(Action.DELAY, delay_ms=int(ms), findings=findings)

    @classmethod
    def cancel(cls, findings=()):
        return cls(Action.CANCEL, findings=findings)

    def with_stage(self, stage):
        return replace(self, stage=stage)


@dataclass(frozen=True)
class EgressMessage:
    sink: str
    text: str
    arrival_time: int = 0


@dataclass(frozen=True)
class MediaPayload:
    kind: MediaKind
    data: bytes
    token: object = None

    def __post_init__(self):
        object.__setattr__(self, 'kind', MediaKind.parse(self.kind))
        if not self.data:
            raise ValueError('media payload is empty')


@dataclass(frozen=True)
class EgressOutcome:
    disposition: Disposition
    final_text: str = None
    total_delay_ms: int = 0
    findings: tuple = field(default=())

    @property
    def delivered(self):
        return self.disposition == Disposition.DELIVERED


def check_sink(sink):
    """Reject sink ids that are empty or longer than 256 UTF-8 bytes"""
    if not isinstance(sink, str) or not sink:
        raise RejectedInput('sink id must be a non-empty string')
    if len(sink.encode('utf-8', 'surrogatepass')) > MAX_SINK_BYTES:
        raise RejectedInput('sink id longer than %d bytes' % MAX_SINK_BYTES)
    return sink


def decode_text(text):
    """Return text as str, raising RejectedInput for invalid UTF-8"""
    if isinstance(text, (bytes, bytearray)):
        try:
            return bytes(text).decode('utf-8')
        except UnicodeDecodeError as ex:
            raise RejectedInput('payload is not valid UTF-8: %s' % ex)
    try:
        text.encode('utf-8')
    except UnicodeEncodeError as ex:
        # lone surrogates cannot come from valid UTF-8
        raise RejectedInput('payload is not valid UTF-8: %s' % ex)
    return text


class OutcomeBuilder(object):

    """Incremental form of :func:`merge_verdicts` used by the runner"""

    def __init__(self, base_text):
        self.text = base_text
        self.delay_ms = 0
        self.findings = []
        self.cancelled = False

    def add(self, verdict, posture):
        """Fold one verdict in, return True once the outcome is final"""
        if self.cancelled:
            return True
        if posture == Posture.AUDIT:
            self._add_audit(verdict)
            return False
        self.findings.extend(verdict.findings)
        if verdict.action == Action.REWRITE:
            self.text = verdict.rewritten_text
        elif verdict.action == Action.DELAY:
            self.delay_ms += verdict.delay_ms
        elif verdict.action == Action.CANCEL:
            self.cancelled = True
        return self.cancelled

    def _add_audit(self, verdict):
        if verdict.action == Action.PASS:
            self.findings.extend(verdict.findings)
            return
        findings = verdict.findings
        if not findings:
            detail = ''
            if verdict.action == Action.DELAY:
                detail = 'delay_ms=%d' % verdict.delay_ms
            findings = [Finding(verdict.stage, 'would-%s' % verdict.action.value,
                                0., detail)]
        self.findings.extend(f.audited(verdict.action) for f in findings)

    def outcome(self):
        if self.cancelled:
            return EgressOutcome(Disposition.CANCELLED, None, self.delay_ms,
                                 tuple(self.findings))
        return EgressOutcome(Disposition.DELIVERED, self.text, self.delay_ms,
                             tuple(self.findings))


def merge_verdicts(base_text, verdicts):
    """Merge (verdict, posture) pairs given in ascending stage priority

    :param base_text: text entering the first stage
    :param verdicts: iterable of ``(StageVerdict, Posture)``
    :return: :class:`EgressOutcome`
    """
    builder = OutcomeBuilder(base_text)
    for verdict, posture in verdicts:
        if builder.add(verdict, Posture(posture)):
            break
    return builder.outcome()
