# Copyright 2024-2025 egressmon authors, MIT license
"""
Media legitimacy tokens and the accreditor key chain

A token is a :class:`LegitimacyClaim` signed with Ed25519. The media
chokepoint exempts a payload from scrambling iff

(i) the claimed content hash equals the SHA-256 of the payload bytes,
(ii) the claimed {kind, data class} pair is authorized at boot,
(iii) the signature verifies under a boot-trusted key or a key of the
      broker's live pool.

Keys come from the :class:`Accreditor` broker in two stages: a launch
authority signed by the root key yields a producer identity, the identity
yields one per-process signing key reachable only through a
:class:`SignHandle`. Both mints happen at most once per producer id. A
handle carries a random secret that the broker checks on every signature;
re-issuing a handle replaces the secret and revokes earlier handles.

Command line tool: ``egressmon-legit COMMAND ...``
"""

import argparse
from dataclasses import dataclass
import hmac
import json
import logging
import os
import secrets
import socketserver
import struct
import threading
import time

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric import ed25519

from egressmon.payload import LegitimacyError, MediaKind, ParseError
from egressmon.util import sha256

log = logging.getLogger('egressmon.legitimacy')

CLAIM_VERSION = 1
TOKEN_SUFFIX = '.legit'
SIGNATURE_BYTES = 64
HANDLE_SECRET_BYTES = 32

OP_MINT_IDENTITY = 1
OP_MINT_KEY = 2
OP_SIGN = 3
OP_TRUST_POOL = 4
STATUS_OK = 0
STATUS_ERROR = 1


def _lp(text):
    data = text.encode('utf-8') if isinstance(text, str) else bytes(text)
    if len(data) > 0xFFFF:
        raise ValueError('field longer than 65535 bytes')
    return struct.pack('>H', len(data)) + data


def _read_lp(buf, pos):
    if pos + 2 > len(buf):
        raise ValueError('truncated length prefix')
    n, = struct.unpack_from('>H', buf, pos)
    pos += 2
    if pos + n > len(buf):
        raise ValueError('truncated field')
    return bytes(buf[pos:pos + n]), pos + n


def raw_public(key):
    """32 raw bytes of an Ed25519 public or private key's public half"""
    if isinstance(key, ed25519.Ed25519PrivateKey):
        key = key.public_key()
    return key.public_bytes(encoding=serialization.Encoding.Raw,
                            format=serialization.PublicFormat.Raw)


def raw_private(key):
    return key.private_bytes(
        encoding=serialization.Encoding.Raw,
        format=serialization.PrivateFormat.Raw,
        encryption_algorithm=serialization.NoEncryption())


def _verify(public_raw, signature, data):
    try:
        ed25519.Ed25519PublicKey.from_public_bytes(public_raw).verify(
            signature, data)
    except (InvalidSignature, ValueError):
        return False
    return True


@dataclass(frozen=True)
class LegitimacyClaim:
    kind: MediaKind
    data_class: str
    content_hash: bytes
    producer_id: str
    launcher_id: str
    version: int = CLAIM_VERSION

    def __post_init__(self):
        object.__setattr__(self, 'kind', MediaKind.parse(self.kind))
        if len(self.content_hash) != 32:
            raise ValueError('content hash must be 32 bytes')

    def to_bytes(self):
        """Canonical serialization, the signed message"""
        return (struct.pack('>BB', self.version, self.kind.value) +
                _lp(self.data_class) + bytes(self.content_hash) +
                _lp(self.producer_id) + _lp(self.launcher_id))

    @classmethod
    def from_bytes(cls, data, return_end=False):
        if len(data) < 2:
            raise ValueError('truncated claim')
        version, kind = struct.unpack_from('>BB', data, 0)
        if version != CLAIM_VERSION:
            raise ValueError('unsupported claim version %d' % version)
        data_class, pos = _read_lp(data, 2)
        content_hash = bytes(data[pos:pos + 32])
        producer_id, pos = _read_lp(data, pos + 32)
        launcher_id, pos = _read_lp(data, pos)
        claim = cls(MediaKind(kind), data_class.decode('utf-8'),
                    content_hash, producer_id.decode('utf-8'),
                    launcher_id.decode('utf-8'), version)
        return (claim, pos) if return_end else claim


@dataclass(frozen=True)
class LegitimacyToken:
    claim: LegitimacyClaim
    signature: bytes

    def to_bytes(self):
        """Sidecar form: canonical claim followed by the signature"""
        return self.claim.to_bytes() + bytes(self.signature)

    @classmethod
    def from_bytes(cls, data):
        claim, pos = LegitimacyClaim.from_bytes(data, return_end=True)
        signature = bytes(data[pos:])
        if len(signature) != SIGNATURE_BYTES:
            raise ValueError('signature must be 64 bytes')
        return cls(claim, signature)


def read_token(fname):
    """Token from the sidecar file next to a media file"""
    with open(fname + TOKEN_SUFFIX, 'rb') as f:
        return LegitimacyToken.from_bytes(f.read())


def write_token(fname, token):
    with open(fname + TOKEN_SUFFIX, 'wb') as f:
        f.write(token.to_bytes())


@dataclass(frozen=True)
class TrustSet:

    """Keys and {kind, data class} pairs published at boot"""
    trusted_keys: frozenset = frozenset()
    authorized_pairs: frozenset = frozenset()

    def __post_init__(self):
        keys = frozenset(bytes(k) for k in self.trusted_keys)
        if any(len(k) != 32 for k in keys):
            raise ValueError('trusted keys must be 32 raw bytes')
        pairs = frozenset((MediaKind.parse(k), str(c))
                          for k, c in self.authorized_pairs)
        object.__setattr__(self, 'trusted_keys', keys)
        object.__setattr__(self, 'authorized_pairs', pairs)

    def to_json(self):
        return {'keys': sorted(k.hex() for k in self.trusted_keys),
                'authorized': [{'kind': k.label, 'dataClass': c} for k, c in
                               sorted(self.authorized_pairs,
                                      key=lambda p: (p[0].value, p[1]))]}

    @classmethod
    def from_json(cls, obj):
        try:
            keys = [bytes.fromhex(k) for k in obj.get('keys', ())]
            pairs = [(p['kind'], p['dataClass'])
                     for p in obj.get('authorized', ())]
        except (AttributeError, KeyError, TypeError, ValueError) as ex:
            raise LegitimacyError('malformed trust set: %s' % ex)
        return cls(frozenset(keys), frozenset(pairs))

    @classmethod
    def load(cls, fname):
        with open(fname, encoding='utf-8') as f:
            return cls.from_json(json.load(f))

    def dump(self, fname):
        with open(fname, 'w', encoding='utf-8') as f:
            json.dump(self.to_json(), f, indent=2)


def build_verifier(trust, live_pool=None):
    """Return ``verify(content_hash, token) -> bool``

    :param trust: boot :class:`TrustSet`, captured as snapshot
    :param live_pool: optional callable returning the broker's current
        signing keys (raw bytes)
    """
    keys = frozenset(trust.trusted_keys)
    pairs = frozenset(trust.authorized_pairs)

    def verify(content_hash, token):
        if token is None:
            return False
        if isinstance(token, (bytes, bytearray)):
            try:
                token = LegitimacyToken.from_bytes(token)
            except ValueError:
                return False
        claim = token.claim
        if claim.content_hash != bytes(content_hash):
            return False
        if (claim.kind, claim.data_class) not in pairs:
            return False
        candidates = keys
        if live_pool is not None:
            candidates = candidates | frozenset(live_pool())
        message = claim.to_bytes()
        for key in candidates:
            if _verify(key, token.signature, message):
                log.debug('exempt %s payload of launcher %r',
                          claim.kind.label, claim.launcher_id)
                return True
        return False
    return verify


@dataclass(frozen=True)
class LaunchAuthority:

    """Root-signed permission to launch a producer job"""
    launcher_id: str
    expiry: int
    nonce: bytes
    signature: bytes = b''

    def message(self):
        return (_lp(self.launcher_id) + struct.pack('>Q', self.expiry) +
                bytes(self.nonce))

    def to_bytes(self):
        return self.message() + bytes(self.signature)

    @classmethod
    def from_bytes(cls, data, return_end=False):
        launcher_id, pos = _read_lp(data, 0)
        if pos + 8 + 16 + SIGNATURE_BYTES > len(data):
            raise ValueError('truncated launch authority')
        expiry, = struct.unpack_from('>Q', data, pos)
        nonce = bytes(data[pos + 8:pos + 24])
        end = pos + 24 + SIGNATURE_BYTES
        auth = cls(launcher_id.decode('utf-8'), expiry, nonce,
                   bytes(data[pos + 24:end]))
        return (auth, end) if return_end else auth


def issue_launch_authority(root_key, launcher_id, lifetime=3600, now=None,
                           nonce=None):
    now = time.time() if now is None else now
    auth = LaunchAuthority(launcher_id, int(now + lifetime),
                           nonce or os.urandom(16))
    return LaunchAuthority(auth.launcher_id, auth.expiry, auth.nonce,
                           root_key.sign(auth.message()))


@dataclass(frozen=True)
class ProducerIdentity:
    producer_id: str
    launcher_id: str
    identity_pubkey: bytes
    generator: bool = True
    endorsement: bytes = b''

    def message(self):
        return (_lp(self.producer_id) + _lp(self.launcher_id) +
                bytes(self.identity_pubkey) + bytes([int(self.generator)]))


class SignHandle(object):

    """Signing capability of one producer process"""

    __slots__ = ('producer_id', 'launcher_id', 'public_key', 'secret',
                 '_sign')

    def __init__(self, producer_id, launcher_id, public_key, sign,
                 secret=None):
        self.producer_id = producer_id
        self.launcher_id = launcher_id
        self.public_key = public_key
        self.secret = secret
        self._sign = sign

    def sign(self, data):
        return self._sign(bytes(data))

    def __repr__(self):
        return 'SignHandle(%r, %r)' % (self.producer_id, self.launcher_id)


def sign_media(handle, kind, data_class, payload_bytes):
    """Claim the payload under the handle's ids and sign it"""
    claim = LegitimacyClaim(kind, data_class, sha256(bytes(payload_bytes)),
                            handle.producer_id, handle.launcher_id)
    return LegitimacyToken(claim, handle.sign(claim.to_bytes()))


class Accreditor(object):

    """In-process broker holding every private key of the chain

    :param root_public: raw 32 byte root key checking launch authorities
    :param clock: callable returning seconds, used for expiry checks
    """

    def __init__(self, root_public, broker_key=None, clock=time.time):
        self.root_public = bytes(root_public)
        self._key = broker_key or ed25519.Ed25519PrivateKey.generate()
        self.clock = clock
        self._identities = {}
        self._identity_keys = {}
        self._signing_keys = {}
        self._handle_secrets = {}
        self._lock = threading.Lock()

    @property
    def public_key(self):
        return raw_public(self._key)

    def trust_pool(self):
        """Public halves of all issued signing keys"""
        with self._lock:
            return frozenset(raw_public(k) for k in self._signing_keys.values())

    def mint_identity(self, authority, producer_id, generator=True,
                      keypair=None):
        """Stage one: mint a producer identity for a verified launch

        Any keypair brought by the caller is discarded.
        """
        if keypair is not None:
            log.debug('discard caller keypair for producer %r', producer_id)
        if not _verify(self.root_public, authority.signature,
                       authority.message()):
            raise LegitimacyError('launch authority does not verify')
        if authority.expiry < self.clock():
            raise LegitimacyError('launch authority expired')
        log.info('launch authority of %r, nonce %s', authority.launcher_id,
                 authority.nonce.hex())
        with self._lock:
            if producer_id in self._identities:
                raise LegitimacyError('identity for %r already minted' %
                                      producer_id)
            key = ed25519.Ed25519PrivateKey.generate()
            ident = ProducerIdentity(producer_id, authority.launcher_id,
                                     raw_public(key), bool(generator))
            ident = ProducerIdentity(
                ident.producer_id, ident.launcher_id, ident.identity_pubkey,
                ident.generator, self._key.sign(ident.message()))
            self._identities[producer_id] = ident
            self._identity_keys[producer_id] = key
        return ident

    def mint_signing_key(self, identity):
        """Stage two: per-process signing key for a minted identity"""
        with self._lock:
            known = self._identities.get(identity.producer_id)
            if known is None or known != identity:
                raise LegitimacyError('identity %r was not minted here' %
                                      identity.producer_id)
            if not known.generator:
                raise LegitimacyError('identity %r lacks generator permission'
                                      % identity.producer_id)
            if identity.producer_id in self._signing_keys:
                raise LegitimacyError('signing key for %r already minted' %
                                      identity.producer_id)
            key = ed25519.Ed25519PrivateKey.generate()
            self._signing_keys[identity.producer_id] = key
            handle = self._issue_handle(identity.producer_id)
        log.info('signing key for producer %r added to trust pool',
                 identity.producer_id)
        return handle

    def reissue_handle(self, producer_id):
        """New handle for a minted key, earlier handles stop working"""
        with self._lock:
            handle = self._issue_handle(producer_id)
        log.info('signing handle of producer %r re-issued', producer_id)
        return handle

    def _issue_handle(self, producer_id):
        # caller holds self._lock
        key = self._signing_keys.get(producer_id)
        if key is None:
            raise LegitimacyError('no signing key for %r' % producer_id)
        secret = secrets.token_bytes(HANDLE_SECRET_BYTES)
        self._handle_secrets[producer_id] = secret
        ident = self._identities[producer_id]
        return SignHandle(producer_id, ident.launcher_id, raw_public(key),
                          lambda data: self._sign(producer_id, secret, data),
                          secret)

    def _sign(self, producer_id, secret, data):
        with self._lock:
            key = self._signing_keys.get(producer_id)
            expected = self._handle_secrets.get(producer_id)
        if key is None:
            raise LegitimacyError('signing key for %r is gone' % producer_id)
        if expected is None or not hmac.compare_digest(expected, secret):
            raise LegitimacyError('sign handle for %r is revoked or forged'
                                  % producer_id)
        return key.sign(data)

    def identity(self, producer_id):
        try:
            return self._identities[producer_id]
        except KeyError:
            raise LegitimacyError('unknown producer %r' % producer_id)

    # request framing: u32 length, opcode u8, payload

    def handle_request(self, frame):
        """Dispatch one request frame (opcode u8 + payload), return reply

        The reply is a status byte followed by the result bytes or a UTF-8
        error message.
        """
        try:
            if not frame:
                raise ValueError('empty request')
            op, payload = frame[0], bytes(frame[1:])
            if op == OP_MINT_IDENTITY:
                auth, pos = LaunchAuthority.from_bytes(payload,
                                                       return_end=True)
                producer_id, pos = _read_lp(payload, pos)
                generator = payload[pos:pos + 1] != b'\x00'
                ident = self.mint_identity(auth, producer_id.decode('utf-8'),
                                           generator)
                result = ident.identity_pubkey + ident.endorsement
            elif op == OP_MINT_KEY:
                producer_id, _ = _read_lp(payload, 0)
                ident = self.identity(producer_id.decode('utf-8'))
                handle = self.mint_signing_key(ident)
                result = handle.public_key + handle.secret
            elif op == OP_SIGN:
                producer_id, pos = _read_lp(payload, 0)
                end = pos + HANDLE_SECRET_BYTES
                if len(payload) < end:
                    raise ValueError('truncated handle secret')
                result = self._sign(producer_id.decode('utf-8'),
                                    payload[pos:end], payload[end:])
            elif op == OP_TRUST_POOL:
                result = b''.join(sorted(self.trust_pool()))
            else:
                raise ValueError('unknown opcode %d' % op)
        except (LegitimacyError, ValueError, UnicodeDecodeError) as ex:
            return bytes([STATUS_ERROR]) + str(ex).encode('utf-8')
        return bytes([STATUS_OK]) + result

    def serve(self, path):
        """Serve requests on a Unix socket until interrupted"""
        broker = self

        class Handler(socketserver.StreamRequestHandler):

            def handle(self):
                while True:
                    head = self.rfile.read(4)
                    if len(head) < 4:
                        return
                    n, = struct.unpack('>I', head)
                    reply = broker.handle_request(self.rfile.read(n))
                    self.wfile.write(struct.pack('>I', len(reply)) + reply)

        server = socketserver.UnixStreamServer(path, Handler)
        log.info('accreditor listening on %s', path)
        with server:
            server.serve_forever()

    # state file used by the command line tool

    def save(self, fname):
        state = {
            'root': self.root_public.hex(),
            'broker': raw_private(self._key).hex(),
            'identities': {
                p: {'launcher': i.launcher_id, 'generator': i.generator,
                    'key': raw_private(self._identity_keys[p]).hex(),
                    'endorsement': i.endorsement.hex()}
                for p, i in self._identities.items()},
            'signing': {p: raw_private(k).hex()
                        for p, k in self._signing_keys.items()},
            'handles': {p: s.hex() for p, s in self._handle_secrets.items()}}
        fd = os.open(fname, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
        with os.fdopen(fd, 'w', encoding='utf-8') as f:
            json.dump(state, f, indent=2)

    @classmethod
    def load(cls, fname):
        with open(fname, encoding='utf-8') as f:
            state = json.load(f)
        load_key = ed25519.Ed25519PrivateKey.from_private_bytes
        broker = cls(bytes.fromhex(state['root']),
                     load_key(bytes.fromhex(state['broker'])))
        for p, d in state.get('identities', {}).items():
            key = load_key(bytes.fromhex(d['key']))
            broker._identity_keys[p] = key
            broker._identities[p] = ProducerIdentity(
                p, d['launcher'], raw_public(key), d['generator'],
                bytes.fromhex(d['endorsement']))
        for p, k in state.get('signing', {}).items():
            broker._signing_keys[p] = load_key(bytes.fromhex(k))
        for p, s in state.get('handles', {}).items():
            broker._handle_secrets[p] = bytes.fromhex(s)
        return broker


def request(path, op, payload=b''):
    """Send one framed request to a broker socket, return result bytes"""
    import socket
    frame = bytes([op]) + payload
    with socket.socket(socket.AF_UNIX, socket.SOCK_STREAM) as sock:
        sock.connect(path)
        sock.sendall(struct.pack('>I', len(frame)) + frame)
        f = sock.makefile('rb')
        n, = struct.unpack('>I', f.read(4))
        reply = f.read(n)
    if reply[:1] != bytes([STATUS_OK]):
        raise LegitimacyError(reply[1:].decode('utf-8', 'replace'))
    return reply[1:]


def remote_sign_handle(path, producer_id, launcher_id, reply):
    """SignHandle forwarding to a broker socket

    :param reply: result of the OP_MINT_KEY request, public key and secret
    """
    public_key = reply[:32]
    secret = reply[32:32 + HANDLE_SECRET_BYTES]

    def sign(data):
        return request(path, OP_SIGN, _lp(producer_id) + secret + data)
    return SignHandle(producer_id, launcher_id, public_key, sign, secret)


# command line tool

def _load_root_key(fname):
    with open(fname, 'rb') as f:
        return serialization.load_pem_private_key(f.read(), password=None)


def _parse_pair(text):
    try:
        kind, data_class = text.split(':', 1)
        return MediaKind.parse(kind), data_class
    except ValueError:
        raise ParseError('expected KIND:DATACLASS, got %r' % text)


def main(args=None):
    p = argparse.ArgumentParser(description=__doc__.split('\n')[1])
    choices = ('keygen-root', 'mint-identity', 'mint-key', 'sign', 'verify',
               'export-trust', 'serve')
    p.add_argument('command', help='command', choices=choices)
    p.add_argument('file', nargs='?', help='media file (sign, verify)')
    p.add_argument('--root-key', default='root.pem',
                   help='root private key (PEM)')
    p.add_argument('--state', default='broker.json',
                   help='broker state file')
    p.add_argument('--trust', default='trust.json', help='trust set file')
    p.add_argument('--launcher', help='launcher id')
    p.add_argument('--producer', help='producer id')
    p.add_argument('--lifetime', type=int, default=3600,
                   help='launch authority lifetime (s)')
    p.add_argument('--no-generator', action='store_true',
                   help='mint identity without generator permission')
    p.add_argument('--kind', default='image', choices=('image', 'audio'))
    p.add_argument('--data-class', default='chart-render')
    msg = 'authorized pair KIND:DATACLASS for export-trust'
    p.add_argument('--authorize', action='append', default=[], help=msg)
    p.add_argument('--socket', help='Unix socket path for serve')
    args = p.parse_args(args)
    com = args.command
    try:
        if com == 'keygen-root':
            key = ed25519.Ed25519PrivateKey.generate()
            pem = key.private_bytes(
                encoding=serialization.Encoding.PEM,
                format=serialization.PrivateFormat.PKCS8,
                encryption_algorithm=serialization.NoEncryption())
            fd = os.open(args.root_key, os.O_WRONLY | os.O_CREAT |
                         os.O_TRUNC, 0o600)
            with os.fdopen(fd, 'wb') as f:
                f.write(pem)
            print(raw_public(key).hex())
            return
        if com in ('mint-identity', 'mint-key', 'sign') and not args.producer:
            p.error('%s needs --producer' % com)
        if com == 'mint-identity':
            if not args.launcher:
                p.error('mint-identity needs --launcher')
            root = _load_root_key(args.root_key)
            if os.path.exists(args.state):
                broker = Accreditor.load(args.state)
            else:
                broker = Accreditor(raw_public(root))
            auth = issue_launch_authority(root, args.launcher, args.lifetime)
            ident = broker.mint_identity(auth, args.producer,
                                         not args.no_generator)
            broker.save(args.state)
            print(ident.identity_pubkey.hex())
        elif com == 'mint-key':
            broker = Accreditor.load(args.state)
            handle = broker.mint_signing_key(broker.identity(args.producer))
            broker.save(args.state)
            print(handle.public_key.hex())
        elif com == 'sign':
            if not args.file:
                p.error('sign needs a file')
            handle = Accreditor.load(args.state).reissue_handle(args.producer)
            with open(args.file, 'rb') as f:
                token = sign_media(handle, args.kind, args.data_class,
                                   f.read())
            write_token(args.file, token)
            print(args.file + TOKEN_SUFFIX)
        elif com == 'verify':
            if not args.file:
                p.error('verify needs a file')
            pool = None
            if os.path.exists(args.state):
                pool = Accreditor.load(args.state).trust_pool
            verify = build_verifier(TrustSet.load(args.trust), pool)
            with open(args.file, 'rb') as f:
                digest = sha256(f.read())
            try:
                token = read_token(args.file)
            except (OSError, ValueError):
                token = None
            ok = verify(digest, token)
            print('exempt' if ok else 'scramble')
            return 0 if ok else 1
        elif com == 'export-trust':
            broker = Accreditor.load(args.state)
            pairs = [_parse_pair(a) for a in args.authorize]
            TrustSet(broker.trust_pool(), frozenset(pairs)).dump(args.trust)
            print(args.trust)
        elif com == 'serve':
            if not args.socket:
                p.error('serve needs --socket')
            Accreditor.load(args.state).serve(args.socket)
    except (LegitimacyError, ParseError) as ex:
        p.error(str(ex))


if __name__ == '__main__':
    main()
