# Copyright 2024-2025 egressmon authors, MIT license
"""
egressmon command line scripts and configuration

:func:`run_cmdline` is started by the ``egressmon-bench`` command line
script, :func:`scramble_cmdline` by ``egressmon-scramble``.
Import and call :func:`run` if you want to run a benchmark inside Python
code:

>>> from egressmon import run
>>> rows = run(conf='conf.json', command='text', posture='enforce')

A monitor for a host application is created from the same configuration
file with :func:`create_monitor`.

|
"""

import argparse
from argparse import SUPPRESS
from collections import OrderedDict
from copy import deepcopy
from importlib import import_module
import json
import logging
import logging.config
import os.path
from pkg_resources import resource_filename
import shutil
import sys
import time

import egressmon
from egressmon.audio import (ScramblerBand, dump_spectrum, read_wav,
                             scramble_audio, write_wav)
from egressmon.bench import (BENCHES, FORMATS, BenchConfig, emit_report,
                             run_bench)
from egressmon.image import read_image, scramble_image, write_image
from egressmon.legitimacy import TrustSet, build_verifier
from egressmon.mediator import SeamSet, build_mediator
from egressmon.payload import (ConfigError, EgressError,  # noqa
                               LegitimacyError, MediaCancelled, ParseError,
                               RejectedInput)
from egressmon.util import LOGGING_DEFAULT_CONFIG, MonotonicClock

log = logging.getLogger('egressmon')
log.addHandler(logging.NullHandler())

LOGLEVELS = {0: 'CRITICAL', 1: 'WARNING', 2: 'INFO', 3: 'DEBUG'}
DEFAULT_TRIALS = {'linguistic': 40}
SEAMS = ('license_probe', 'cover_emitter', 'rephrase_model',
         'media_verifier')


def _load_func(plugin):
    """Load and return function from Python module"""
    sys.path.append(os.path.curdir)
    modulename, funcname = plugin.split(':')
    module = import_module(modulename.strip())
    sys.path.pop(-1)
    func = getattr(module, funcname.strip())
    return func


class ConfigJSONDecoder(json.JSONDecoder):

    """Decode JSON config with comments stripped"""

    def decode(self, s):
        s = '\n'.join(l.split('#', 1)[0] for l in s.split('\n'))
        return super(ConfigJSONDecoder, self).decode(s)


def load_config(conf):
    """Configuration dictionary from a file name (None -> empty)"""
    if conf in (None, 'None', 'none', 'null', ''):
        return {}
    if isinstance(conf, dict):
        return deepcopy(conf)
    try:
        with open(conf) as f:
            return json.load(f, cls=ConfigJSONDecoder)
    except ValueError as ex:
        raise ConfigError('Error while parsing the configuration: %s' % ex)
    except IOError as ex:
        raise ConfigError(str(ex))


def configure_logging(loggingc, verbose=0, loglevel=3, logfile=None,
                      auditfile=None):
    if loggingc is None:
        loggingc = deepcopy(LOGGING_DEFAULT_CONFIG)
        if verbose > 3:
            verbose = 3
        loggingc['handlers']['console']['level'] = LOGLEVELS[verbose]
        if logfile is None or loglevel == 0:
            del loggingc['handlers']['file']
            loggingc['loggers']['egressmon']['handlers'] = ['console']
            loggingc['loggers']['py.warnings']['handlers'] = ['console']
        else:
            loggingc['handlers']['file']['level'] = LOGLEVELS[loglevel]
            loggingc['handlers']['file']['filename'] = logfile
        if auditfile is None:
            # findings then show up as INFO records of the package logger
            del loggingc['handlers']['audit']
            loggingc['loggers']['egressmon.audit']['handlers'] = []
            loggingc['loggers']['egressmon.audit']['propagate'] = True
        else:
            loggingc['handlers']['audit']['filename'] = auditfile
    logging.config.dictConfig(loggingc)
    logging.captureWarnings(loggingc.get('capture_warnings', False))


def load_seams(seams=None, trust_set=None, live_pool=None):
    """SeamSet from ``{"seam": "module : function"}`` strings

    A trust set file installs the media verifier unless the configuration
    names one explicitly.
    """
    seams = dict(seams or {})
    unknown = set(seams) - set(SEAMS)
    if unknown:
        raise ConfigError('unknown seams: %s' % ', '.join(sorted(unknown)))
    funcs = {k: _load_func(v) if isinstance(v, str) else v
             for k, v in seams.items()}
    if trust_set is not None and 'media_verifier' not in funcs:
        if isinstance(trust_set, str):
            trust_set = TrustSet.load(trust_set)
        funcs['media_verifier'] = build_verifier(trust_set, live_pool)
    return SeamSet(**funcs)


def create_monitor(conf=None, clock=None, rng=None, **args):
    """Mediator from a configuration file or dictionary

    Keyword arguments overwrite values of the configuration. Without a
    clock the monitor runs on the monotonic system clock.
    """
    conf = load_config(conf)
    conf.update(args)
    seams = load_seams(conf.pop('seams', None), conf.pop('trust_set', None))
    return build_mediator(conf, seams, clock or MonotonicClock(), rng)


def bench_config(args):
    """BenchConfig from the ``bench`` section and top-level overrides"""
    bench = dict(args.pop('bench', None) or {})
    for key in ('trials', 'bits', 'seed', 'channels'):
        if key in args:
            bench[key] = args.pop(key)
    if 'posture' in args:
        bench['posture'] = args['posture']
    channels = bench.get('channels') or ()
    if isinstance(channels, str):
        channels = [c.strip() for c in channels.split(',') if c.strip()]
    return BenchConfig(trials=bench.get('trials'), bits=bench.get('bits', 64),
                       seed=bench.get('seed', 0),
                       posture=bench.get('posture', 'default'),
                       channels=tuple(channels), ledger=bench.get('ledger'))


def run(conf=None, create_config=None, pdb=False, command='text', **args):
    """Main entry point for a direct call from Python

    :param conf: configuration file, see the example configuration
        (``--create-config``) for help and possible arguments. Options in
        args overwrite the configuration from the file.
    :param command: benchmark to run, one of :data:`BENCHES`
    :return: list of :class:`~egressmon.bench.BenchRow`
    """
    time_start = time.time()
    if pdb:
        import traceback
        import pdb

        def info(type, value, tb):
            traceback.print_exception(type, value, tb)
            print()
            pdb.pm()

        sys.excepthook = info
    if create_config:
        src = resource_filename('egressmon', 'example/conf.json')
        shutil.copyfile(src, create_config)
        return
    try:
        conf = load_config(conf)
    except ConfigError as ex:
        print(ex)
        return
    conf.update(args)
    args = conf
    kw = {'loggingc': args.pop('logging', None),
          'verbose': args.pop('verbose', 0),
          'loglevel': args.pop('loglevel', 3),
          'logfile': args.pop('logfile', None),
          'auditfile': args.pop('auditfile', None)}
    configure_logging(**kw)
    log.info('egressmon version %s', egressmon.__version__)
    if command not in BENCHES:
        raise ParseError('unknown benchmark %r' % command)
    output = args.pop('output', None)
    fmt = args.pop('format', None) or (args.get('bench') or {}).get(
        'format', 'text')
    if fmt not in FORMATS:
        raise ParseError('unknown report format %r' % fmt)
    try:
        cfg = bench_config(args)
    except ConfigError as ex:
        raise ParseError(str(ex))
    rows = run_bench(command, cfg)
    echo = OrderedDict([
        ('bench', command), ('seed', cfg.seed),
        ('trials', cfg.n_trials(DEFAULT_TRIALS.get(command, 20))),
        ('bits', cfg.bits), ('posture', cfg.posture)])
    report = emit_report(rows, fmt, echo)
    if output in (None, 'stdout'):
        print(report, end='')
    else:
        path = os.path.dirname(output)
        if path != '' and not os.path.isdir(path):
            os.makedirs(path)
        with open(output, 'w') as f:
            f.write(report)
    log.debug('used time: %.1fs', time.time() - time_start)
    return rows


def run_cmdline(args=None):
    """Main entry point from the command line"""
    msg = 'egressmon: covert channel benchmarks of the egress monitor'
    p = argparse.ArgumentParser(description=msg)
    msg = 'benchmark to run (default: text)'
    p.add_argument('command', nargs='?', default='text',
                   choices=list(BENCHES), help=msg)
    msg = 'Configuration file to load (default: none)'
    p.add_argument('-c', '--conf', default=SUPPRESS, help=msg)
    msg = 'Set chattiness on command line. Up to 3 -v flags are possible'
    p.add_argument('-v', '--verbose', help=msg, action='count',
                   default=SUPPRESS)
    msg = 'if an exception occurs start the debugger'
    p.add_argument('--pdb', action='store_true', help=msg)

    g2 = p.add_argument_group('create example configuration')
    msg = ('Create example configuration in specified file '
           '(default: conf.json if option is invoked without parameter)')
    g2.add_argument('--create-config', help=msg, nargs='?',
                    const='conf.json', default=SUPPRESS)

    msg = ('Use these flags to overwrite values in the config file. '
           'See the example configuration file for a description of '
           'these options.')
    g3 = p.add_argument_group('optional benchmark arguments', description=msg)
    g3.add_argument('--trials', type=int, default=SUPPRESS,
                    help='trials per row (default 20, linguistic 40)')
    g3.add_argument('--bits', type=int, default=SUPPRESS,
                    help='secret length L (default 64)')
    g3.add_argument('--seed', type=int, default=SUPPRESS)
    g3.add_argument('--posture', choices=('default', 'enforce'),
                    default=SUPPRESS)
    g3.add_argument('--channels', default=SUPPRESS,
                    help='comma separated channel ids')
    g3.add_argument('--format', choices=FORMATS, default=SUPPRESS)
    g3.add_argument('--out', dest='output', default=SUPPRESS,
                    help='report file (default: stdout)')
    g3.add_argument('--auditfile', default=SUPPRESS,
                    help='write audit findings as TSV to this file')
    g3.add_argument('--logfile', default=SUPPRESS)

    args = vars(p.parse_args(args))
    try:
        run(**args)
    except ParseError as ex:
        p.error(ex)


def scramble_cmdline(args=None):
    """Scramble an image or audio file as the media chokepoint would"""
    msg = 'egressmon: scramble an image or a WAV file'
    p = argparse.ArgumentParser(description=msg)
    p.add_argument('kind', choices=('image', 'audio'))
    p.add_argument('infile')
    p.add_argument('outfile')
    msg = 'Configuration file to take image and audio settings from'
    p.add_argument('-c', '--conf', help=msg)
    msg = 'Set chattiness on command line. Up to 3 -v flags are possible'
    p.add_argument('-v', '--verbose', help=msg, action='count', default=0)
    g1 = p.add_argument_group('image options')
    g1.add_argument('--levels', type=int, default=SUPPRESS,
                    help='RGB levels per channel (default 64)')
    g1.add_argument('--luma-buckets', type=int, default=SUPPRESS,
                    help='snap mean luminance to this many buckets')
    g1.add_argument('--variant', default=SUPPRESS,
                    help='design-space quantizer, e.g. cmyk_levels:256')
    g2 = p.add_argument_group('audio options')
    g2.add_argument('--band', default=SUPPRESS,
                    help='audible band LO:HI in Hz (default 20:20000)')
    g2.add_argument('--floor-db', type=float, default=SUPPRESS,
                    help='perceptual floor in dB (default -50)')
    g2.add_argument('--dump-spectrum', dest='spectrum_file', default=SUPPRESS,
                    help='write the spectrum of the output to this file')
    args = vars(p.parse_args(args))
    configure_logging(None, args.pop('verbose'))
    try:
        conf = load_config(args.pop('conf'))
        if args.pop('kind') == 'image':
            _scramble_image_file(conf.get('image') or {}, **args)
        else:
            _scramble_audio_file(conf.get('audio') or {}, **args)
    except (ConfigError, ValueError, OSError) as ex:
        p.error(ex)


def _scramble_image_file(conf, infile, outfile, levels=None,
                         luma_buckets=None, variant=None):
    img, fmt = read_image(infile)
    out = scramble_image(img, levels or conf.get('levels', 64),
                         luma_buckets or conf.get('luma_buckets'),
                         variant or conf.get('variant'))
    ppm = outfile.lower().endswith(('.ppm', '.pnm'))
    write_image(out, outfile, format='PPM' if ppm else 'PNG')
    log.info('scrambled %s image %s -> %s', fmt, infile, outfile)


def _scramble_audio_file(conf, infile, outfile, band=None, floor_db=None,
                         spectrum_file=None):
    floor_db = conf.get('floor_db', -50.) if floor_db is None else floor_db
    if band is None:
        band = ScramblerBand(conf.get('low_hz', 20.),
                             conf.get('high_hz', 20000.), floor_db)
    else:
        band = ScramblerBand.parse(band, floor_db)
    clip, stats = scramble_audio(read_wav(infile), band)
    write_wav(clip, outfile)
    log.info('scrambled %s -> %s, zeroed %d out-of-band and %d sub-floor '
             'bins', infile, outfile, stats['out_of_band_bins'],
             stats['sub_floor_bins'])
    if spectrum_file:
        dump_spectrum(clip, spectrum_file)
