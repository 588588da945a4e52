import argparse
import logging
import sys
import typing
from collections.abc import Sequence

from gyver.ualk.cli.config import PIPELINES, load_config, resolve_config
from gyver.ualk.cli.pipelines import run
from gyver.ualk.exceptions import UalkError
from gyver.ualk.io import convert

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 2

LOG_FORMAT = 'level=%(levelname)s logger=%(name)s msg=%(message)s'


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='ualk', description='Unknown-aware learning experiments.'
    )
    parser.add_argument('--verbose', action='store_true', help='log at DEBUG level')
    commands = parser.add_subparsers(dest='command', required=True)
    for name in PIPELINES:
        sub = commands.add_parser(name, help=f'run the {name} pipeline')
        _add_run_options(sub)
    sub = commands.add_parser('run', help='run the pipeline a config names')
    sub.add_argument('config_path', metavar='CONFIG')
    _add_run_options(sub, with_config=False)
    sub = commands.add_parser('convert', help='convert a matrix between CSV and binary')
    sub.add_argument('source', metavar='IN')
    sub.add_argument('target', metavar='OUT')
    return parser


def _add_run_options(sub: argparse.ArgumentParser, with_config: bool = True) -> None:
    if with_config:
        sub.add_argument('--config', help='JSON config path')
    sub.add_argument('--seed', type=int, help='overrides the config seed')
    sub.add_argument('--out', help='output directory, overrides the config')


def _origin(exc: BaseException) -> str:
    tb = exc.__traceback__
    if tb is None:
        return 'ualk'
    while tb.tb_next is not None:
        tb = tb.tb_next
    return tb.tb_frame.f_globals.get('__name__', 'ualk')


def _execute(args: argparse.Namespace) -> None:
    if args.command == 'convert':
        convert(args.source, args.target)
        return
    overrides: dict[str, typing.Any] = {'seed': args.seed, 'out': args.out}
    path = args.config_path if args.command == 'run' else args.config
    if args.command != 'run':
        overrides['pipeline'] = args.command
    if path is None:
        cfg = resolve_config({}, overrides)
    else:
        cfg = load_config(path, overrides)
    metrics = run(cfg)
    logger.debug('metrics %s', metrics)


def main(argv: typing.Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format=LOG_FORMAT,
        stream=sys.stderr,
    )
    try:
        _execute(args)
    except UalkError as exc:
        print(f'{_origin(exc)}: {exc}', file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f'ualk: {exc}', file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK
