import os
import typing
from collections.abc import Mapping

import orjson

from gyver.ualk.exceptions import FormatError
from gyver.ualk.utils.typedef import PathLike

DUMP_OPTIONS = orjson.OPT_SORT_KEYS | orjson.OPT_INDENT_2 | orjson.OPT_SERIALIZE_NUMPY


def dumps(obj: typing.Any) -> bytes:
    return orjson.dumps(obj, option=DUMP_OPTIONS) + b'\n'


def write_json(path: PathLike, obj: typing.Any) -> None:
    with open(path, 'wb') as stream:
        stream.write(dumps(obj))


def read_json(path: PathLike) -> Mapping[str, typing.Any]:
    with open(path, 'rb') as stream:
        raw = stream.read()
    try:
        value = orjson.loads(raw)
    except orjson.JSONDecodeError as exc:
        raise FormatError(
            f'invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}',
            f'{os.fspath(path)}:{exc.lineno}',
        ) from exc
    if not isinstance(value, dict):
        raise FormatError('expected a JSON object at top level', os.fspath(path))
    return value
