import os
import typing

PathLike = typing.Union[str, os.PathLike]
