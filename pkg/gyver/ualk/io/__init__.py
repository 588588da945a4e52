from .container import (
    decode_matrix,
    decode_sections,
    encode_matrix,
    encode_sections,
    read_matrix,
    read_sections,
    write_matrix,
    write_sections,
)
from .convert import convert, load_matrix, save_matrix
from .json import read_json, write_json
from .tabular import read_csv, write_csv

__all__ = [
    'decode_matrix',
    'decode_sections',
    'encode_matrix',
    'encode_sections',
    'read_matrix',
    'read_sections',
    'write_matrix',
    'write_sections',
    'convert',
    'load_matrix',
    'save_matrix',
    'read_json',
    'write_json',
    'read_csv',
    'write_csv',
]
