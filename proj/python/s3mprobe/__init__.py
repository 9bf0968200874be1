"""Python access to the s3m file formats and a few analysis routines.

The extension reads the shipped stimulus data from S3M_DATA_DIR; an installed
wheel carries its own copy next to this file.
"""

import os
from pathlib import Path

_packaged = Path(__file__).with_name("data")
if "S3M_DATA_DIR" not in os.environ and _packaged.is_dir():
    os.environ["S3M_DATA_DIR"] = str(_packaged)

from ._core import (  # noqa: E402
    ACTIVATION_FORMAT_VERSION,
    ConfigError,
    CorruptionError,
    DataError,
    Error,
    FormatError,
    NumericError,
    classify_allomorph,
    decode_activation,
    default_data_dir,
    encode_activation,
    frames_in_span,
    normalize_word_token,
    read_activation,
    read_alignment_manifest,
    read_probe,
    read_store,
    sha256_hex,
    validate_run_manifest,
    welch_t,
    write_activation,
    write_alignment_manifest,
    write_run_manifest,
)

__all__ = [
    "ACTIVATION_FORMAT_VERSION",
    "ConfigError",
    "CorruptionError",
    "DataError",
    "Error",
    "FormatError",
    "NumericError",
    "classify_allomorph",
    "decode_activation",
    "default_data_dir",
    "encode_activation",
    "frames_in_span",
    "normalize_word_token",
    "read_activation",
    "read_alignment_manifest",
    "read_probe",
    "read_store",
    "sha256_hex",
    "validate_run_manifest",
    "welch_t",
    "write_activation",
    "write_alignment_manifest",
    "write_run_manifest",
]
