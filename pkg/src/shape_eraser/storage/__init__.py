"""儲存層：張量檔案格式、PPM 影像與掃描報告資料庫。"""

from .checkpoint import (
    FORMAT_VERSION,
    KIND_BUNDLE,
    KIND_WEIGHTS,
    load_weights,
    read_tensor_file,
    save_weights,
    write_tensor_file,
)
from .images import read_ppm, to_uint8, write_ppm
from .report_store import CSV_COLUMNS, ReportStore

__all__ = [
    "FORMAT_VERSION",
    "KIND_BUNDLE",
    "KIND_WEIGHTS",
    "load_weights",
    "read_tensor_file",
    "save_weights",
    "write_tensor_file",
    "read_ppm",
    "to_uint8",
    "write_ppm",
    "CSV_COLUMNS",
    "ReportStore",
]
