"""檢查點與反演資料包共用的二進位格式。

版面配置：
    [8 位元組 little-endian 無號整數：標頭長度]
    [UTF-8 JSON 標頭：{version, kind, schedule, tensors: [{name, shape, offset}], meta}]
    [依標頭順序排列的 little-endian float32 資料]
offset 以資料區起點為 0 計算（位元組）。
"""

from __future__ import annotations

import json
import os
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Mapping, Optional, Union

import numpy as np

from ..denoiser.weights import PARAMETER_TABLE, DenoiserWeights
from ..errors import BundleMismatchError, ContractViolation, ShapeMismatchError
from ..schedule import NoiseSchedule

FORMAT_VERSION = 1
KIND_WEIGHTS = "weights"
KIND_BUNDLE = "inversion_bundle"

PathLike = Union[str, Path]


def write_tensor_file(
    path: PathLike,
    kind: str,
    tensors: Mapping[str, np.ndarray],
    schedule: Optional[dict] = None,
    meta: Optional[dict] = None,
) -> None:
    """寫入標頭 + float32 資料。

    參數：
        path: 輸出路徑。
        kind: 檔案種類（weights 或 inversion_bundle）。
        tensors: 名稱到陣列的有序對應。
        schedule: 雜訊排程參數。
        meta: 其他可 JSON 序列化的資訊。
    """
    entries = []
    payloads = []
    offset = 0
    for name, value in tensors.items():
        data = np.ascontiguousarray(value, dtype="<f4")
        entries.append({"name": name, "shape": list(data.shape), "offset": offset})
        payloads.append(data.tobytes())
        offset += data.nbytes
    header = {
        "version": FORMAT_VERSION,
        "kind": kind,
        "schedule": schedule or {},
        "tensors": entries,
        "meta": meta or {},
    }
    header_bytes = json.dumps(header, sort_keys=True, ensure_ascii=False, separators=(",", ":")).encode("utf-8")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # 先寫暫存檔再 os.replace，中斷時原檔保持完整
    tmp = path.with_name(path.name + ".tmp")
    try:
        with tmp.open("wb") as f:
            f.write(struct.pack("<Q", len(header_bytes)))
            f.write(header_bytes)
            for chunk in payloads:
                f.write(chunk)
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


def read_tensor_file(path: PathLike, kind: Optional[str] = None) -> tuple[dict, "OrderedDict[str, np.ndarray]"]:
    """讀取檔案，回傳 (標頭, 名稱 → float32 陣列)。"""
    path = Path(path)
    if not path.exists():
        raise ContractViolation(f"找不到檔案：{path}")
    raw = path.read_bytes()
    if len(raw) < 8:
        raise ContractViolation(f"檔案過短，不是有效的張量檔：{path}")
    (header_len,) = struct.unpack("<Q", raw[:8])
    try:
        header = json.loads(raw[8:8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ContractViolation(f"無法解析標頭：{path}（{e}）") from e
    if header.get("version") != FORMAT_VERSION:
        raise ContractViolation(f"不支援的格式版本：{header.get('version')}")
    if kind is not None and header.get("kind") != kind:
        raise ContractViolation(f"檔案種類為 {header.get('kind')}，預期為 {kind}")

    payload = raw[8 + header_len:]
    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + 4 * count
        if end > len(payload):
            raise ShapeMismatchError(f"張量 {entry['name']} 超出檔案範圍")
        tensors[entry["name"]] = np.frombuffer(payload[start:end], dtype="<f4").reshape(shape).astype(np.float32)
    return header, tensors


# ========== 去噪器權重 ==========

def save_weights(
    path: PathLike,
    weights: DenoiserWeights,
    sched: NoiseSchedule,
    meta: Optional[dict] = None,
) -> None:
    """寫入權重檢查點；標頭記錄參數數量與權重摘要。"""
    info = {"parameter_count": weights.parameter_count(), "digest": weights.digest()}
    info.update(meta or {})
    write_tensor_file(path, KIND_WEIGHTS, weights.params, schedule=sched.to_dict(), meta=info)


def load_weights(path: PathLike) -> tuple[DenoiserWeights, NoiseSchedule, dict]:
    """讀取權重檢查點並逐一驗證形狀。

    回傳：
        (權重, 排程, 標頭 meta)。
    """
    header, tensors = read_tensor_file(path, KIND_WEIGHTS)
    names = [name for name, _ in PARAMETER_TABLE]
    if list(tensors) != names:
        raise ShapeMismatchError("檢查點的參數名稱或順序與去噪器不符")
    weights = DenoiserWeights(tensors)
    meta = header.get("meta", {})
    if meta.get("parameter_count") not in (None, weights.parameter_count()):
        raise ShapeMismatchError(
            f"檢查點記錄的參數數量 {meta.get('parameter_count')} 與實際 {weights.parameter_count()} 不符"
        )
    if meta.get("digest") not in (None, weights.digest()):
        raise BundleMismatchError("檢查點內容與標頭記錄的摘要不符")
    return weights, NoiseSchedule.from_dict(header["schedule"]), meta
