"""參數掃描結果的 SQLite 儲存，中斷後可接續。"""

from __future__ import annotations

import csv
import json
from datetime import datetime
from pathlib import Path
from typing import Optional, Union

from sqlalchemy import Column, DateTime, Float, Integer, String, Text, create_engine
from sqlalchemy.orm import Session, declarative_base, sessionmaker

Base = declarative_base()

# CSV 固定欄位順序
CSV_COLUMNS = (
    "param",
    "value",
    "scene_seed",
    "target",
    "psnr_reconstruction",
    "attn_drop",
    "bg_mse",
    "obj_mse_vs_clean",
    "recon_mse",
)


class ReportModel(Base):
    """一個 (參數值, 場景) 組合的擦除報告。"""
    __tablename__ = "reports"

    id = Column(String(256), primary_key=True)  # param=value#scene_seed
    param = Column(String(64), index=True)
    value = Column(String(64))
    value_index = Column(Integer)
    scene_seed = Column(Integer)
    target = Column(String(64))
    attn_drop = Column(Float)
    bg_mse = Column(Float)
    metrics_json = Column(Text)  # EraseReport.to_dict()
    created_at = Column(DateTime, default=datetime.utcnow)

    @property
    def metrics(self) -> dict:
        return json.loads(self.metrics_json) if self.metrics_json else {}

    @metrics.setter
    def metrics(self, value: dict):
        self.metrics_json = json.dumps(value)


class SweepMetadataModel(Base):
    """掃描的設定與狀態。"""
    __tablename__ = "sweep_metadata"

    key = Column(String(64), primary_key=True)
    value = Column(Text)
    updated_at = Column(DateTime, default=datetime.utcnow)


def report_id(param: str, value: str, scene_seed: int) -> str:
    return f"{param}={value}#{scene_seed}"


class ReportStore:
    """掃描報告的 SQLite 儲存。"""

    def __init__(self, path: Union[str, Path]):
        """建立或開啟資料庫。

        參數：
            path: SQLite 檔案路徑；":memory:" 表示記憶體資料庫。
        """
        if str(path) != ":memory:":
            Path(path).parent.mkdir(parents=True, exist_ok=True)
        self.engine = create_engine(f"sqlite:///{path}", echo=False)
        Base.metadata.create_all(self.engine)
        self.SessionLocal = sessionmaker(bind=self.engine)

    def _get_session(self) -> Session:
        return self.SessionLocal()

    # ========== 報告操作 ==========

    def upsert_report(self, data: dict) -> None:
        """插入或更新一筆報告。

        參數：
            data: 包含 param、value、value_index、scene_seed、target、metrics 的字典。
        """
        value = str(data["value"])
        with self._get_session() as session:
            key = report_id(data["param"], value, data["scene_seed"])
            row = session.get(ReportModel, key)
            if row is None:
                row = ReportModel(id=key)
                session.add(row)

            metrics = data.get("metrics", {})
            row.param = data["param"]
            row.value = value
            row.value_index = data.get("value_index", 0)
            row.scene_seed = data["scene_seed"]
            row.target = data.get("target")
            row.attn_drop = metrics.get("attn_drop")
            row.bg_mse = metrics.get("bg_mse")
            row.metrics = metrics
            row.created_at = datetime.utcnow()
            session.commit()

    def has_report(self, param: str, value, scene_seed: int) -> bool:
        with self._get_session() as session:
            return session.get(ReportModel, report_id(param, str(value), scene_seed)) is not None

    def get_report(self, param: str, value, scene_seed: int) -> Optional[dict]:
        """取得單筆報告，找不到則為 None。"""
        with self._get_session() as session:
            row = session.get(ReportModel, report_id(param, str(value), scene_seed))
            return self._row_to_dict(row) if row else None

    def get_reports(self, param: Optional[str] = None) -> list[dict]:
        """依 (參數值順序, 場景種子) 排序取得報告。"""
        with self._get_session() as session:
            query = session.query(ReportModel)
            if param is not None:
                query = query.filter(ReportModel.param == param)
            rows = query.order_by(ReportModel.value_index, ReportModel.scene_seed).all()
            return [self._row_to_dict(r) for r in rows]

    @staticmethod
    def _row_to_dict(row: ReportModel) -> dict:
        return {
            "param": row.param,
            "value": row.value,
            "value_index": row.value_index,
            "scene_seed": row.scene_seed,
            "target": row.target,
            "metrics": row.metrics,
        }

    def export_csv(self, path: Union[str, Path], param: Optional[str] = None) -> int:
        """把報告匯出為 CSV（固定標頭），回傳資料列數。"""
        rows = self.get_reports(param)
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            for r in rows:
                metrics = r["metrics"]
                writer.writerow(
                    [r["param"], r["value"], r["scene_seed"], r["target"]]
                    + [_format(metrics.get(name)) for name in CSV_COLUMNS[4:]]
                )
        return len(rows)

    # ========== 掃描中繼資料 ==========

    def set_metadata(self, key: str, value: str) -> None:
        with self._get_session() as session:
            meta = session.get(SweepMetadataModel, key)
            if meta is None:
                meta = SweepMetadataModel(key=key)
                session.add(meta)
            meta.value = value
            meta.updated_at = datetime.utcnow()
            session.commit()

    def get_metadata(self, key: str) -> Optional[str]:
        with self._get_session() as session:
            meta = session.get(SweepMetadataModel, key)
            return meta.value if meta else None

    def clear_all(self) -> None:
        """刪除所有報告與中繼資料。"""
        with self._get_session() as session:
            session.query(ReportModel).delete()
            session.query(SweepMetadataModel).delete()
            session.commit()

    def get_stats(self) -> dict:
        """取得儲存內容的統計資訊。"""
        with self._get_session() as session:
            return {
                "reports": session.query(ReportModel).count(),
                "params": sorted({p for (p,) in session.query(ReportModel.param).distinct()}),
            }


def _format(value) -> str:
    if value is None:
        return "inf"
    return repr(float(value))
