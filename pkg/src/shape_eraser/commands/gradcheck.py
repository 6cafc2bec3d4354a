"""gradcheck 命令：運算集合與引導能量的有限差分驗證。"""

from __future__ import annotations

import time

from ..diffcore import run_op_suite
from ..guidance import run_energy_suite


def run_gradcheck(trials: int = 100, seed: int = 0, skip_guidance: bool = False) -> dict:
    """執行兩個驗證套件；任何一項超過容許誤差時 passed 為 False。"""
    start = time.perf_counter()
    results = run_op_suite(trials=trials, seed=seed)
    if not skip_guidance:
        results.append(run_energy_suite(trials=trials, seed=seed))
    failed = [r.name for r in results if not r.passed]
    return {
        "success": not failed,
        "passed": not failed,
        "trials": trials,
        "failed": failed,
        "results": [r.to_dict() for r in results],
        "seconds": round(time.perf_counter() - start, 2),
    }
