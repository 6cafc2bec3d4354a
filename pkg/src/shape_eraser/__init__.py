"""Shape Eraser - 以文字指令擦除合成場景物件的擴散模型實驗室。"""

import os

# 單執行緒 BLAS，確保逐位元可重現
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

__version__ = "0.1.0"
