"""Shape Eraser 的例外階層。

CLI 依例外類型決定結束碼：ContractViolation 為 1，ConfigError 為 2。
"""


class ShapeEraserError(Exception):
    """所有專案例外的基底類別。"""

    exit_code = 1


class ContractViolation(ShapeEraserError):
    """違反操作的前置條件、後置條件或不變量。"""

    exit_code = 1


class NonFiniteError(ContractViolation):
    """張量中出現 NaN 或 Inf。"""


class ShapeMismatchError(ContractViolation):
    """張量形狀不符合操作要求。"""


class StepOrderError(ContractViolation):
    """時間步順序或範圍錯誤。"""


class TrainingDiverged(ContractViolation):
    """訓練損失變為非有限值；權重保持更新前的狀態。"""


class BundleMismatchError(ContractViolation):
    """反演資料包與權重或排程不相符。"""


class ConfigError(ShapeEraserError):
    """設定檔或命令列參數錯誤。"""

    exit_code = 2
