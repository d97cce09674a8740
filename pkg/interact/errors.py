"""
InteRACT 意圖預測系統 - 例外類別
所有模組共用的錯誤階層；CLI 依類別決定結束碼 (ConfigError → 2，其餘 → 1)
"""
from typing import Optional


class InteractError(Exception):
    """系統錯誤基底類別"""

    kind = 'runtime'


class ConfigError(InteractError):
    """設定檔或命令列覆寫錯誤"""

    kind = 'config'

    def __init__(self, message: str, key: Optional[str] = None):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


class DatasetError(InteractError):
    kind = 'dataset'


class SchemaError(DatasetError):
    """Episode 檔案不符合 schema，訊息會指出欄位與幀索引"""

    kind = 'schema'

    def __init__(self, message: str, field: Optional[str] = None, frame: Optional[int] = None):
        self.field = field
        self.frame = frame
        where = []
        if field is not None:
            where.append(f"field '{field}'")
        if frame is not None:
            where.append(f"frame {frame}")
        prefix = f"{', '.join(where)}: " if where else ''
        super().__init__(f"{prefix}{message}")


class LayoutError(InteractError):
    kind = 'layout'


class ShapeError(InteractError):
    kind = 'shape'


class DegenerateBoneError(InteractError):
    """手腕與手部關節幾乎重合，無法決定骨骼方向"""

    kind = 'retarget'

    def __init__(self, message: str, frame: Optional[int] = None):
        self.frame = frame
        super().__init__(f"frame {frame}: {message}" if frame is not None else message)


class PlacementError(DatasetError):
    kind = 'placement'


class SplitError(DatasetError):
    kind = 'split'


class AlignmentError(InteractError):
    kind = 'align'


class GradCheckError(InteractError):
    kind = 'gradcheck'


class OptimizerError(InteractError):
    kind = 'optimizer'


class TrainingDivergedError(InteractError):
    kind = 'training'

    def __init__(self, message: str, epoch: int):
        self.epoch = epoch
        super().__init__(f"epoch {epoch}: {message}")


class CheckpointError(InteractError):
    kind = 'checkpoint'


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointCorruptError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


class EvaluationError(InteractError):
    kind = 'eval'
