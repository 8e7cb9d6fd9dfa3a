from typing import Optional


class LstmKfError(Exception):
    """패키지 공통 예외의 루트"""


class ShapeError(LstmKfError, ValueError):
    """차원 불일치 (메시지에 양쪽 shape 포함)"""


class SingularMatrixError(LstmKfError, ArithmeticError):
    def __init__(self, message: str, pivot: int):
        super().__init__(f"{message} (pivot={pivot})")
        self.pivot = pivot


class NonFiniteError(LstmKfError, ArithmeticError):
    def __init__(self, message: str, index: int = -1):
        super().__init__(f"{message} (index={index})")
        self.index = index


class StepError(LstmKfError):
    """필터 스텝 실패 - 시간 인덱스를 붙여서 다시 던짐"""
    def __init__(self, time_index: int, cause: Exception):
        super().__init__(f"step {time_index}: {cause}")
        self.time_index = time_index
        self.cause = cause


class DatasetParseError(LstmKfError, ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ConfigError(LstmKfError, ValueError):
    pass


class TrainingAbortedError(LstmKfError):
    def __init__(self, message: str, epoch: int, batch: Optional[int] = None):
        super().__init__(f"epoch {epoch}, batch {batch}: {message}")
        self.epoch = epoch
        self.batch = batch
