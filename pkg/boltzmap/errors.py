import typing


class BoltzmapError(Exception):
    """boltzmap が送出する例外の基底クラス。"""


class UsageError(BoltzmapError):
    pass


class DataError(BoltzmapError):
    """入力ファイルやデータの内容が不正な場合の例外。"""


class ModelFormatError(DataError):
    def __init__(self, message: str, line: typing.Optional[int] = None
                 ) -> None:
        if line is not None:
            message = f'line {line}: {message}'
        super().__init__(message)
        self.line = line


class StateSpaceTooLargeError(DataError):
    pass


class IdxFormatError(DataError):
    """IDX 形式のファイルが不正な場合の例外。

    Attributes:
        offset (int): 問題を検出したバイト位置。
    """

    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f'{message} (at byte offset {offset})')
        self.offset = offset


class BadMagicError(IdxFormatError):
    pass


class TruncatedFileError(IdxFormatError):
    def __init__(self, expected: int, actual: int) -> None:
        super().__init__(
            f'truncated file: expected {expected} bytes, got {actual}',
            actual)
        self.expected = expected
        self.actual = actual


class DimensionMismatchError(IdxFormatError):
    pass


class NumericalError(BoltzmapError):
    """数値計算が破綻した場合の例外。"""


class RangeError(NumericalError, ArithmeticError):
    pass


class ConvergenceError(NumericalError):
    pass


class TrainingDivergedError(NumericalError):
    pass


class DegenerateReferenceError(NumericalError):
    pass


class BudgetExceededError(BoltzmapError):
    """展開の計算量が上限を超える場合の例外。

    Attributes:
        cost (int): 必要な K の評価回数の見積もり。
        budget (int): 許容される評価回数。
    """

    def __init__(self, cost: int, budget: int) -> None:
        super().__init__(
            f'expansion needs about {cost:.3e} K-evaluations, '
            f'budget is {budget:.3e}; narrow the index pool, lower the '
            f'order or raise the budget')
        self.cost = cost
        self.budget = budget
