"""
Иерархия исключений движка поиска по локальным признакам
"""

from typing import Iterable


class RetrievalError(Exception):
    """Базовая ошибка движка"""


class InvalidInputError(RetrievalError, ValueError):
    """Некорректные входные данные операции"""


class DimensionMismatchError(InvalidInputError):
    """Размерность вектора не совпадает с ожидаемой"""

    def __init__(self, expected: int, actual: int, what: str = "вектор"):
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what}: ожидается размерность {expected}, получено {actual}")


class InsufficientDataError(InvalidInputError):
    """Недостаточно данных для обучения модели"""


class DegenerateSampleError(InvalidInputError):
    """Вырожденная выборка (коллинеарные точки)"""


class IndexStateError(RetrievalError, RuntimeError):
    """Индекс не построен или пуст"""


class StorageError(RetrievalError):
    """Ошибка чтения/записи файлов"""


class StorageIOError(StorageError):
    """Ошибка ввода-вывода"""


class FormatError(StorageError):
    """Нарушен формат файла"""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class VersionError(StorageError):
    """Неподдерживаемая версия формата"""

    def __init__(self, expected: int, actual: int):
        self.expected = expected
        self.actual = actual
        super().__init__(f"version: ожидается {expected}, получено {actual}")


class ConfigError(RetrievalError):
    """Ошибка конфигурации"""

    def __init__(self, errors: Iterable[str], keys: Iterable[str] = ()):
        self.errors = list(errors)
        self.keys = list(keys)
        super().__init__("; ".join(self.errors))
