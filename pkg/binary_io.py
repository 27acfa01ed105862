"""
Little-endian бинарные блоки для файлов индекса, признаков и чекпоинтов
"""

import os
import struct
import tempfile

import numpy as np

from errors import FormatError, StorageIOError, VersionError


class BinaryWriter:
    def __init__(self):
        self._parts = []

    def magic(self, value: bytes):
        self._parts.append(value)

    def u8(self, value: int):
        self._parts.append(struct.pack('<B', value))

    def u32(self, value: int):
        self._parts.append(struct.pack('<I', value))

    def u64(self, value: int):
        self._parts.append(struct.pack('<Q', value))

    def f32(self, value: float):
        self._parts.append(struct.pack('<f', value))

    def raw(self, data: bytes):
        self._parts.append(bytes(data))

    def text(self, value: str):
        encoded = value.encode('utf-8')
        self.u64(len(encoded))
        self._parts.append(encoded)

    def array(self, values: np.ndarray, dtype: str):
        """Плоский массив без заголовка; форму записывает вызывающий"""
        self._parts.append(np.ascontiguousarray(values, dtype=dtype).tobytes())

    def getvalue(self) -> bytes:
        return b''.join(self._parts)


class BinaryReader:
    """Чтение с проверкой границ: обрыв файла → FormatError с именем поля"""

    def __init__(self, data: bytes):
        self._data = memoryview(data)
        self._pos = 0

    @property
    def remaining(self) -> int:
        return len(self._data) - self._pos

    def _take(self, size: int, field: str) -> memoryview:
        if size < 0 or self._pos + size > len(self._data):
            raise FormatError(field, f"файл обрывается (нужно {size} байт, осталось {self.remaining})")
        chunk = self._data[self._pos:self._pos + size]
        self._pos += size
        return chunk

    def magic(self, expected: bytes, field: str = 'magic'):
        found = bytes(self._take(len(expected), field))
        if found != expected:
            raise FormatError(field, f"ожидается {expected!r}, найдено {found!r}")

    def version(self, expected: int):
        actual = self.u32('version')
        if actual != expected:
            raise VersionError(expected, actual)

    def u8(self, field: str) -> int:
        return struct.unpack('<B', self._take(1, field))[0]

    def u32(self, field: str) -> int:
        return struct.unpack('<I', self._take(4, field))[0]

    def u64(self, field: str) -> int:
        return struct.unpack('<Q', self._take(8, field))[0]

    def f32(self, field: str) -> float:
        return struct.unpack('<f', self._take(4, field))[0]

    def raw(self, size: int, field: str) -> bytes:
        return bytes(self._take(size, field))

    def text(self, field: str) -> str:
        size = self.u64(field)
        try:
            return bytes(self._take(size, field)).decode('utf-8')
        except UnicodeDecodeError as e:
            raise FormatError(field, f"некорректный UTF-8: {e}") from e

    def array(self, count: int, dtype: str, field: str) -> np.ndarray:
        item = np.dtype(dtype).itemsize
        chunk = self._take(count * item, field)
        return np.frombuffer(chunk, dtype=dtype).copy()

    def finish(self):
        if self.remaining:
            raise FormatError('trailer', f"лишние {self.remaining} байт в конце файла")


def read_bytes(path: str) -> bytes:
    try:
        with open(path, 'rb') as f:
            return f.read()
    except OSError as e:
        raise StorageIOError(f"Ошибка чтения {path}: {e}") from e


def write_bytes(path: str, data: bytes):
    """Запись через временный файл и атомарную замену"""
    directory = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(directory, exist_ok=True)
        fd, tmp_path = tempfile.mkstemp(dir=directory, prefix='.tmp_')
        try:
            with os.fdopen(fd, 'wb') as f:
                f.write(data)
            os.replace(tmp_path, path)
        except BaseException:
            if os.path.exists(tmp_path):
                os.remove(tmp_path)
            raise
    except OSError as e:
        raise StorageIOError(f"Ошибка записи {path}: {e}") from e
