"""
Модуль валидации входных данных конвейера: записи признаков и геометки
"""
import math
import time
from typing import Dict, Any, Optional, Sequence
from logger import engine_logger


class DataValidator:
    """Валидатор данных для обеспечения качества признаков и разметки"""

    def __init__(self):
        self.validation_stats = {
            'total_validations': 0,
            'failed_validations': 0,
            'last_validation': 0
        }

    def validate_feature_record(self, data: Dict[str, Any], expected_dim: Optional[int] = None) -> bool:
        """Валидирует запись локального признака {x, y, scale, score, descriptor}"""
        self.validation_stats['total_validations'] += 1
        self.validation_stats['last_validation'] = time.time()

        try:
            required_fields = ['x', 'y', 'scale', 'score', 'descriptor']
            for field in required_fields:
                if field not in data:
                    engine_logger.warning(f"Отсутствует поле {field} в записи признака")
                    return self._record_failed_validation()

            for field in ('x', 'y', 'scale', 'score'):
                value = data[field]
                if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
                    engine_logger.warning(f"Некорректное значение {field}: {value}")
                    return self._record_failed_validation()

            if data['scale'] <= 0:
                engine_logger.warning(f"Масштаб должен быть положительным: {data['scale']}")
                return self._record_failed_validation()

            if data['score'] < 0:
                engine_logger.warning(f"Оценка признака отрицательна: {data['score']}")
                return self._record_failed_validation()

            if not self.validate_descriptor(data['descriptor'], expected_dim):
                return self._record_failed_validation()

            return True

        except Exception as e:
            engine_logger.error(f"Ошибка валидации признака: {e}")
            return self._record_failed_validation()

    @staticmethod
    def validate_descriptor(values: Sequence[float], expected_dim: Optional[int] = None) -> bool:
        """Проверяет, что дескриптор является конечным вектором нужной размерности"""
        if not isinstance(values, (list, tuple)) or not values:
            return False
        if expected_dim is not None and len(values) != expected_dim:
            return False
        return all(not isinstance(v, bool) and isinstance(v, (int, float)) and math.isfinite(v) for v in values)

    def validate_geo_record(self, lat: float, lon: float) -> bool:
        """Валидирует координаты геометки"""
        self.validation_stats['total_validations'] += 1
        self.validation_stats['last_validation'] = time.time()

        if not (math.isfinite(lat) and math.isfinite(lon)):
            return self._record_failed_validation()
        if abs(lat) > 90 or abs(lon) > 180:
            engine_logger.warning(f"Координаты вне диапазона: ({lat}, {lon})")
            return self._record_failed_validation()
        return True

    def _record_failed_validation(self) -> bool:
        """Записывает неудачную валидацию"""
        self.validation_stats['failed_validations'] += 1
        return False

    def get_validation_stats(self) -> Dict[str, Any]:
        """Возвращает статистику валидации"""
        total = self.validation_stats['total_validations']
        failed = self.validation_stats['failed_validations']

        return {
            'total_validations': total,
            'failed_validations': failed,
            'success_rate': ((total - failed) / total * 100) if total > 0 else 100,
            'last_validation': self.validation_stats['last_validation']
        }


# Глобальный экземпляр валидатора
data_validator = DataValidator()
