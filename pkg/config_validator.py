"""
Валидатор конфигурации конвейера поиска
"""

import math
from typing import Dict, Any, List, Tuple
from logger import engine_logger


class ConfigValidator:
    """Валидатор настроек конфигурации"""

    def __init__(self):
        self.validation_rules = {
            # Индекс
            'COARSE_K': {
                'type': int, 'min': 1, 'max': 1 << 20, 'default': 8192,
                'description': 'Размер грубого словаря (8K ячеек)'
            },
            'KD_LEAF_MAX': {
                'type': int, 'min': 1, 'max': 10**9, 'default': 30000,
                'description': 'Максимум постингов в листе KD-дерева ячейки (30K)'
            },
            'PQ_M': {
                'type': int, 'min': 1, 'max': 256, 'default': 10,
                'description': 'Число подвекторов PQ (10)'
            },
            'PQ_BITS': {
                'type': int, 'min': 1, 'max': 16, 'default': 5,
                'description': 'Бит на подвектор PQ (5, код 50 бит)'
            },
            'DESCRIPTOR_DIM': {
                'type': int, 'min': 1, 'max': 4096, 'default': 40,
                'description': 'Размерность дескриптора после PCA (40)'
            },
            'KMEANS_ITERS': {
                'type': int, 'min': 1, 'max': 1000, 'default': 20,
                'description': 'Итерации Ллойда для грубого словаря'
            },
            'PQ_ITERS': {
                'type': int, 'min': 1, 'max': 1000, 'default': 15,
                'description': 'Итерации Ллойда для подсловарей PQ'
            },
            # Поиск
            'SOFT_ASSIGN': {
                'type': int, 'min': 1, 'max': 1 << 20, 'default': 5,
                'description': 'Число ближайших ячеек на дескриптор запроса (5)'
            },
            'LEAF_BUDGET': {
                'type': int, 'min': 1, 'max': 10**9, 'default': 10000,
                'description': 'Общий бюджет просматриваемых листьев (10K)'
            },
            'TOP_K': {
                'type': int, 'min': 1, 'max': 100000, 'default': 60,
                'description': 'Ближайших соседей на дескриптор запроса (K=60)'
            },
            'FEATURE_CAP': {
                'type': int, 'min': 0, 'max': 10**6, 'default': 1000,
                'description': 'Максимум признаков на изображение (1000)'
            },
            'SELECTION_POLICY': {
                'type': str, 'choices': ('l2_norm', 'attention'), 'default': 'l2_norm',
                'description': 'Оценка ключевых точек: l2_norm или attention'
            },
            # Геометрическая проверка
            'RANSAC_ITERS': {
                'type': int, 'min': 1, 'max': 10**6, 'default': 1000,
                'description': 'Итерации RANSAC'
            },
            'RANSAC_INLIER_TOL': {
                'type': (int, float), 'min': 1e-6, 'max': 1e4, 'default': 3.0,
                'description': 'Порог инлайера RANSAC в пикселях'
            },
            'RANSAC_MIN_INLIERS': {
                'type': int, 'min': 0, 'max': 10**6, 'default': 10,
                'description': 'Минимум инлайеров для принятия изображения'
            },
            # Оценка
            'FUSION_WEIGHT': {
                'type': (int, float), 'min': 0.0, 'max': 1.0, 'default': 0.25,
                'description': 'Вес локальных оценок при позднем слиянии (0.25)'
            },
            'GT_THRESHOLD_KM': {
                'type': (int, float), 'min': 1e-6, 'max': 20038.0, 'default': 25.0,
                'description': 'Порог расстояния до центра достопримечательности, км (25)'
            },
            'MIN_PHOTOS': {
                'type': int, 'min': 1, 'max': 10**6, 'default': 3,
                'description': 'Минимум фото у достопримечательности (3)'
            },
            'PRECISION_TARGET': {
                'type': (int, float), 'min': 0.0, 'max': 1.0, 'default': 0.9,
                'description': 'Целевая точность для отчёта полноты (R@90%)'
            },
            # Внимание
            'ATTENTION_HIDDEN': {
                'type': int, 'min': 1, 'max': 4096, 'default': 32,
                'description': 'Ширина скрытого слоя оценщика внимания'
            },
            'ATTENTION_LR': {
                'type': (int, float), 'min': 0.0, 'max': 10.0, 'default': 0.05,
                'description': 'Шаг SGD обучения внимания'
            },
            'ATTENTION_STEPS': {
                'type': int, 'min': 0, 'max': 10**7, 'default': 500,
                'description': 'Число шагов SGD (один мешок на шаг)'
            },
            # Геометрия пирамиды
            'RF_BASE_SIZE': {
                'type': int, 'min': 1, 'max': 100000, 'default': 291,
                'description': 'Рецептивное поле на масштабе 1.0, пикселей (291)'
            },
            'RF_BASE_STRIDE': {
                'type': int, 'min': 1, 'max': 100000, 'default': 32,
                'description': 'Шаг сетки признаков на масштабе 1.0, пикселей'
            },
            'PYRAMID_MIN_SCALE': {
                'type': (int, float), 'min': 1e-6, 'max': 1e3, 'default': 0.25,
                'description': 'Минимальный масштаб пирамиды (0.25)'
            },
            'PYRAMID_MAX_SCALE': {
                'type': (int, float), 'min': 1e-6, 'max': 1e3, 'default': 2.0,
                'description': 'Максимальный масштаб пирамиды (2.0)'
            },
            'PYRAMID_FACTOR': {
                'type': (int, float), 'min': 1.0 + 1e-9, 'max': 100.0, 'default': math.sqrt(2.0),
                'description': 'Множитель между масштабами пирамиды (sqrt(2), 7 масштабов)'
            },
            # Синтетические данные
            'SYNTH_N_LANDMARKS': {
                'type': int, 'min': 1, 'max': 10**6, 'default': 20,
                'description': 'Число синтетических достопримечательностей'
            },
            'SYNTH_IMAGES_PER_LANDMARK': {
                'type': int, 'min': 1, 'max': 10**6, 'default': 5,
                'description': 'Изображений в базе на достопримечательность'
            },
            'SYNTH_QUERIES_PER_LANDMARK': {
                'type': int, 'min': 0, 'max': 10**6, 'default': 1,
                'description': 'Запросов на достопримечательность'
            },
            'SYNTH_FEATURES_PER_IMAGE': {
                'type': int, 'min': 1, 'max': 10**6, 'default': 60,
                'description': 'Признаков достопримечательности на изображение'
            },
            'SYNTH_CLUTTER_PER_IMAGE': {
                'type': int, 'min': 0, 'max': 10**6, 'default': 15,
                'description': 'Фоновых (нерелевантных) признаков на изображение'
            },
            'SYNTH_RAW_DIM': {
                'type': int, 'min': 1, 'max': 4096, 'default': 64,
                'description': 'Размерность сырых дескрипторов (до PCA)'
            },
            'SYNTH_N_DISCRIMINATIVE_DIMS': {
                'type': int, 'min': 1, 'max': 4096, 'default': 48,
                'description': 'Измерений, несущих сигнал прототипов'
            },
            'SYNTH_NOISE_SIGMA': {
                'type': (int, float), 'min': 0.0, 'max': 100.0, 'default': 0.05,
                'description': 'Шум дескрипторов между снимками одной точки'
            },
            'SYNTH_DISTRACTOR_QUERIES': {
                'type': int, 'min': 0, 'max': 10**6, 'default': 10,
                'description': 'Число запросов-дистракторов'
            },
            'SYNTH_GEO_SPREAD_KM': {
                'type': (int, float), 'min': 0.0, 'max': 1000.0, 'default': 1.0,
                'description': 'Разброс геометок вокруг достопримечательности, км'
            },
            # Общие
            'SEED': {
                'type': int, 'min': 0, 'max': 2**63 - 1, 'default': 0,
                'description': 'Зерно всех генераторов случайности'
            },
            'WORKERS': {
                'type': int, 'min': 0, 'max': 1024, 'default': 0,
                'description': 'Потоки пула (0 = по числу ядер)'
            },
        }

    def get_defaults(self) -> Dict[str, Any]:
        """Возвращает значения по умолчанию для всех ключей"""
        return {key: rule['default'] for key, rule in self.validation_rules.items()}

    def validate_config(self, config: Dict[str, Any]) -> Tuple[bool, List[str]]:
        """
        Валидирует конфигурацию
        Возвращает (is_valid, errors)
        """
        errors = []

        for key, value in config.items():
            if key not in self.validation_rules:
                errors.append(f"{key}: неизвестный ключ")
                continue

            rule = self.validation_rules[key]

            # bool является подклассом int, но значением конфигурации быть не может
            if isinstance(value, bool) or not isinstance(value, rule['type']):
                expected_type = rule['type'].__name__ if hasattr(rule['type'], '__name__') else 'number'
                errors.append(f"{key}: ожидается {expected_type}, получено {type(value).__name__}")
                continue

            if 'choices' in rule and value not in rule['choices']:
                errors.append(f"{key}: значение {value!r} не из {list(rule['choices'])}")

            if 'min' in rule and value < rule['min']:
                errors.append(f"{key}: значение {value} меньше минимального {rule['min']}")

            if 'max' in rule and value > rule['max']:
                errors.append(f"{key}: значение {value} больше максимального {rule['max']}")

        if not errors:
            errors.extend(self._validate_logical_relationships(config))

        return len(errors) == 0, errors

    def _validate_logical_relationships(self, config: Dict[str, Any]) -> List[str]:
        """Проверяет логические связи между параметрами"""
        errors = []

        dim = config.get('DESCRIPTOR_DIM', 40)
        pq_m = config.get('PQ_M', 10)
        if dim % pq_m != 0:
            errors.append(f"DESCRIPTOR_DIM: {dim} не делится на PQ_M={pq_m}")

        raw_dim = config.get('SYNTH_RAW_DIM', 64)
        if dim > raw_dim:
            errors.append(f"DESCRIPTOR_DIM: {dim} больше SYNTH_RAW_DIM={raw_dim}")

        if config.get('SYNTH_N_DISCRIMINATIVE_DIMS', 1) > raw_dim:
            errors.append("SYNTH_N_DISCRIMINATIVE_DIMS: больше SYNTH_RAW_DIM")

        if config.get('SOFT_ASSIGN', 5) > config.get('COARSE_K', 8192):
            errors.append("SOFT_ASSIGN: больше COARSE_K")

        if config.get('PYRAMID_MIN_SCALE', 0.25) > config.get('PYRAMID_MAX_SCALE', 2.0):
            errors.append("PYRAMID_MIN_SCALE: больше PYRAMID_MAX_SCALE")

        return errors

    def get_recommendations(self, config: Dict[str, Any]) -> List[str]:
        """Возвращает рекомендации по конфигурации"""
        recommendations = []

        code_bits = config.get('PQ_M', 10) * config.get('PQ_BITS', 5)
        if code_bits > 64:
            recommendations.append(f"Код PQ {code_bits} бит: упаковка медленнее, чем для кодов до 64 бит")

        expected_features = (config.get('SYNTH_N_LANDMARKS', 20) * config.get('SYNTH_IMAGES_PER_LANDMARK', 5)
                             * (config.get('SYNTH_FEATURES_PER_IMAGE', 60) + config.get('SYNTH_CLUTTER_PER_IMAGE', 0)))
        if config.get('COARSE_K', 8192) > expected_features:
            recommendations.append("COARSE_K больше числа признаков синтетического корпуса: словарь будет урезан")

        if config.get('RANSAC_MIN_INLIERS', 10) < 4:
            recommendations.append("RANSAC_MIN_INLIERS ниже 4 почти не отсеивает дистракторы")

        return recommendations


# Глобальный экземпляр валидатора
config_validator = ConfigValidator()
