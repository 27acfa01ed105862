import json
import os
from typing import Dict, Any, Optional, Mapping
from logger import engine_logger
from config_validator import config_validator
from errors import ConfigError, StorageIOError


class ConfigManager:
    def __init__(self, config_file: Optional[str] = None):
        self.config_file = config_file or os.getenv("RETRIEVAL_CONFIG", "config.json")
        self.default_config: Dict[str, Any] = config_validator.get_defaults()
        self.config: Dict[str, Any] = self.default_config.copy()

    def load(self, config_file: Optional[str] = None, required: bool = False) -> Dict[str, Any]:
        """Загружает конфигурацию из файла с валидацией"""
        path = config_file or self.config_file
        if not os.path.exists(path):
            if required:
                raise StorageIOError(f"Файл конфигурации не найден: {path}")
            self.config = self.default_config.copy()
            engine_logger.debug(f"Файл {path} не найден, используются значения по умолчанию")
            return self.get_all()

        try:
            with open(path, 'r', encoding='utf-8') as f:
                file_config = json.load(f)
        except OSError as e:
            raise StorageIOError(f"Ошибка чтения конфигурации {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError([f"{path}: некорректный JSON ({e.msg}, строка {e.lineno})"])

        if not isinstance(file_config, dict):
            raise ConfigError([f"{path}: ожидается JSON-объект"])

        # Объединяем с дефолтными значениями и валидируем
        merged = {**self.default_config, **file_config}
        self._validate(merged)
        self.config = merged
        self.config_file = path
        engine_logger.info(f"Конфигурация загружена из {path}")
        return self.get_all()

    def apply_overrides(self, overrides: Mapping[str, Any]) -> Dict[str, Any]:
        """Применяет переопределения (флаги командной строки) поверх файла"""
        present = {key: value for key, value in overrides.items() if value is not None}
        if not present:
            return self.get_all()
        merged = {**self.config, **present}
        self._validate(merged)
        self.config = merged
        engine_logger.debug(f"Переопределены параметры: {', '.join(sorted(present))}")
        return self.get_all()

    def _validate(self, config: Dict[str, Any]):
        """Проверяет конфигурацию, при ошибке поднимает ConfigError"""
        is_valid, errors = config_validator.validate_config(config)
        if not is_valid:
            keys = [error.split(':', 1)[0] for error in errors]
            raise ConfigError(errors, keys)

        for recommendation in config_validator.get_recommendations(config)[:3]:
            engine_logger.info(f"Рекомендация по конфигурации: {recommendation}")

    def save(self, config_file: Optional[str] = None):
        """Сохраняет конфигурацию в файл"""
        path = config_file or self.config_file
        try:
            with open(path, 'w', encoding='utf-8') as f:
                json.dump(self.config, f, indent=2, ensure_ascii=False)
            engine_logger.debug(f"Конфигурация сохранена в {path}")
        except OSError as e:
            raise StorageIOError(f"Ошибка сохранения конфигурации {path}: {e}") from e

    def get(self, key: str, default=None) -> Any:
        """Получает значение конфигурации"""
        return self.config.get(key, default)

    def set(self, key: str, value: Any):
        """Устанавливает значение конфигурации"""
        self.apply_overrides({key: value})
        engine_logger.debug(f"Параметр {key} установлен в {value}")

    def reset_to_defaults(self):
        """Сбрасывает конфигурацию к значениям по умолчанию"""
        self.config = self.default_config.copy()
        engine_logger.info("Конфигурация сброшена к значениям по умолчанию")

    def get_all(self) -> Dict[str, Any]:
        """Возвращает всю конфигурацию"""
        return self.config.copy()


# Глобальный экземпляр менеджера конфигурации
config_manager = ConfigManager()
