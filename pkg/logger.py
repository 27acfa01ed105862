import logging
import os
import sys
import time
from datetime import datetime, timezone
from logging.handlers import RotatingFileHandler


class RetrievalLogger:
    def __init__(self, log_file: str = "retrieval_engine.log", max_size: int = 50*1024*1024, backup_count: int = 20):
        # Папка логов задаётся через окружение, по умолчанию ./logs
        self.logs_dir = os.getenv("RETRIEVAL_LOG_DIR", "logs")
        self.log_file = os.path.join(self.logs_dir, log_file)
        self.logger = logging.getLogger('LandmarkRetrieval')
        self.logger.setLevel(logging.DEBUG)
        self.logger.propagate = False

        # Предотвращаем дублирование handlers
        if not self.logger.handlers:
            self._setup_handlers(max_size, backup_count)

    def _setup_handlers(self, max_size: int, backup_count: int):
        """Настраивает обработчики логов"""

        class UtcFormatter(logging.Formatter):
            def formatTime(self, record, datefmt=None):
                ct = datetime.fromtimestamp(record.created, tz=timezone.utc)
                return ct.strftime(datefmt or '%Y-%m-%d %H:%M:%S UTC')

        formatter = UtcFormatter(
            '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
            datefmt='%Y-%m-%d %H:%M:%S UTC'
        )
        level_name = os.getenv("RETRIEVAL_LOG_LEVEL", "INFO").upper()
        level = getattr(logging, level_name, logging.INFO)

        # Файловый обработчик с ротацией
        try:
            os.makedirs(self.logs_dir, exist_ok=True)
            file_handler = RotatingFileHandler(
                self.log_file,
                maxBytes=max_size,
                backupCount=backup_count,
                encoding='utf-8'
            )
            file_handler.setLevel(level)
            file_handler.setFormatter(formatter)
            self.logger.addHandler(file_handler)
        except Exception as e:
            print(f"Ошибка создания файлового логгера: {e}", file=sys.stderr)
            # Простой файловый handler без ротации как fallback
            try:
                fallback_log = os.path.join(self.logs_dir, f"retrieval_{int(time.time())}.log")
                simple_handler = logging.FileHandler(fallback_log, encoding='utf-8')
                simple_handler.setLevel(level)
                simple_handler.setFormatter(formatter)
                self.logger.addHandler(simple_handler)
            except Exception as e2:
                print(f"Файловое логирование отключено: {e2}", file=sys.stderr)

        # Консоль только stderr: stdout занят данными
        console_handler = logging.StreamHandler(sys.stderr)
        console_handler.setLevel(level)
        console_handler.setFormatter(formatter)
        self.logger.addHandler(console_handler)

    def info(self, message: str):
        """Логирует информационное сообщение"""
        try:
            self.logger.info(message)
        except Exception:
            print(f"[LOG ERROR] info: {message}", file=sys.stderr)

    def warning(self, message: str):
        """Логирует предупреждение"""
        try:
            self.logger.warning(message)
        except Exception:
            print(f"[LOG ERROR] warning: {message}", file=sys.stderr)

    def error(self, message: str, exc_info: bool = False):
        """Логирует ошибку"""
        try:
            self.logger.error(message, exc_info=exc_info)
        except Exception:
            print(f"[LOG ERROR] error: {message}", file=sys.stderr)

    def debug(self, message: str):
        """Логирует отладочное сообщение"""
        try:
            if self.logger.isEnabledFor(logging.DEBUG):
                self.logger.debug(message)
        except Exception:
            print(f"[LOG ERROR] debug: {message}", file=sys.stderr)

    def critical(self, message: str, exc_info: bool = False):
        """Логирует критическую ошибку"""
        self.logger.critical(message, exc_info=exc_info)

    def stage(self, name: str, details: str = ""):
        """Логирует этап конвейера (одна строка на этап)"""
        message = f"STAGE: {name}"
        if details:
            message += f" - {details}"
        self.info(message)

    def performance_metric(self, metric_name: str, value: float, unit: str = ""):
        """Логирует метрики производительности"""
        message = f"METRIC: {metric_name} = {value}"
        if unit:
            message += f" {unit}"
        self.debug(message)


# Глобальный экземпляр логгера
engine_logger = RetrievalLogger()
