import time
from contextlib import contextmanager
from typing import Dict, List, Any
from collections import defaultdict, deque

import psutil

from logger import engine_logger


class MetricsManager:
    def __init__(self):
        self.start_time = time.time()
        self.stage_durations: Dict[str, List[float]] = defaultdict(list)
        self.performance_metrics: Dict[str, deque] = defaultdict(lambda: deque(maxlen=100))
        self.counters: Dict[str, int] = defaultdict(int)
        self._process = psutil.Process()

    @contextmanager
    def timed(self, stage: str):
        """Замеряет длительность этапа конвейера"""
        started = time.perf_counter()
        try:
            yield
        finally:
            elapsed = time.perf_counter() - started
            self.stage_durations[stage].append(elapsed)
            engine_logger.performance_metric(f"{stage}_seconds", round(elapsed, 4), "s")

    def increment(self, counter: str, value: int = 1):
        """Увеличивает счётчик"""
        self.counters[counter] += value

    def record_performance_metric(self, metric_name: str, value: float):
        """Записывает метрику производительности"""
        self.performance_metrics[metric_name].append(value)
        engine_logger.performance_metric(metric_name, value)

    def record_memory(self, label: str) -> float:
        """Записывает резидентную память процесса в МБ"""
        rss_mb = self._process.memory_info().rss / (1024 * 1024)
        self.record_performance_metric(f"rss_mb_{label}", round(rss_mb, 1))
        return rss_mb

    def get_stage_stats(self) -> Dict[str, Any]:
        """Возвращает статистику этапов"""
        stats = {}
        for stage, durations in self.stage_durations.items():
            if durations:
                stats[stage] = {
                    'calls': len(durations),
                    'total_seconds': sum(durations),
                    'avg_seconds': sum(durations) / len(durations),
                    'max_seconds': max(durations)
                }
        return stats

    def get_performance_stats(self) -> Dict[str, Any]:
        """Возвращает статистику производительности"""
        stats = {}
        for metric_name, values in self.performance_metrics.items():
            if values:
                stats[metric_name] = {
                    'current': values[-1],
                    'avg': sum(values) / len(values),
                    'max': max(values),
                    'min': min(values)
                }
        return stats

    def get_uptime(self) -> float:
        """Возвращает время работы в секундах"""
        return time.time() - self.start_time

    def reset(self):
        """Сбрасывает накопленные метрики"""
        self.stage_durations.clear()
        self.performance_metrics.clear()
        self.counters.clear()
        self.start_time = time.time()

    def get_summary(self) -> Dict[str, Any]:
        """Возвращает сводку всех метрик"""
        return {
            'uptime_seconds': self.get_uptime(),
            'stage_stats': self.get_stage_stats(),
            'performance_stats': self.get_performance_stats(),
            'counters': dict(self.counters)
        }


# Глобальный экземпляр метрик
metrics_manager = MetricsManager()
