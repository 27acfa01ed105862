"""
Файлы конвейера: признаки (JSONL и бинарный DLF1), геометки, оценки,
результаты запросов, мешки для обучения внимания
"""

import csv
import io
import json
import math
from typing import Any, Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from attention import FeatureBag
from binary_io import BinaryReader, BinaryWriter, read_bytes, write_bytes
from data_validator import data_validator
from errors import FormatError, InvalidInputError
from evaluation import GeoRecord, PrPoint, RetrievalRun
from feature_model import ImageFeatures, LocalFeature

FEATURE_MAGIC = b'DLF1'


def _read_text(path: str) -> str:
    try:
        return read_bytes(path).decode('utf-8')
    except UnicodeDecodeError as e:
        raise FormatError(path, f"некорректный UTF-8: {e}") from e


def _write_text(path: str, text: str):
    write_bytes(path, text.encode('utf-8'))


def _json_lines(path: str) -> Iterator[Tuple[int, Any]]:
    for number, line in enumerate(_read_text(path).splitlines(), start=1):
        if not line.strip():
            continue
        try:
            yield number, json.loads(line)
        except json.JSONDecodeError as e:
            raise FormatError(f"{path}:{number}", f"некорректный JSON ({e.msg})") from e


def _dump_lines(records: Iterable[Mapping[str, Any]]) -> str:
    return ''.join(json.dumps(record, sort_keys=True, ensure_ascii=False) + '\n' for record in records)


def feature_record(feature: LocalFeature) -> Dict[str, Any]:
    x, y = feature.location
    return {'x': x, 'y': y, 'scale': feature.scale, 'score': feature.score,
            'descriptor': [float(v) for v in feature.descriptor]}


def write_features_jsonl(path: str, images: Sequence[ImageFeatures]):
    _write_text(path, _dump_lines({'image_id': image.image_id,
                                   'features': [feature_record(f) for f in image.features]}
                                  for image in images))


def read_features_jsonl(path: str, expected_dim: Optional[int] = None) -> List[ImageFeatures]:
    images = []
    for number, record in _json_lines(path):
        where = f"{path}:{number}"
        if not isinstance(record, dict) or not isinstance(record.get('image_id'), str) \
                or not isinstance(record.get('features'), list):
            raise FormatError(where, "ожидается {image_id, features}")
        dim = expected_dim
        features = []
        for ordinal, item in enumerate(record['features']):
            if not isinstance(item, dict) or not data_validator.validate_feature_record(item, dim):
                raise FormatError(where, f"некорректный признак #{ordinal} изображения {record['image_id']}")
            dim = len(item['descriptor'])
            features.append(LocalFeature(descriptor=np.asarray(item['descriptor'], dtype=np.float64),
                                         location=(item['x'], item['y']),
                                         scale=item['scale'], score=item['score']))
        images.append(ImageFeatures(record['image_id'], tuple(features)))
    return images


def write_features_binary(path: str, images: Sequence[ImageFeatures]):
    """DLF1: магия, u32 число изображений, далее записи фиксированной ширины (f64)"""
    writer = BinaryWriter()
    writer.magic(FEATURE_MAGIC)
    writer.u32(len(images))
    for image in images:
        encoded = image.image_id.encode('utf-8')
        writer.u32(len(encoded))
        writer.raw(encoded)
        writer.u32(len(image))
        writer.u32(image.dim)
        if len(image):
            block = np.column_stack([image.locations(), image.scales(), image.scores(), image.descriptors()])
            writer.array(block, '<f8')
    write_bytes(path, writer.getvalue())


def read_features_binary(path: str) -> List[ImageFeatures]:
    reader = BinaryReader(read_bytes(path))
    reader.magic(FEATURE_MAGIC)
    images = []
    for _ in range(reader.u32('count')):
        try:
            image_id = reader.raw(reader.u32('image_id'), 'image_id').decode('utf-8')
        except UnicodeDecodeError as e:
            raise FormatError('image_id', f"некорректный UTF-8: {e}") from e
        count, dim = reader.u32('features'), reader.u32('dim')
        block = reader.array(count * (4 + dim), '<f8', f'features[{image_id}]').reshape(count, 4 + dim)
        features = []
        for row in block:
            try:
                features.append(LocalFeature(descriptor=row[4:], location=(row[0], row[1]),
                                             scale=row[2], score=row[3]))
            except InvalidInputError as e:
                raise FormatError(f'features[{image_id}]', str(e)) from e
        images.append(ImageFeatures(image_id, tuple(features)))
    reader.finish()
    return images


def read_features(path: str) -> List[ImageFeatures]:
    """Определяет формат по сигнатуре файла"""
    if read_bytes(path)[:len(FEATURE_MAGIC)] == FEATURE_MAGIC:
        return read_features_binary(path)
    return read_features_jsonl(path)


def _csv_text(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()


def _csv_rows(path: str, header: Sequence[str]) -> Iterator[Tuple[str, Dict[str, str]]]:
    reader = csv.DictReader(io.StringIO(_read_text(path)))
    if reader.fieldnames is None or list(reader.fieldnames[:len(header)]) != list(header):
        raise FormatError(path, f"ожидается заголовок {','.join(header)}")
    for row in reader:
        yield f"{path}:{reader.line_num}", row


def _float(where: str, value: Optional[str], name: str) -> float:
    try:
        result = float(value)
    except (TypeError, ValueError):
        raise FormatError(where, f"{name}: не число ({value!r})")
    if not math.isfinite(result):
        raise FormatError(where, f"{name}: не конечное число")
    return result


def _geo(where: str, image_id: str, lat: float, lon: float, landmark: Optional[str]) -> GeoRecord:
    if not data_validator.validate_geo_record(lat, lon):
        raise FormatError(where, f"координаты вне диапазона: ({lat}, {lon})")
    return GeoRecord(image_id, lat, lon, landmark)


def write_geo_csv(path: str, records: Sequence[GeoRecord]):
    _write_text(path, _csv_text(('image_id', 'lat', 'lon', 'landmark_id'),
                                ((r.image_id, repr(float(r.latitude)), repr(float(r.longitude)), r.landmark_id or '')
                                 for r in records)))


def read_geo_csv(path: str) -> List[GeoRecord]:
    records = []
    for where, row in _csv_rows(path, ('image_id', 'lat', 'lon', 'landmark_id')):
        records.append(_geo(where, row['image_id'], _float(where, row['lat'], 'lat'),
                            _float(where, row['lon'], 'lon'), row['landmark_id'] or None))
    return records


def write_query_csv(path: str, records: Sequence[GeoRecord]):
    _write_text(path, _csv_text(('query_id', 'lat', 'lon'),
                                ((r.image_id, repr(float(r.latitude)), repr(float(r.longitude))) for r in records)))


def read_query_csv(path: str) -> List[GeoRecord]:
    return [_geo(where, row['query_id'], _float(where, row['lat'], 'lat'), _float(where, row['lon'], 'lon'), None)
            for where, row in _csv_rows(path, ('query_id', 'lat', 'lon'))]


def write_pr_csv(path: str, points: Sequence[PrPoint]):
    _write_text(path, _csv_text(('threshold', 'precision', 'recall'),
                                ((repr(float(p.threshold)), repr(float(p.precision)), int(p.recall)) for p in points)))


def write_scores_csv(path: str, run: RetrievalRun):
    rows = ((query_id, image_id, repr(float(score)))
            for query_id in sorted(run.results) for image_id, score in run.ranked(query_id))
    _write_text(path, _csv_text(('query_id', 'image_id', 'score'), rows))


def read_scores_csv(path: str) -> RetrievalRun:
    results: Dict[str, List[Tuple[str, float]]] = {}
    for where, row in _csv_rows(path, ('query_id', 'image_id', 'score')):
        results.setdefault(row['query_id'], []).append((row['image_id'], _float(where, row['score'], 'score')))
    return RetrievalRun(results)


def write_run_jsonl(path: str, rows: Iterable[Mapping[str, Any]]):
    """Ранжированные результаты: {query_id, image_id, inliers, total} на строку"""
    _write_text(path, _dump_lines(rows))


def read_run_jsonl(path: str) -> RetrievalRun:
    results: Dict[str, List[Tuple[str, float]]] = {}
    for number, record in _json_lines(path):
        if not isinstance(record, dict) or not {'query_id', 'image_id'} <= set(record):
            raise FormatError(f"{path}:{number}", "ожидается {query_id, image_id, inliers|score}")
        score = record.get('score', record.get('inliers'))
        if isinstance(score, bool) or not isinstance(score, (int, float)):
            raise FormatError(f"{path}:{number}", "нет числовой оценки")
        results.setdefault(record['query_id'], []).append((record['image_id'], float(score)))
    return RetrievalRun(results)


def run_rows(run: RetrievalRun) -> List[Dict[str, Any]]:
    return [{'query_id': query_id, 'image_id': image_id, 'score': score}
            for query_id in sorted(run.results) for image_id, score in run.ranked(query_id)]


def write_bags_jsonl(path: str, bags: Sequence[FeatureBag], classes: Optional[Sequence[str]] = None):
    _write_text(path, _dump_lines(
        {'label': bag.label,
         'class': classes[bag.label] if classes else str(bag.label),
         'features': [[float(v) for v in row] for row in bag.features]}
        for bag in bags))


def read_bags_jsonl(path: str) -> List[FeatureBag]:
    bags = []
    for number, record in _json_lines(path):
        where = f"{path}:{number}"
        if not isinstance(record, dict) or not isinstance(record.get('label'), int) \
                or not isinstance(record.get('features'), list) or not record['features']:
            raise FormatError(where, "ожидается {label, features}")
        rows = record['features']
        if not all(data_validator.validate_descriptor(row, len(rows[0])) for row in rows):
            raise FormatError(where, "некорректный признак в мешке")
        try:
            bags.append(FeatureBag(np.asarray(rows, dtype=np.float64), record['label']))
        except InvalidInputError as e:
            raise FormatError(where, str(e)) from e
    return bags


def write_loss_csv(path: str, trace: Sequence[float]):
    _write_text(path, _csv_text(('epoch', 'loss'), ((i, repr(float(v))) for i, v in enumerate(trace))))


def write_json(path: str, payload: Mapping[str, Any]):
    _write_text(path, json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + '\n')
