#!/usr/bin/env python3
"""
Landmark Retrieval: поиск изображений достопримечательностей по локальным признакам
Точка входа командной строки (gen, train-attention, build-index, query, evaluate, fuse)
"""

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Dict, List, Optional, Sequence

from dotenv import load_dotenv

# Переменные окружения нужны до создания логгера
load_dotenv()

from logger import engine_logger
from config import ConfigManager, config_manager
from config_validator import config_validator
from errors import ConfigError, InvalidInputError, StorageError
from metrics_manager import metrics_manager

EXIT_OK = 0
EXIT_IO = 1
EXIT_VALIDATION = 2


def _flag(key: str) -> str:
    return '--' + key.lower().replace('_', '-')


def _flag_type(rule: Dict[str, Any]):
    if rule['type'] is int:
        return int
    if rule['type'] is str:
        return str
    return float


def _config_parent() -> argparse.ArgumentParser:
    """Флаги 1:1 с ключами конфигурации; значение None означает «не задано»"""
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument('--config', help='Файл конфигурации JSON (по умолчанию $RETRIEVAL_CONFIG или config.json)')
    group = parent.add_argument_group('параметры конвейера')
    for key, rule in config_validator.validation_rules.items():
        kwargs = {'dest': key, 'default': None, 'type': _flag_type(rule),
                  'help': f"{rule['description']} [по умолчанию {rule['default']}]".replace('%', '%%')}
        if 'choices' in rule:
            kwargs['choices'] = list(rule['choices'])
        group.add_argument(_flag(key), **kwargs)
    return parent


def build_parser() -> argparse.ArgumentParser:
    parent = _config_parent()
    parser = argparse.ArgumentParser(prog='landmark-retrieval',
                                     description='Поиск изображений по локальным признакам с геометрической проверкой')
    sub = parser.add_subparsers(dest='command', required=True)

    gen = sub.add_parser('gen', parents=[parent], help='Синтетический корпус, запросы и геометки')
    gen.add_argument('--out', required=True, help='Каталог для файлов корпуса')

    train = sub.add_parser('train-attention', parents=[parent], help='Обучение оценщика внимания')
    train.add_argument('--bags', required=True, help='Мешки признаков (JSONL)')
    train.add_argument('--out', required=True, help='Чекпоинт DATT')
    train.add_argument('--loss-csv', help='Трасса потерь (по умолчанию <out>.loss.csv)')

    build = sub.add_parser('build-index', parents=[parent], help='Построение индекса')
    build.add_argument('--features', required=True, help='Признаки базы (JSONL или DLF1)')
    build.add_argument('--out', required=True, help='Файл индекса DIDX')
    build.add_argument('--checkpoint', help='Чекпоинт внимания для политики attention')
    build.add_argument('--stats', help='Статистика построения JSON (по умолчанию <out>.stats.json)')

    query = sub.add_parser('query', parents=[parent], help='Поиск и геометрическая проверка запросов')
    query.add_argument('--index', required=True, help='Файл индекса DIDX')
    query.add_argument('--queries', required=True, help='Признаки запросов (JSONL или DLF1)')
    query.add_argument('--out', required=True, help='Ранжированные результаты JSONL')
    query.add_argument('--checkpoint', help='Чекпоинт внимания для политики attention')

    evaluate = sub.add_parser('evaluate', parents=[parent], help='Кривая точность/полнота, mAP, отсев дистракторов')
    evaluate.add_argument('--run', required=True, help='Результаты JSONL')
    evaluate.add_argument('--geo', required=True, help='Геометки базы CSV image_id,lat,lon,landmark_id')
    evaluate.add_argument('--queries', required=True, help='Геометки запросов CSV query_id,lat,lon')
    evaluate.add_argument('--out-pr', required=True, help='Точки кривой CSV threshold,precision,recall')
    evaluate.add_argument('--summary', help='Сводка JSON')

    fuse = sub.add_parser('fuse', parents=[parent], help='Позднее слияние локальных и глобальных оценок')
    fuse.add_argument('--local', required=True, help='Локальные оценки CSV query_id,image_id,score')
    fuse.add_argument('--global', dest='global_scores', required=True, help='Глобальные оценки CSV')
    fuse.add_argument('--weight', dest='FUSION_WEIGHT', type=float, default=None, help='Синоним --fusion-weight')
    fuse.add_argument('--out', required=True, help='Слитые результаты JSONL')
    return parser


def load_settings(args: argparse.Namespace) -> Dict[str, Any]:
    """Приоритет: флаги > файл > значения по умолчанию"""
    manager = ConfigManager(args.config) if args.config else config_manager
    manager.load(required=args.config is not None)
    overrides = {key: getattr(args, key, None) for key in config_validator.validation_rules}
    return manager.apply_overrides(overrides)


def _workers(settings: Dict[str, Any]) -> int:
    return settings['WORKERS'] or (os.cpu_count() or 1)


def _emit(payload: Dict[str, Any]):
    sys.stdout.write(json.dumps(payload, sort_keys=True, ensure_ascii=False) + '\n')
    sys.stdout.flush()


def _policy(settings: Dict[str, Any]):
    from feature_model import SelectionPolicy
    return SelectionPolicy(settings['SELECTION_POLICY'])


def _scorer(settings: Dict[str, Any], checkpoint: Optional[str]):
    from attention import load_checkpoint
    from feature_model import SelectionPolicy
    if _policy(settings) is not SelectionPolicy.ATTENTION:
        return None
    if not checkpoint:
        raise InvalidInputError("SELECTION_POLICY=attention требует --checkpoint")
    scorer, _ = load_checkpoint(checkpoint)
    return scorer


def cmd_gen(args, settings) -> Dict[str, Any]:
    import feature_store
    from synth import SynthConfig, bags_from_corpus, dataset_digest, gen_landmark_dataset

    dataset = gen_landmark_dataset(SynthConfig.from_config(settings))
    out = args.out
    feature_store.write_features_jsonl(os.path.join(out, 'db_features.jsonl'), dataset.db)
    feature_store.write_features_jsonl(os.path.join(out, 'query_features.jsonl'), dataset.queries)
    feature_store.write_geo_csv(os.path.join(out, 'db_geo.csv'), dataset.db_geo)
    feature_store.write_query_csv(os.path.join(out, 'queries.csv'), dataset.query_geo)
    landmark_of = {record.image_id: record.landmark_id for record in dataset.db_geo}
    bags, classes = bags_from_corpus(dataset.db, landmark_of)
    feature_store.write_bags_jsonl(os.path.join(out, 'bags.jsonl'), bags, classes)
    summary = {
        'db_images': len(dataset.db),
        'db_features': sum(len(image) for image in dataset.db),
        'queries': len(dataset.queries),
        'distractor_queries': sum(1 for label in dataset.labels.values() if label is None),
        'landmarks': len(classes),
        'bags': len(bags),
        'sha256': dataset_digest(dataset),
    }
    feature_store.write_json(os.path.join(out, 'manifest.json'), summary)
    return summary


def cmd_train_attention(args, settings) -> Dict[str, Any]:
    import feature_store
    from attention import save_checkpoint, train_attention, training_accuracy

    bags = feature_store.read_bags_jsonl(args.bags)
    scorer, classifier, trace = train_attention(bags, hidden=settings['ATTENTION_HIDDEN'],
                                                lr=float(settings['ATTENTION_LR']),
                                                steps=settings['ATTENTION_STEPS'], seed=settings['SEED'])
    save_checkpoint(args.out, scorer, classifier)
    feature_store.write_loss_csv(args.loss_csv or args.out + '.loss.csv', trace)
    return {'bags': len(bags), 'classes': classifier.n_classes, 'initial_loss': trace[0],
            'final_loss': trace[-1], 'training_accuracy': training_accuracy(scorer, classifier, bags)}


def _prepare_all(images, settings, pca=None, scorer=None, workers: int = 1):
    from pipeline import prepare_image
    policy, cap = _policy(settings), settings['FEATURE_CAP']

    def prepare(image):
        return prepare_image(image, policy, cap, pca=pca, scorer=scorer)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(prepare, images))
    return [prepare(image) for image in images]


def cmd_build_index(args, settings) -> Dict[str, Any]:
    import feature_store
    from index import IndexConfig, build_index, build_stats
    from index_storage import save_index
    from pipeline import train_reduction
    from linalg import reduce_descriptors

    config = IndexConfig.from_config(settings)
    workers = _workers(settings)
    corpus = feature_store.read_features(args.features)
    with metrics_manager.timed('select'):
        selected = _prepare_all(corpus, settings, scorer=_scorer(settings, args.checkpoint), workers=workers)
    pca = train_reduction(selected, config.descriptor_dim)
    reduced = [image.with_features(f.with_descriptor(d) for f, d in
                                   zip(image.features, reduce_descriptors(pca, image.descriptors())))
               if len(image) else image for image in selected]
    index = build_index(reduced, config, seed=settings['SEED'], pca=pca, workers=workers)
    save_index(index, args.out)
    stats = build_stats(index)
    feature_store.write_json(args.stats or args.out + '.stats.json', stats)
    return stats


def cmd_query(args, settings) -> Dict[str, Any]:
    import feature_store
    from index import SearchParams
    from index_storage import load_index
    from matcher import RansacParams
    from pipeline import verify_query

    index = load_index(args.index)
    queries = feature_store.read_features(args.queries)
    workers = _workers(settings)
    prepared = _prepare_all(queries, settings, pca=index.pca,
                            scorer=_scorer(settings, args.checkpoint), workers=workers)
    search, ransac = SearchParams.from_config(settings), RansacParams.from_config(settings)

    def run(query):
        return verify_query(index, query, search, ransac)

    with metrics_manager.timed('query'):
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                ranked = list(pool.map(run, prepared))
        else:
            ranked = [run(query) for query in prepared]

    rows: List[Dict[str, Any]] = []
    for query, results in zip(prepared, ranked):
        rows.extend({'query_id': query.image_id, 'image_id': r.image_id, 'inliers': r.inlier_count,
                     'total': r.total_correspondences} for r in results)
    feature_store.write_run_jsonl(args.out, rows)
    answered = sum(1 for results in ranked if results)
    metrics_manager.increment('queries', len(prepared))
    metrics_manager.increment('verified_results', len(rows))
    engine_logger.stage("query", f"запросов {len(prepared)}, с результатами {answered}")
    return {'queries': len(prepared), 'answered': answered, 'results': len(rows)}


def cmd_evaluate(args, settings) -> Dict[str, Any]:
    import feature_store
    from evaluation import (build_ground_truth, dedup_run, distractor_rejection_rate, mean_average_precision,
                            pr_sweep, recall_at_precision)

    run = feature_store.read_run_jsonl(args.run)
    gt = build_ground_truth(feature_store.read_geo_csv(args.geo), feature_store.read_query_csv(args.queries),
                            threshold_km=float(settings['GT_THRESHOLD_KM']), min_photos=settings['MIN_PHOTOS'])
    points = pr_sweep(dedup_run(run, gt.landmark_of), gt)
    feature_store.write_pr_csv(args.out_pr, points)

    target = float(settings['PRECISION_TARGET'])
    recall = recall_at_precision(points, target)
    summary = {
        'queries': len(gt.relevant),
        'evaluable_queries': len(gt.evaluable_queries),
        'distractor_queries': len(gt.distractor_queries),
        'pr_points': len(points),
        'max_precision': max((p.precision for p in points), default=0.0),
        'max_recall': max((p.recall for p in points), default=0),
        'precision_target': target,
        'recall_at_precision': recall,
        'map': mean_average_precision(run, gt) if gt.evaluable_queries else None,
        'distractor_rejection_rate': distractor_rejection_rate(run, gt) if gt.distractor_queries else None,
    }
    if args.summary:
        feature_store.write_json(args.summary, summary)
    return summary


def cmd_fuse(args, settings) -> Dict[str, Any]:
    import feature_store
    from evaluation import late_fusion

    fused = late_fusion(feature_store.read_scores_csv(args.local), feature_store.read_scores_csv(args.global_scores),
                        weight=float(settings['FUSION_WEIGHT']))
    rows = feature_store.run_rows(fused)
    feature_store.write_run_jsonl(args.out, rows)
    return {'queries': len(fused.results), 'results': len(rows), 'weight': float(settings['FUSION_WEIGHT'])}


COMMANDS = {
    'gen': cmd_gen,
    'train-attention': cmd_train_attention,
    'build-index': cmd_build_index,
    'query': cmd_query,
    'evaluate': cmd_evaluate,
    'fuse': cmd_fuse,
}


def _diagnostic(command: str, error: Exception, typed: bool = True) -> str:
    """Однострочное сообщение об ошибке команды"""
    text = " ".join(str(error).split()) or repr(error)
    return f"{command}: {text}" if typed else f"{command}: {type(error).__name__}: {text}"


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = load_settings(args)
        engine_logger.stage(args.command, "старт")
        with metrics_manager.timed(args.command):
            summary = COMMANDS[args.command](args, settings)
        _emit(summary)
        engine_logger.debug(f"Метрики: {metrics_manager.get_stage_stats()}")
        return EXIT_OK
    except (ConfigError, InvalidInputError) as e:
        engine_logger.error(_diagnostic(args.command, e))
        return EXIT_VALIDATION
    except (StorageError, OSError) as e:
        engine_logger.error(_diagnostic(args.command, e))
        return EXIT_IO
    except (ValueError, KeyError, TypeError, IndexError) as e:
        # Ошибки вне иерархии движка: содержимое входных данных
        engine_logger.error(_diagnostic(args.command, e, typed=False))
        return EXIT_VALIDATION
    except Exception as e:
        engine_logger.error(_diagnostic(args.command, e, typed=False))
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
