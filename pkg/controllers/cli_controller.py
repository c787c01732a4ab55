"""
Command-line controller

Verbs: prepare, augment, train, evaluate, predict, arch-info. Each verb validates
its inputs before doing any work and maps failures to the exit codes in errors.py.
"""
import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Any, Dict, List, Optional

from marshmallow import ValidationError

from config import settings
from errors import (
    EXIT_OK, ERRORS, get_error, log_stage_timing,
)
from schemas.config import config_digest
from schemas.metrics import PredictionOutputSchema
from services.augmentation_service import AugmentationError
from services.checkpoint_service import CheckpointError, load_checkpoint
from services.evaluation_service import (
    EvaluationError, RoundResult, build_report, evaluate_network, write_metrics,
)
from services.fold_service import FoldProtocolError, ProtocolViolationError, make_folds
from services.manifest_service import Manifest, ManifestError, read_manifest, scan_dataset, write_manifest
from services.model_zoo import (
    ARCHITECTURE_NAMES, ArchitectureError, UnknownArchitectureError, build_architecture,
    compare_with_published, parameter_report, propagate,
)
from services.prediction_service import predict_track
from services.segmentation_service import SegmentationError, TrackTooShortError, ingest
from services.training_service import NonFiniteLossError, TrainingError
from tasks.pipeline_tasks import (
    augment_record, augment_track_task, augmentation_config_from, checkpoint_name,
    run_round_from_manifest, train_round_task,
)
from utils.atomic_io import replace_dir, temp_job_dir, write_text_atomic
from utils.wav_io import WavIngestionError

logger = logging.getLogger(__name__)


class UsageError(Exception):
    """Invalid command-line usage"""
    pass


class DataError(Exception):
    """Inputs do not satisfy the dataset contract"""

    def __init__(self, message: str, report: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.report = report or {}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_run_options(parser):
    parser.add_argument('--manifest', required=True, help='JSON-lines manifest from prepare or augment')
    parser.add_argument('--arch', help=f"one of {', '.join(ARCHITECTURE_NAMES)}")
    parser.add_argument('--augment', action=argparse.BooleanOptionalAction, default=None,
                        help='train on originals plus their augmentations')
    parser.add_argument('--seed', type=int)
    parser.add_argument('--rounds', type=int, nargs='+', help='subset of rounds 1 2 3')
    parser.add_argument('--patience', type=int)
    parser.add_argument('--max-epochs', type=int, dest='max_epochs')
    parser.add_argument('--batch-size', type=int, dest='batch_size')
    parser.add_argument('--learning-rate', type=float, dest='learning_rate')
    parser.add_argument('--strict', action=argparse.BooleanOptionalAction, default=None)
    parser.add_argument('--config', help='JSON run configuration; flags override its values')
    parser.add_argument('--out-dir', dest='out_dir')
    parser.add_argument('--distributed', action='store_true', help='dispatch rounds as Celery tasks')


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog='wavegenre', description='Raw-waveform music genre classification')
    parser.add_argument('--log-level', dest='log_level')
    sub = parser.add_subparsers(dest='command', parser_class=_Parser)
    sub.required = True

    prepare = sub.add_parser('prepare', help='scan a genre/<file>.wav tree into a manifest')
    prepare.add_argument('--data-dir', dest='data_dir')
    prepare.add_argument('--out', help='manifest path (default <out-dir>/manifest.jsonl)')
    prepare.add_argument('--out-dir', dest='out_dir')
    prepare.add_argument('--strict', action=argparse.BooleanOptionalAction, default=True)

    augment = sub.add_parser('augment', help='add five augmented clips per original')
    augment.add_argument('--manifest', required=True)
    augment.add_argument('--seed', type=int)
    augment.add_argument('--loudness-target', type=float, dest='loudness_target')
    augment.add_argument('--config')
    augment.add_argument('--out-dir', dest='out_dir')
    augment.add_argument('--distributed', action='store_true', help='dispatch tracks as Celery tasks')

    _add_run_options(sub.add_parser('train', help='train one checkpoint per round'))
    evaluate = sub.add_parser('evaluate', help='three-round protocol with mean and std')
    _add_run_options(evaluate)
    evaluate.add_argument('--from-checkpoints', dest='from_checkpoints',
                          help='score saved round checkpoints instead of training')

    predict = sub.add_parser('predict', help='classify one WAV file')
    predict.add_argument('--checkpoint', required=True)
    predict.add_argument('--wav', required=True)
    predict.add_argument('--output', help='write the JSON result here as well')

    info = sub.add_parser('arch-info', help='shape trace and parameter counts')
    info.add_argument('--arch', default='all')
    info.add_argument('--json', action='store_true', dest='as_json')
    return parser


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _emit(payload):
    print(json.dumps(payload, indent=2, sort_keys=True))


def _out_dir(args) -> Path:
    out = Path(args.out_dir) if getattr(args, 'out_dir', None) else settings.output_dir()
    out.mkdir(parents=True, exist_ok=True)
    return out


def _run_config(args) -> Dict[str, Any]:
    overrides = {
        key: getattr(args, key, None)
        for key in ('arch', 'augment', 'seed', 'patience', 'max_epochs', 'batch_size',
                    'learning_rate', 'strict', 'rounds', 'loudness_target')
    }
    try:
        return settings.resolve_run_config(getattr(args, 'config', None), overrides)
    except (OSError, ValueError) as e:
        raise UsageError(f'Unreadable config file {args.config}: {e}')


def _dispatch(items, run, submit, distributed: bool):
    """
    Yield (item, result, error) for every item.

    Distributed mode submits every item before collecting, so workers run in parallel;
    an eager Celery app raises at submission, which is reported the same way.
    """
    if not distributed:
        for item in items:
            try:
                yield item, run(item), None
            except Exception as e:
                yield item, None, e
        return
    handles = []
    for item in items:
        try:
            handles.append((item, submit(item), None))
        except Exception as e:
            handles.append((item, None, e))
    for item, handle, error in handles:
        if error is not None:
            yield item, None, error
            continue
        try:
            yield item, handle.get(), None
        except Exception as e:
            yield item, None, e


# ---------------------------------------------------------------------------
# Verbs
# ---------------------------------------------------------------------------

def cli_prepare(args) -> int:
    start_time = time.time()
    data_dir = args.data_dir or settings.data_root()
    if data_dir is None:
        raise UsageError('prepare needs --data-dir or WAVEGENRE_DATA_ROOT')
    out_path = Path(args.out) if args.out else _out_dir(args) / 'manifest.jsonl'

    manifest, failures = scan_dataset(data_dir, manifest_dir=out_path.parent)
    if not manifest.tracks:
        raise DataError(f'No readable WAV files under {data_dir}',
                        {'unreadable': [{'path': p, 'reason': r} for p, r in failures]})
    write_manifest(manifest, out_path)

    counts = manifest.genre_counts()
    report = {'manifest': str(out_path), 'tracks': len(manifest.tracks), 'per_genre': counts,
              'unreadable': [{'path': p, 'reason': r} for p, r in failures]}
    _emit(report)
    log_stage_timing('prepare', start_time)

    offending = {g: n for g, n in counts.items() if n != 100}
    if args.strict and (offending or failures):
        raise DataError(f'Expected 100 readable tracks per genre; deviations: {offending}', report)
    if offending:
        logger.warning(f'[PREPARE] Non-strict mode: uneven genres {offending}')
    return EXIT_OK


def cli_augment(args) -> int:
    start_time = time.time()
    run_config = _run_config(args)
    out_dir = _out_dir(args)
    if any(out_dir.iterdir()):
        raise UsageError(f'Augmentation output directory {out_dir} is not empty')
    source = read_manifest(args.manifest)
    originals = [dict(t, path=str(source.resolve(t))) for t in source.originals()]
    if not originals:
        raise DataError(f'Manifest {args.manifest} has no original tracks')

    records: List[dict] = []
    # staged next to out_dir so the finished tree lands with one rename
    with temp_job_dir(base_dir=out_dir.parent, job_id=f'.{out_dir.name}.staging') as staging:
        results, failures = [], []
        outcomes = _dispatch(
            originals,
            lambda t: augment_record(t, t['path'], str(staging), run_config),
            lambda t: augment_track_task.delay(t, t['path'], str(staging), run_config),
            args.distributed,
        )
        for track, augmented, error in outcomes:
            if error is not None:
                logger.error(f"[AUGMENT] {track['track_id']} failed: {error}")
                failures.append((track['track_id'], 'all', str(error)))
            else:
                results.append((track, augmented))
        if failures:
            # staging is removed on exit, so nothing partial reaches out_dir
            raise AugmentationError(f'Augmentation failed for {len(failures)} tracks; no output was kept', failures)

        for track, augmented in results:
            records.append(track)
            records.extend(augmented)
        manifest = Manifest(
            tracks=records, seed=run_config['seed'],
            augmentation_digest=augmentation_config_from(run_config).digest(), root=staging.resolve(),
        )
        write_manifest(manifest, staging / 'manifest.jsonl')
        replace_dir(staging, out_dir)

    manifest_path = out_dir / 'manifest.jsonl'
    _emit({'manifest': str(manifest_path), 'tracks': len(records), 'originals': len(originals)})
    log_stage_timing('augment', start_time)
    return EXIT_OK


def _protocol(args, run_config: Dict[str, Any], out_dir: Path) -> List[RoundResult]:
    """Train and test the requested rounds; completed rounds survive a later failure in metrics.partial.*"""
    manifest_path = str(Path(args.manifest).resolve())
    results: List[RoundResult] = []
    outcomes = _dispatch(
        run_config['rounds'],
        lambda r: run_round_from_manifest(manifest_path, r, run_config, str(out_dir)),
        lambda r: train_round_task.delay(manifest_path, r, run_config, str(out_dir)),
        args.distributed,
    )
    for round_index, outcome, error in outcomes:
        if error is not None:
            if results:
                write_metrics(build_report(run_config['arch'], run_config['augment'], results), out_dir,
                              stem='metrics.partial')
            raise EvaluationError(f'Round {round_index} failed: {error}', results, error)
        results.append(RoundResult(**outcome['result']))
    return results


def _score_checkpoints(args, run_config: Dict[str, Any]) -> List[RoundResult]:
    manifest = read_manifest(args.manifest)
    plan = make_folds([(t['track_id'], t['genre_index']) for t in manifest.originals()],
                      run_config['seed'], strict=run_config['strict'])
    corpus = manifest.to_corpus_index()
    spec = build_architecture(run_config['arch'])
    results = []
    for r in run_config['rounds']:
        path = Path(args.from_checkpoints) / checkpoint_name(spec.name, r)
        network = load_checkpoint(path, spec)
        meta = network.metadata
        if meta.get('config_digest') and meta['config_digest'] != config_digest(run_config):
            logger.warning(f'[EVAL] {path.name} was trained with a different configuration')
        results.append(evaluate_network(network, plan, r, corpus, run_config['augment'],
                                        int(meta.get('epoch', 0)), int(meta.get('best_epoch', 0))))
    return results


def cli_train(args) -> int:
    run_config = _run_config(args)
    out_dir = _out_dir(args)
    results = _protocol(args, run_config, out_dir)
    report = build_report(run_config['arch'], run_config['augment'], results)
    write_metrics(report, out_dir)
    _emit({'rounds': [r.to_row() for r in results],
           'checkpoints': [str(out_dir / checkpoint_name(run_config['arch'], r.round_index)) for r in results]})
    return EXIT_OK


def cli_evaluate(args) -> int:
    start_time = time.time()
    run_config = _run_config(args)
    out_dir = _out_dir(args)
    if args.from_checkpoints:
        results = _score_checkpoints(args, run_config)
    else:
        results = _protocol(args, run_config, out_dir)
    report = build_report(run_config['arch'], run_config['augment'], results)
    paths = write_metrics(report, out_dir)
    _emit({'summary': report.summary, 'headline_rule': report.headline_rule, 'headline': report.headline,
           'metrics': {k: str(v) for k, v in paths.items()}})
    log_stage_timing('evaluate', start_time)
    return EXIT_OK


def cli_predict(args) -> int:
    network = load_checkpoint(args.checkpoint)
    clip = ingest(args.wav)
    record = predict_track(network, clip)
    payload = PredictionOutputSchema().dump(record.to_dict())
    payload['architecture'] = network.spec.name
    if args.output:
        write_text_atomic(args.output, json.dumps(payload, indent=2, sort_keys=True))
    _emit(payload)
    return EXIT_OK


def cli_arch_info(args) -> int:
    names = ARCHITECTURE_NAMES if args.arch == 'all' else [args.arch]
    reports = []
    for name in names:
        spec = build_architecture(name)
        checks = {c.index: c for c in compare_with_published(spec)}
        layers = []
        for trace in propagate(spec):
            check = checks.get(trace.index)
            layers.append({
                'index': trace.index,
                'kind': trace.layer.kind,
                'shape': list(trace.shape),
                'parameters': trace.parameters,
                'published': list(check.published) if check and check.published else None,
                'status': check.status if check else None,
                'note': check.note if check else '',
            })
        reports.append(dict(parameter_report(spec), layers=layers))

    if args.as_json:
        _emit(reports)
        return EXIT_OK
    for report in reports:
        print(f"{report['architecture']}: {report['trainable_parameters']:,} trainable parameters "
              f"(published {report['published_parameters']:,}, "
              f"difference {report['relative_difference'] * 100:+.3f}%)")
        if 'frozen_front_end_parameters' in report:
            print(f"  frozen gammatone front end: {report['frozen_front_end_parameters']:,} "
                  f"({report['frozen_relative_difference'] * 100:+.3f}%)")
        for layer in report['layers']:
            shape = 'x'.join(str(d) for d in layer['shape'])
            status = f" [{layer['status']}]" if layer['status'] else ''
            note = f" {layer['note']}" if layer['note'] else ''
            print(f"  {layer['index']:>3} {layer['kind']:<15} {shape:<14} {layer['parameters']:>10,}{status}{note}")
    return EXIT_OK


COMMANDS = {
    'prepare': cli_prepare,
    'augment': cli_augment,
    'train': cli_train,
    'evaluate': cli_evaluate,
    'predict': cli_predict,
    'arch-info': cli_arch_info,
}


# ---------------------------------------------------------------------------
# Exit-code mapping
# ---------------------------------------------------------------------------

_DATA_ERRORS = (
    DataError, WavIngestionError, SegmentationError, ManifestError, FoldProtocolError,
    AugmentationError, CheckpointError, FileNotFoundError, IsADirectoryError,
)


def error_code_for(exc: Exception) -> str:
    if isinstance(exc, EvaluationError) and exc.cause is not None:
        return error_code_for(exc.cause)
    if isinstance(exc, (UsageError, ValidationError, UnknownArchitectureError, ArchitectureError)):
        return 'USAGE_ERROR'
    if isinstance(exc, NonFiniteLossError):
        return 'NUMERIC_FAILURE'
    if isinstance(exc, ProtocolViolationError):
        return 'PROTOCOL_VIOLATION'
    if isinstance(exc, TrackTooShortError):
        return 'TRACK_TOO_SHORT'
    if isinstance(exc, (WavIngestionError, SegmentationError)):
        return 'INGESTION_FAILED'
    if isinstance(exc, AugmentationError):
        return 'AUGMENTATION_FAILED'
    if isinstance(exc, CheckpointError):
        return 'CHECKPOINT_INVALID'
    if isinstance(exc, _DATA_ERRORS):
        return 'DATA_ERROR'
    if isinstance(exc, TrainingError):
        return 'USAGE_ERROR'
    return 'UNKNOWN_ERROR'


def main(argv=None) -> int:
    settings.load_environment()
    try:
        args = build_parser().parse_args(argv)
        settings.configure_logging(args.log_level)
        return COMMANDS[args.command](args)
    except Exception as e:
        code = error_code_for(e)
        record = get_error(code, str(e))
        if isinstance(e, DataError) and e.report:
            record['report'] = e.report
        logger.error(f"[ERROR] {record['code']}: {e}")
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        return ERRORS[code]['exit_code']
