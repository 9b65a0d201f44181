"""
This module contains the command line interface

    singstylepy [--log-dir DIR] [--quiet] <command> ...

- `gen-corpus`, `train-classifier`, `train`, `synthesize`, `evaluate`, `plot`
- Exit code 0 on success, 1 with one JSON line `{"error": <category>, "message": ...}`
  on stderr for package errors, 2 for usage errors
"""
import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
from tqdm import tqdm

from .exceptions import SingStyleError

"""
Items imported inside functions/classes
- from .audio import SAMPLE_RATE, mel_to_audio
- from .checkpoint import load_checkpoint, save_classifier
- from .config import ConfigFile, TrainConfig
- from .corpus import build_corpus, get_split, load_corpus, read_sample, read_score, split_corpus
- from .custom_logging import RunLogging
- from .files import read_array, read_json, write_array, write_json, write_wav
- from .metrics import plot_comparison
- from .style_encoder import pretrain_classifier
- from .training import ABLATIONS, apply_ablation, evaluate, reference_from_wav, synthesize, train
"""




## ----------------------- Commands ----------------------- ##
def _gen_corpus(args: argparse.Namespace, logger: logging.Logger):
    from .corpus import build_corpus
    build_corpus(
        args.out, seed=args.seed,
        samplesPerClass=args.samples_per_class,
        maxWorkers=args.workers,
        progress=not args.quiet,
        logger=logger
    )


def _train_classifier(args: argparse.Namespace, logger: logging.Logger):
    from .checkpoint import save_classifier
    from .config import ConfigFile, TrainConfig
    from .corpus import load_corpus, split_corpus
    from .style_encoder import pretrain_classifier

    config = ConfigFile(args.config, logger).load() if args.config else TrainConfig()
    splits = split_corpus(load_corpus(args.corpus))
    classifier, report = pretrain_classifier(
        splits['classifier_train'], splits['classifier_test'], config,
        device=args.device, logger=logger
    )
    path = save_classifier(args.out, classifier, config, report.to_dict())
    logger.info(f'Classifier saved: {path}')


def _train(args: argparse.Namespace, logger: logging.Logger, runLogging):
    from .config import ConfigFile
    from .training import apply_ablation, train

    config = ConfigFile(args.config, logger).load()
    if args.ablation:
        config = apply_ablation(config, args.ablation)
    if args.max_steps is not None:
        config = config.replace(max_steps=args.max_steps)

    progress = tqdm(total=config.max_steps, desc='train', disable=args.quiet)
    try:
        _, checkpoints = train(
            config, device=args.device, logger=logger, runLogging=runLogging,
            onStep=lambda step, losses: progress.update(1)
        )
    finally:
        progress.close()
    logger.info(f'{len(checkpoints)} checkpoints written to: {config.checkpoint_dir}')


def _read_reference(path: Path):
    from .corpus import read_sample
    from .training import reference_from_wav
    return reference_from_wav(path) if path.suffix.lower() == '.wav' else read_sample(path)


def _synthesize(args: argparse.Namespace, logger: logging.Logger):
    from .audio import SAMPLE_RATE, mel_to_audio
    from .checkpoint import load_checkpoint
    from .corpus import read_score
    from .files import write_array, write_json, write_wav
    from .training import synthesize

    model, _ = load_checkpoint(args.ckpt, args.device)
    score = read_score(args.score)
    reference = _read_reference(Path(args.ref))
    result = synthesize(model, score, reference, mode=args.mode, seed=args.seed)

    out = Path(args.out)
    write_array(out / 'mel.bin', result.mel)
    write_array(out / 'f0.bin', np.stack([result.f0, result.uv], axis=1))
    write_json(out / 'result.json', {
        'checkpoint': str(args.ckpt),
        'reference': reference.sampleId,
        'mode': args.mode,
        'seed': args.seed,
        'frames': result.numFrames,
        'durations': [int(d) for d in result.durations],
    })
    if args.wav:
        write_wav(out / 'audio.wav', mel_to_audio(result.mel), SAMPLE_RATE)
    logger.info(f'Synthesized {result.numFrames} frames to: {out}')


def _evaluate(args: argparse.Namespace, logger: logging.Logger):
    from .checkpoint import load_checkpoint
    from .corpus import get_split, load_corpus
    from .training import evaluate

    model, checkpoint = load_checkpoint(args.ckpt, args.device)
    corpusDir = args.corpus or model.config.corpus_dir
    samples = get_split(load_corpus(corpusDir), args.split)
    if args.limit:
        samples = samples[:args.limit]
    figureDir = args.figures or Path(args.out).with_suffix('')
    evaluate(
        model, samples, outPath=args.out, figureDir=figureDir, seed=args.seed,
        metadata={'checkpoint': str(args.ckpt), 'step': checkpoint.step, 'split': args.split},
        logger=logger
    )


def _read_panel(path: Path) -> tuple[str, np.ndarray, np.ndarray]:
    """ `(label, mel, f0)` of a corpus sample JSON or a `synthesize` output directory """
    from .corpus import read_sample
    from .files import read_array, read_json

    if path.is_dir():
        meta = read_json(path / 'result.json')
        pitch = read_array(path / 'f0.bin')
        return f'{path.name} ({meta["mode"]}, ref {meta["reference"]})', read_array(path / 'mel.bin'), pitch[:, 0]
    sample = read_sample(path)
    return sample.sampleId, sample.mel, sample.f0


def _plot(args: argparse.Namespace, logger: logging.Logger):
    from .metrics import plot_comparison
    path = plot_comparison([_read_panel(Path(p)) for p in args.inputs], args.out)
    logger.info(f'Figure saved: {path}')




## ----------------------- Parser ----------------------- ##
def build_parser() -> argparse.ArgumentParser:
    from .training import ABLATIONS

    parser = argparse.ArgumentParser(prog='singstylepy', description='Zero-shot style transfer singing voice synthesis')
    parser.add_argument('--log-dir', default=None, help='write run.log / error.log here')
    parser.add_argument('--quiet', action='store_true', help='no progress bars, warnings only')
    parser.add_argument('--device', default='cpu')
    commands = parser.add_subparsers(dest='command', required=True)

    p = commands.add_parser('gen-corpus', help='generate the synthetic corpus')
    p.add_argument('--out', required=True)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--samples-per-class', type=int, default=200)
    p.add_argument('--workers', type=int, default=None)

    p = commands.add_parser('train-classifier', help='pre-train the style encoder')
    p.add_argument('--corpus', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--config', default=None)

    p = commands.add_parser('train', help='train the acoustic model')
    p.add_argument('--config', required=True)
    p.add_argument('--ablation', choices=sorted(ABLATIONS), default=None)
    p.add_argument('--max-steps', type=int, default=None)

    p = commands.add_parser('synthesize', help='synthesize a score in the style of a reference')
    p.add_argument('--ckpt', required=True)
    p.add_argument('--score', required=True)
    p.add_argument('--ref', required=True, help='corpus sample JSON or mono 48 kHz WAV')
    p.add_argument('--mode', choices=('parallel', 'nonparallel'), default='nonparallel')
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--out', required=True)
    p.add_argument('--wav', action='store_true', help='also render audio.wav (Griffin-Lim)')

    p = commands.add_parser('evaluate', help='Cos / FFE of parallel transfers over a split')
    p.add_argument('--ckpt', required=True)
    p.add_argument('--split', choices=('ood', 'seen'), required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--corpus', default=None)
    p.add_argument('--figures', default=None)
    p.add_argument('--limit', type=int, default=None)
    p.add_argument('--seed', type=int, default=0)

    p = commands.add_parser('plot', help='mel + F0 comparison figure')
    p.add_argument('--inputs', nargs='+', required=True)
    p.add_argument('--out', required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    from .custom_logging import RunLogging

    args = build_parser().parse_args(argv)
    logDir = Path(args.log_dir) if args.log_dir else None
    runLogging = RunLogging(
        loggerName='singstylepy.cli',
        loggingLevel=logging.WARNING if args.quiet else logging.INFO,
        runLogFilePath=logDir / 'run.log' if logDir else None,
        errorLogFilePath=logDir / 'error.log' if logDir else None,
    )
    logger = runLogging.logger
    try:
        if args.command == 'gen-corpus':
            _gen_corpus(args, logger)
        elif args.command == 'train-classifier':
            _train_classifier(args, logger)
        elif args.command == 'train':
            _train(args, logger, runLogging)
        elif args.command == 'synthesize':
            _synthesize(args, logger)
        elif args.command == 'evaluate':
            _evaluate(args, logger)
        elif args.command == 'plot':
            _plot(args, logger)
    except SingStyleError as e:
        logger.error(f'{args.command} failed: {e}')
        sys.stderr.write(json.dumps({'error': e.category, 'message': str(e)}) + '\n')
        return 1
    finally:
        runLogging.close_logging_handlers()
    return 0
