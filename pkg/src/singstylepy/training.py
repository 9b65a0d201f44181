"""
This module contains the training, synthesis and evaluation pipeline

- `BatchPrefetcher`: batches built on a background thread, in a fixed seeded order
- `Trainer`/`train`: main training with periodic checkpoints and metric logs
- `synthesize`, `evaluate`, `reference_from_wav`, `ablation_configs`
"""
import logging
import math
import queue
import threading
from pathlib import Path
from typing import Iterator

import numpy as np
import torch

from .audio import HOP_LENGTH, SAMPLE_RATE, extract_f0, extract_mel, load_wav
from .checkpoint import load_classifier, save_checkpoint
from .config import TrainConfig
from .corpus import (
    MusicalScore, Note, NormStats, NoteType, SingingSample,
    compute_norm_stats, load_corpus, split_corpus
)
from .decorator import log_it, run_threaded
from .events import Signal
from .exceptions import ConfigError, CorpusError, NumericalError, ScoreError
from .files import write_json
from .metrics import MetricReport, cosine_similarity, ffe, plot_comparison
from .model import LOSS_NAMES, AcousticModel, Batch, SynthesisResult, collate

"""
Items imported inside functions/classes
- from ._utils import _get_basic_logger, make_generator
- from .custom_logging import format_metrics
"""


SYNTHESIS_MODES = ('parallel', 'nonparallel')
ABLATIONS = {
    'no-umln': ('w/o UMLN', {'use_umln': False}),
    'no-rsa': ('w/o RSA', {'use_rsa': False}),
    'no-pitch': ('w/o Pitch', {'pitch_mode': 'simple'}),
    'no-decoder': ('w/o Decoder', {'decoder_mode': 'conv'}),
}




## ----------------------- Batches ----------------------- ##
class BatchPrefetcher:
    """
    Iterator over `numBatches` collated batches, produced on a background thread

    - Samples are drawn epoch by epoch from permutations of a `seed`-ed generator, so the
      batch sequence only depends on `seed`
    - At most `queueSize` batches wait in the FIFO queue
    - Errors of the producer are raised on the consuming side
    """

    _END = object()

    def __init__(
        self,
        samples: list[SingingSample],
        batchSize: int,
        stats: NormStats,
        seed: int,
        numBatches: int,
        queueSize: int = 4,
        logger: logging.Logger | None = None
    ):
        from ._utils import _get_basic_logger
        if not samples:
            raise CorpusError('No samples to batch')

        # Args
        self.__samples = samples
        self.__batchSize = batchSize
        self.__stats = stats
        self.__seed = seed
        self.__numBatches = numBatches
        self.__logger = logger or _get_basic_logger()

        # Data
        self.__queue: queue.Queue = queue.Queue(maxsize=max(1, queueSize))
        self.__stopped = threading.Event()
        self.__thread = self._produce()

    def __repr__(self) -> str:
        from ._utils import generate_repr_str
        return generate_repr_str(self, 'numBatches', 'batchSize')

    @property
    def numBatches(self) -> int:
        return self.__numBatches

    @property
    def batchSize(self) -> int:
        return self.__batchSize

    def batch_order(self) -> Iterator[list[int]]:
        """ Sample indices of every batch, in production order """
        rng = np.random.default_rng(self.__seed)
        pool: list[int] = []
        for _ in range(self.__numBatches):
            indices = []
            while len(indices) < self.__batchSize:
                if not pool:
                    pool = rng.permutation(len(self.__samples)).tolist()
                indices.append(pool.pop())
            yield indices

    def _put(self, item) -> bool:
        while not self.__stopped.is_set():
            try:
                self.__queue.put(item, timeout=0.1)
                return True
            except queue.Full:
                continue
        return False

    @run_threaded(daemon=True, name='batch-prefetch')
    def _produce(self):
        try:
            for indices in self.batch_order():
                if not self._put(collate([self.__samples[i] for i in indices], self.__stats)):
                    return
        except Exception as e:
            self.__logger.debug(f'Batch prefetching failed: {e}')
            self._put(e)
            return
        self._put(self._END)

    def __iter__(self) -> 'BatchPrefetcher':
        return self

    def __next__(self) -> Batch:
        item = self.__queue.get()
        if item is self._END:
            raise StopIteration
        if isinstance(item, BaseException):
            raise item
        return item

    def close(self):
        """ Stops the producer thread """
        self.__stopped.set()
        self.__thread.join(timeout=5.0)




## ----------------------- Training ----------------------- ##
def ablation_configs(base: TrainConfig) -> dict[str, TrainConfig]:
    """ The four single-component ablations of `base`, by label (`w/o UMLN`, ...) """
    return {label: base.replace(**overrides) for label, overrides in ABLATIONS.values()}


def apply_ablation(base: TrainConfig, name: str) -> TrainConfig:
    if name not in ABLATIONS:
        raise ConfigError(f'Unknown ablation "{name}", expected one of: {", ".join(ABLATIONS)}')
    return base.replace(**ABLATIONS[name][1])


def _warmup(warmupSteps: int):
    return lambda step: min(1.0, (step + 1) / max(1, warmupSteps))


class Trainer:
    """
    Main training loop

    Args:
        - `config`: training configuration
        - `samples`: corpus samples (default: loaded from `config.corpus_dir`)
        - `classifier`: pre-trained `StyleClassifier` (default: loaded from `config.classifier_checkpoint`)
        - `runLogging`: `RunLogging` used for metric lines (default: plain logger lines)

    Signals:
        - `stepCompleted(step=, losses=)` after every optimiser step
        - `checkpointSaved(step=, path=)` after every checkpoint
    """

    def __init__(
        self,
        config: TrainConfig,
        samples: list[SingingSample] | None = None,
        classifier=None,
        device: str | torch.device = 'cpu',
        logger: logging.Logger | None = None,
        runLogging=None
    ):
        from ._utils import _get_basic_logger, make_generator

        self.__config = config
        self.__logger = logger or (runLogging.logger if runLogging else _get_basic_logger())
        self.__runLogging = runLogging
        self.__device = torch.device(device)
        self.__step = 0
        self.__history: list[dict[str, float]] = []
        self.stepCompleted = Signal('stepCompleted', self.__logger)
        self.checkpointSaved = Signal('checkpointSaved', self.__logger)

        if classifier is None:
            classifierPath = Path(config.classifier_checkpoint)
            if not classifierPath.is_file():
                raise ConfigError(f'Pre-trained style classifier not found: {classifierPath}')
            classifier = load_classifier(classifierPath)
        if classifier.encoder.hidden != config.hidden_size:
            raise ConfigError(
                f'Classifier hidden size {classifier.encoder.hidden} != hidden_size {config.hidden_size}'
            )
        samples = load_corpus(config.corpus_dir) if samples is None else samples
        self.__trainSamples = split_corpus(samples)['train']
        if not self.__trainSamples:
            raise CorpusError('Training split is empty')

        torch.manual_seed(config.seed)
        self.__model = AcousticModel(config, compute_norm_stats(self.__trainSamples))
        self.__model.load_style_encoder(classifier.encoder)
        self.__model.to(self.__device)
        self.__generator = make_generator(config.seed)
        self.__optimizer = torch.optim.Adam(
            self.__model.trainable_parameters(),
            lr=config.learning_rate,
            betas=(config.adam_beta1, config.adam_beta2)
        )
        self.__scheduler = torch.optim.lr_scheduler.LambdaLR(self.__optimizer, _warmup(config.warmup_steps))

    def __repr__(self) -> str:
        from ._utils import generate_repr_str
        return generate_repr_str(self, 'step')

    @property
    def model(self) -> AcousticModel:
        return self.__model

    @property
    def step(self) -> int:
        return self.__step

    @property
    def history(self) -> list[dict[str, float]]:
        """ Loss values of every step so far (`total` and one key per loss) """
        return self.__history

    def train_step(self, batch: Batch) -> dict[str, float]:
        """
        One optimiser step
        - Raises `NumericalError` after dumping `nan_step_<step>.json` if a loss is not finite
        """
        config = self.__config
        step = self.__step + 1
        self.__model.train()
        losses = self.__model.forward_train(batch.to(self.__device), self.__generator)
        total = self.__model.total_loss(losses)
        values = {name: float(losses[name]) for name in LOSS_NAMES}
        values['total'] = float(total)
        if not all(math.isfinite(v) for v in values.values()):
            dumpPath = Path(config.checkpoint_dir) / f'nan_step_{step}.json'
            write_json(dumpPath, {'step': step, 'losses': values, 'sample_ids': batch.sampleIds})
            raise NumericalError(f'Non-finite loss, state dumped to {dumpPath}', step=step)

        self.__optimizer.zero_grad()
        total.backward()
        torch.nn.utils.clip_grad_norm_(self.__model.trainable_parameters(), config.grad_clip)
        self.__optimizer.step()
        self.__scheduler.step()

        self.__step = step
        self.__history.append(values)
        self.stepCompleted.emit(step=step, losses=values)
        return values

    def save(self) -> Path:
        path = Path(self.__config.checkpoint_dir) / f'step_{self.__step:06d}.ssck'
        save_checkpoint(path, self.__model, self.__step, logger=self.__logger)
        self.checkpointSaved.emit(step=self.__step, path=path)
        return path

    def _log(self, values: dict[str, float]):
        if self.__runLogging is not None:
            self.__runLogging.log_metrics(self.__step, values)
        else:
            from .custom_logging import format_metrics
            self.__logger.info(f'[step {self.__step:>6}] {format_metrics(values)}')

    def run(self, maxSteps: int | None = None) -> list[Path]:
        """ Trains for `maxSteps` (default `config.max_steps`), returns the checkpoint paths """
        config = self.__config
        maxSteps = config.max_steps if maxSteps is None else maxSteps
        prefetcher = BatchPrefetcher(
            self.__trainSamples, config.batch_size, self.__model.stats,
            seed=config.seed + self.__step,
            numBatches=maxSteps,
            queueSize=config.prefetch_batches,
            logger=self.__logger
        )
        checkpoints = []
        try:
            for i, batch in enumerate(prefetcher, start=1):
                values = self.train_step(batch)
                if self.__step % config.log_interval == 0 or i == maxSteps:
                    self._log(values)
                if self.__step % config.checkpoint_interval == 0 or i == maxSteps:
                    checkpoints.append(self.save())
        finally:
            prefetcher.close()
        return checkpoints


@log_it()
def train(
    config: TrainConfig,
    samples: list[SingingSample] | None = None,
    classifier=None,
    device: str | torch.device = 'cpu',
    logger: logging.Logger | None = None,
    runLogging=None,
    onStep=None
) -> tuple[AcousticModel, list[Path]]:
    """
    Trains an `AcousticModel` for `config.max_steps` steps

    - `onStep(step=, losses=)` is connected to the trainer's `stepCompleted` signal
    - Returns the model and its checkpoint series
    """
    trainer = Trainer(config, samples, classifier, device, logger, runLogging)
    if onStep is not None:
        trainer.stepCompleted.connect(onStep)
    return trainer.model, trainer.run()




## ----------------------- Inference ----------------------- ##
def synthesize(
    model: AcousticModel,
    score: MusicalScore,
    reference: SingingSample,
    mode: str = 'nonparallel',
    seed: int = 0
) -> SynthesisResult:
    """
    Synthesises `score` in the style of `reference`
    - `parallel` mode requires `score` to be the reference's own score
    """
    from ._utils import make_generator

    if mode not in SYNTHESIS_MODES:
        raise ConfigError(f'Unknown synthesis mode "{mode}", expected one of: {", ".join(SYNTHESIS_MODES)}')
    if mode == 'parallel' and score != reference.score:
        raise ScoreError('Parallel synthesis needs the reference\'s own score')
    model.eval()
    return model.infer(score, reference, make_generator(seed))


def reference_from_wav(filePath: str | Path) -> SingingSample:
    """ Reference sample (mel, F0/UV) of a mono 48 kHz WAV, with a one-note placeholder score """
    waveform = load_wav(filePath)
    mel = extract_mel(waveform)
    f0, uv = extract_f0(waveform)
    frames = mel.shape[0]
    score = MusicalScore(
        notes=(Note(60, NoteType.NORMAL, frames * HOP_LENGTH / SAMPLE_RATE),),
        phonemes=('a',),
        phonemeToNote=(0,)
    )
    return SingingSample(
        sampleId=Path(filePath).stem,
        score=score,
        mel=mel,
        f0=f0,
        uv=uv,
        phonemeDurations=np.array([frames], dtype=np.int64),
        singerId=-1,
        style=None
    )


def compare_to_reference(
    model: AcousticModel,
    mel: np.ndarray,
    f0: np.ndarray,
    uv: np.ndarray,
    reference: SingingSample
) -> dict[str, float]:
    """ `{'cos': timbre cosine similarity, 'ffe': F0 frame error}` of a synthesis against `reference` """
    device = next(model.styleEncoder.parameters()).device
    with torch.no_grad():
        timbre, _ = model.styleEncoder.encode_style(torch.as_tensor(mel, device=device))
        refTimbre, _ = model.styleEncoder.encode_style(torch.as_tensor(reference.mel, device=device))
    return {
        'cos': cosine_similarity(timbre.cpu().numpy(), refTimbre.cpu().numpy()),
        'ffe': ffe(f0, uv, reference.f0, reference.uv),
    }


@log_it()
def evaluate(
    model: AcousticModel,
    samples: list[SingingSample],
    outPath: str | Path | None = None,
    figureDir: str | Path | None = None,
    seed: int = 0,
    maxFigures: int = 4,
    metadata: dict | None = None,
    logger: logging.Logger | None = None
) -> MetricReport:
    """
    Parallel transfers of every sample (ground-truth durations, so frames line up),
    scored with `compare_to_reference`

    - Writes the report JSON to `outPath` and up to `maxFigures` comparison figures to `figureDir`
    - Raises `CorpusError` for an empty split
    """
    from ._utils import _get_basic_logger, make_generator
    logger = logger or _get_basic_logger()

    if not samples:
        raise CorpusError('Nothing to evaluate, the split is empty')
    model.eval()
    generator = make_generator(seed)
    perSample = []
    for i, sample in enumerate(samples):
        result = model.infer(sample.score, sample, generator, durations=sample.phonemeDurations)
        scores = compare_to_reference(model, result.mel, result.f0, result.uv, sample)
        perSample.append({'sample_id': sample.sampleId, **scores})
        if figureDir is not None and i < maxFigures:
            plot_comparison(
                [(f'reference {sample.sampleId}', sample.mel, sample.f0), ('synthesized', result.mel, result.f0)],
                Path(figureDir) / f'{sample.sampleId}.png'
            )

    report = MetricReport.from_samples(perSample, {'num_samples': len(samples), 'seed': seed, **(metadata or {})})
    if outPath is not None:
        report.write(outPath)
    logger.info(f'Evaluation of {len(samples)} samples: cos = {report.cos:.4f}, ffe = {report.ffe:.4f}')
    return report
