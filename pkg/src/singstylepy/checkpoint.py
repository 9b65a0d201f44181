"""
This module contains the checkpoint format

Layout (little-endian):
- Header: magic `SSCK`, `u16` version, `u32` number of blocks
- Each block: `u16` name length, UTF-8 name, `u8` dtype code, `u8` ndim, `u64` per dim,
  `u64` payload length, payload, `u32` CRC-32 of the payload
- JSON blocks (dtype code 0) hold the config, normalisation statistics and metadata

Blocks are written in a fixed order, so saving the same state twice gives identical bytes.
"""
import json
import logging
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, BinaryIO

import numpy as np
import torch
from torch import nn

from .config import TrainConfig
from .corpus import NormStats
from .exceptions import CheckpointError

"""
Items imported inside functions/classes
- from ._utils import _get_basic_logger
- from .model import AcousticModel
- from .style_encoder import StyleClassifier
"""


MAGIC = b'SSCK'
CHECKPOINT_VERSION = 1
JSON_CODE = 0
DTYPE_CODES = {
    torch.float32: 1,
    torch.float64: 2,
    torch.float16: 3,
    torch.int64: 4,
    torch.int32: 5,
    torch.uint8: 6,
    torch.bool: 7,
}
CODE_DTYPES = {code: dtype for dtype, code in DTYPE_CODES.items()}
NUMPY_DTYPES = {1: '<f4', 2: '<f8', 3: '<f2', 4: '<i8', 5: '<i4', 6: 'u1', 7: '?'}
PARAM_PREFIX = 'param.'




@dataclass
class Checkpoint:
    """ Decoded checkpoint: tensors by block name, JSON documents by block name """

    version: int
    tensors: dict[str, torch.Tensor] = field(default_factory=dict)
    documents: dict[str, Any] = field(default_factory=dict)

    @property
    def kind(self) -> str:
        return self.documents.get('meta', {}).get('kind', '')

    @property
    def step(self) -> int:
        return int(self.documents.get('meta', {}).get('step', 0))

    def state_dict(self) -> dict[str, torch.Tensor]:
        return {k[len(PARAM_PREFIX):]: v for k, v in self.tensors.items() if k.startswith(PARAM_PREFIX)}

    def document(self, name: str) -> Any:
        if name not in self.documents:
            raise CheckpointError('Missing block', blockName=name)
        return self.documents[name]




## ----------------------- Writing ----------------------- ##
def _write_block(f: BinaryIO, name: str, code: int, shape: tuple[int, ...], payload: bytes):
    encodedName = name.encode('utf-8')
    f.write(struct.pack('<H', len(encodedName)))
    f.write(encodedName)
    f.write(struct.pack('<BB', code, len(shape)))
    f.write(struct.pack(f'<{len(shape)}Q', *shape))
    f.write(struct.pack('<Q', len(payload)))
    f.write(payload)
    f.write(struct.pack('<I', zlib.crc32(payload)))


def _tensor_payload(tensor: torch.Tensor) -> tuple[int, bytes]:
    tensor = tensor.detach().cpu().contiguous()
    if tensor.dtype not in DTYPE_CODES:
        raise CheckpointError(f'Unsupported dtype {tensor.dtype}')
    code = DTYPE_CODES[tensor.dtype]
    return code, np.ascontiguousarray(tensor.numpy(), dtype=NUMPY_DTYPES[code]).tobytes()


def write_checkpoint(
    filePath: str | Path,
    tensors: dict[str, torch.Tensor],
    documents: dict[str, Any]
) -> Path:
    """ Writes JSON `documents` first (sorted by name), then `tensors` in their given order """
    path = Path(filePath)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmpPath = path.with_name(path.name + '.tmp')
    with open(tmpPath, 'wb') as f:
        f.write(MAGIC)
        f.write(struct.pack('<HI', CHECKPOINT_VERSION, len(documents) + len(tensors)))
        for name in sorted(documents):
            payload = json.dumps(documents[name], sort_keys=True).encode('utf-8')
            _write_block(f, name, JSON_CODE, (), payload)
        for name, tensor in tensors.items():
            code, payload = _tensor_payload(tensor)
            _write_block(f, name, code, tuple(tensor.shape), payload)
    tmpPath.replace(path)
    return path




## ----------------------- Reading ----------------------- ##
def _read_exact(f: BinaryIO, size: int, blockName: str) -> bytes:
    data = f.read(size)
    if len(data) != size:
        raise CheckpointError('Truncated checkpoint', blockName=blockName)
    return data


def read_checkpoint(filePath: str | Path) -> Checkpoint:
    """
    Decodes a checkpoint written by `write_checkpoint`
    - Raises `CheckpointError` (naming the block) for a wrong magic/version, truncated
      data, CRC mismatches or unknown dtypes
    """
    path = Path(filePath)
    if not path.is_file():
        raise CheckpointError(f'Checkpoint not found: {path}')
    with open(path, 'rb') as f:
        if _read_exact(f, 4, '<header>') != MAGIC:
            raise CheckpointError(f'{path} is not a checkpoint', blockName='<header>')
        version, numBlocks = struct.unpack('<HI', _read_exact(f, 6, '<header>'))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(
                f'Checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})',
                blockName='<header>'
            )
        checkpoint = Checkpoint(version=version)
        name = '<header>'
        for _ in range(numBlocks):
            (nameLength,) = struct.unpack('<H', _read_exact(f, 2, f'after {name}'))
            name = _read_exact(f, nameLength, f'after {name}').decode('utf-8', errors='replace')
            code, ndim = struct.unpack('<BB', _read_exact(f, 2, name))
            shape = struct.unpack(f'<{ndim}Q', _read_exact(f, 8 * ndim, name))
            (length,) = struct.unpack('<Q', _read_exact(f, 8, name))
            payload = _read_exact(f, length, name)
            (crc,) = struct.unpack('<I', _read_exact(f, 4, name))
            if zlib.crc32(payload) != crc:
                raise CheckpointError('Corrupt block (CRC mismatch)', blockName=name)

            if code == JSON_CODE:
                try:
                    checkpoint.documents[name] = json.loads(payload.decode('utf-8'))
                except (UnicodeDecodeError, json.JSONDecodeError):
                    raise CheckpointError('Corrupt JSON block', blockName=name) from None
                continue
            if code not in CODE_DTYPES:
                raise CheckpointError(f'Unknown dtype code {code}', blockName=name)
            array = np.frombuffer(payload, dtype=NUMPY_DTYPES[code])
            if array.size != int(np.prod(shape, dtype=np.int64)):
                raise CheckpointError(f'Payload doesn\'t match shape {tuple(shape)}', blockName=name)
            checkpoint.tensors[name] = torch.from_numpy(array.copy()).reshape(shape)
        if f.read(1):
            raise CheckpointError('Trailing bytes after the last block', blockName=name)
    return checkpoint


def load_state(module: nn.Module, checkpoint: Checkpoint):
    """ Copies the parameter blocks into `module` (`CheckpointError` names missing/extra/misshaped blocks) """
    state = checkpoint.state_dict()
    expected = module.state_dict()
    for key in expected:
        if key not in state:
            raise CheckpointError('Missing parameter block', blockName=PARAM_PREFIX + key)
        if tuple(state[key].shape) != tuple(expected[key].shape):
            raise CheckpointError(
                f'Shape {tuple(state[key].shape)} != expected {tuple(expected[key].shape)}',
                blockName=PARAM_PREFIX + key
            )
    for key in state:
        if key not in expected:
            raise CheckpointError('Unexpected parameter block', blockName=PARAM_PREFIX + key)
    module.load_state_dict(state)


def state_checksum(module: nn.Module) -> int:
    """ CRC-32 over the names and bytes of `module`'s state """
    crc = 0
    for name, tensor in module.state_dict().items():
        crc = zlib.crc32(name.encode('utf-8'), crc)
        crc = zlib.crc32(_tensor_payload(tensor)[1], crc)
    return crc




## ----------------------- Models ----------------------- ##
def save_checkpoint(
    filePath: str | Path,
    model: nn.Module,
    step: int = 0,
    extra: dict[str, Any] | None = None,
    logger: logging.Logger | None = None
) -> Path:
    """
    Saves an `AcousticModel`: parameters and buffers, config, normalisation statistics,
    both diffusion schedules and `{'kind', 'step', **extra}` metadata
    """
    from ._utils import _get_basic_logger
    logger = logger or _get_basic_logger()

    if model.stats is None:
        raise CheckpointError('Model has no normalisation statistics', blockName='stats')
    tensors = {PARAM_PREFIX + k: v for k, v in model.state_dict().items()}
    tensors['schedule.decoder'] = model.melDecoder.schedule.betas if hasattr(model.melDecoder, 'schedule') \
        else torch.zeros(0, dtype=torch.float64)
    tensors['schedule.pitch'] = model.pitchPredictor.gaussianSchedule.betas if hasattr(model.pitchPredictor, 'gaussianSchedule') \
        else torch.zeros(0, dtype=torch.float64)
    path = write_checkpoint(filePath, tensors, {
        'config': model.config.to_dict(),
        'stats': model.stats.to_dict(),
        'meta': {'kind': 'acoustic', 'step': int(step), **(extra or {})},
    })
    logger.debug(f'Checkpoint of step {step} saved: {path}')
    return path


def load_checkpoint(filePath: str | Path, device: str | torch.device = 'cpu'):
    """ Returns `(AcousticModel, checkpoint)`; the model is in eval mode on `device` """
    from .model import AcousticModel

    checkpoint = read_checkpoint(filePath)
    if checkpoint.kind != 'acoustic':
        raise CheckpointError(f'Expected an acoustic model checkpoint, got "{checkpoint.kind}"', blockName='meta')
    config = TrainConfig.from_dict(checkpoint.document('config'))
    model = AcousticModel(config, NormStats.from_dict(checkpoint.document('stats')))
    load_state(model, checkpoint)
    for blockName, schedule in (
        ('schedule.decoder', getattr(model.melDecoder, 'schedule', None)),
        ('schedule.pitch', getattr(model.pitchPredictor, 'gaussianSchedule', None)),
    ):
        if schedule is not None and not torch.equal(checkpoint.tensors.get(blockName, torch.zeros(0)), schedule.betas):
            raise CheckpointError('Schedule doesn\'t match the config', blockName=blockName)
    return model.to(device).eval(), checkpoint


def save_classifier(filePath: str | Path, classifier: nn.Module, config: TrainConfig, report: dict[str, float]) -> Path:
    """ Saves a pre-trained `StyleClassifier` with its held-out report """
    tensors = {PARAM_PREFIX + k: v for k, v in classifier.state_dict().items()}
    return write_checkpoint(filePath, tensors, {
        'config': config.to_dict(),
        'meta': {'kind': 'classifier', 'step': int(config.classifier_steps), 'report': report},
    })


def load_classifier(filePath: str | Path, device: str | torch.device = 'cpu'):
    """ Returns the `StyleClassifier` saved by `save_classifier` (eval mode) """
    from .style_encoder import StyleClassifier

    checkpoint = read_checkpoint(filePath)
    if checkpoint.kind != 'classifier':
        raise CheckpointError(f'Expected a classifier checkpoint, got "{checkpoint.kind}"', blockName='meta')
    classifier = StyleClassifier(TrainConfig.from_dict(checkpoint.document('config')))
    load_state(classifier, checkpoint)
    return classifier.to(device).eval()
