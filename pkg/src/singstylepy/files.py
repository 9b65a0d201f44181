"""
This module contains methods to work with files

- Flat binary arrays: one ASCII header row `f32le <d0> <d1> ...\\n`, followed by the
  little-endian 32-bit float data in C order
- JSON documents
- Mono WAV files
"""
import json
from pathlib import Path
from typing import Any

import numpy as np
import soundfile

from .exceptions import AudioError, CorpusError


ARRAY_MAGIC = 'f32le'



def get_new_path(filePath: str | Path) -> Path:
    """
    Returns new `filePath` for files, which do not exist by appending (1/2/3/..).
    - Ex: `dump.json` -> `dump(1).json` -> `dump(2).json`
    """
    path = Path(filePath)
    i = 1
    stem = path.stem
    while path.exists():
        path = path.with_name(f'{stem}({i}){path.suffix}')
        i += 1
    return path



def write_array(filePath: str | Path, array: np.ndarray):
    """
    Write `array` as little-endian float32 with a header row holding its shape
    """
    data = np.ascontiguousarray(array, dtype='<f4')
    header = ' '.join([ARRAY_MAGIC, *(str(i) for i in data.shape)]) + '\n'
    path = Path(filePath)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'wb') as f:
        f.write(header.encode('ascii'))
        f.write(data.tobytes())



def read_array(filePath: str | Path) -> np.ndarray:
    """
    Read an array written by `write_array`
    - Raises `CorpusError` if the header is malformed or the data is truncated
    """
    path = Path(filePath)
    if not path.is_file():
        raise CorpusError(f'Array file not found: {path}')
    with open(path, 'rb') as f:
        header = f.readline().decode('ascii', errors='replace').split()
        raw = f.read()

    # Header
    if not header or header[0] != ARRAY_MAGIC:
        raise CorpusError(f'Bad array header in {path}')
    try:
        shape = tuple(int(i) for i in header[1:])
    except ValueError:
        raise CorpusError(f'Bad array shape in {path}') from None

    # Data
    expected = int(np.prod(shape)) * 4
    if len(raw) != expected:
        raise CorpusError(f'Array file {path} holds {len(raw)} bytes, expected {expected}')
    return np.frombuffer(raw, dtype='<f4').reshape(shape).astype(np.float32)



def write_json(filePath: str | Path, data: Any):
    """ Write `data` as indented JSON (keys sorted) """
    path = Path(filePath)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as f:
        json.dump(data, f, indent=4, sort_keys=True)



def read_json(filePath: str | Path) -> Any:
    """ Read JSON from `filePath`, raising `CorpusError` for missing/corrupt files """
    path = Path(filePath)
    if not path.is_file():
        raise CorpusError(f'JSON file not found: {path}')
    with open(path, 'r') as f:
        try:
            return json.load(f)
        except json.decoder.JSONDecodeError as e:
            raise CorpusError(f'Corrupt JSON in {path}: {e}') from None



def read_wav(filePath: str | Path, sampleRate: int) -> np.ndarray:
    """
    Read a mono WAV file recorded at `sampleRate`
    - Raises `AudioError` for other sample rates or channel counts
    """
    path = Path(filePath)
    if not path.is_file():
        raise AudioError(f'WAV file not found: {path}')
    data, fileRate = soundfile.read(str(path), dtype='float32', always_2d=True)
    if fileRate != sampleRate:
        raise AudioError(f'{path} is sampled at {fileRate} Hz, expected {sampleRate} Hz')
    if data.shape[1] != 1:
        raise AudioError(f'{path} has {data.shape[1]} channels, expected mono')
    return data[:, 0]



def write_wav(filePath: str | Path, waveform: np.ndarray, sampleRate: int):
    """ Write mono float `waveform` as 16-bit PCM WAV """
    path = Path(filePath)
    path.parent.mkdir(parents=True, exist_ok=True)
    soundfile.write(str(path), np.clip(waveform, -1.0, 1.0), sampleRate, subtype='PCM_16')
