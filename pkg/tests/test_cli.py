import json

import pytest
import torch

from singstylepy.checkpoint import save_checkpoint
from singstylepy.cli import build_parser, main
from singstylepy.corpus import compute_norm_stats, write_sample, write_score
from singstylepy.files import read_array, read_json, write_json
from singstylepy.model import AcousticModel


@pytest.fixture
def checkpoint_path(tmp_path, tiny_config, small_samples):
    torch.manual_seed(0)
    model = AcousticModel(tiny_config, compute_norm_stats(small_samples))
    return save_checkpoint(tmp_path / 'model.ssck', model, step=3)


def error_line(capsys) -> dict:
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])




def test_usage_errors_exit_2():
    with pytest.raises(SystemExit) as info:
        main([])
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        main(['train', '--config', 'x.json', '--ablation', 'no-everything'])
    assert info.value.code == 2


def test_parser_defaults():
    args = build_parser().parse_args(['gen-corpus', '--out', 'c'])
    assert args.samples_per_class == 200 and args.seed == 0 and args.device == 'cpu'
    args = build_parser().parse_args(['synthesize', '--ckpt', 'a', '--score', 'b', '--ref', 'c', '--out', 'd'])
    assert args.mode == 'nonparallel' and not args.wav


def test_missing_checkpoint_reports_json(tmp_path, capsys):
    code = main([
        '--quiet', 'synthesize', '--ckpt', str(tmp_path / 'none.ssck'),
        '--score', 'score.json', '--ref', 'ref.json', '--out', str(tmp_path / 'out')
    ])
    assert code == 1
    error = error_line(capsys)
    assert error['error'] == 'invalid_checkpoint'
    assert 'none.ssck' in error['message']


def test_unknown_phoneme_reports_json(tmp_path, capsys, checkpoint_path, small_samples):
    scoreData = small_samples[0].score.to_dict()
    scoreData['phonemes'][0] = 'zz'
    write_json(tmp_path / 'bad.json', scoreData)
    refPath = write_sample(tmp_path / 'refs', small_samples[0])
    code = main([
        '--quiet', 'synthesize', '--ckpt', str(checkpoint_path),
        '--score', str(tmp_path / 'bad.json'), '--ref', str(refPath), '--out', str(tmp_path / 'out')
    ])
    assert code == 1
    assert error_line(capsys)['error'] == 'unknown_phoneme'


def test_synthesize_writes_outputs(tmp_path, checkpoint_path, small_samples):
    write_score(tmp_path / 'score.json', small_samples[1].score)
    refPath = write_sample(tmp_path / 'refs', small_samples[0])
    out = tmp_path / 'out'
    code = main([
        '--quiet', '--log-dir', str(tmp_path / 'logs'), 'synthesize', '--ckpt', str(checkpoint_path),
        '--score', str(tmp_path / 'score.json'), '--ref', str(refPath), '--seed', '2', '--out', str(out)
    ])
    assert code == 0
    result = read_json(out / 'result.json')
    mel, pitch = read_array(out / 'mel.bin'), read_array(out / 'f0.bin')
    assert mel.shape == (result['frames'], 80)
    assert pitch.shape == (result['frames'], 2)
    assert sum(result['durations']) == result['frames']
    assert result['reference'] == small_samples[0].sampleId
    assert result['mode'] == 'nonparallel' and result['seed'] == 2


def test_corpus_evaluate_and_plot(tmp_path, checkpoint_path):
    corpus = tmp_path / 'corpus'
    assert main(['--quiet', 'gen-corpus', '--out', str(corpus), '--samples-per-class', '1', '--seed', '3']) == 0
    manifest = read_json(corpus / 'manifest.json')
    assert len(manifest['samples']) == 8

    report = tmp_path / 'eval' / 'report.json'
    assert main([
        '--quiet', 'evaluate', '--ckpt', str(checkpoint_path), '--split', 'ood',
        '--corpus', str(corpus), '--out', str(report), '--limit', '1'
    ]) == 0
    data = read_json(report)
    assert len(data['per_sample']) == 1
    assert data['metadata']['step'] == 3 and data['metadata']['split'] == 'ood'
    assert (tmp_path / 'eval' / 'report').is_dir()

    figure = tmp_path / 'fig.png'
    samplePath = corpus / manifest['samples'][0]['path']
    assert main(['--quiet', 'plot', '--inputs', str(samplePath), '--out', str(figure)]) == 0
    assert figure.read_bytes()[:4] == b'\x89PNG'
