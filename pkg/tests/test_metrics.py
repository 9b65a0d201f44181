import numpy as np
import pytest

from singstylepy.audio import mel_center_frequencies
from singstylepy.exceptions import ShapeError
from singstylepy.files import read_json
from singstylepy.metrics import (
    REPORT_SCHEMA, MetricReport, build_comparison_figure, cosine_similarity, f0_to_mel_bin, ffe, plot_comparison
)




## ----------------------- Metrics ----------------------- ##
def test_cosine_similarity():
    assert cosine_similarity([1.0, 0.0], [0.8, 0.6]) == pytest.approx(0.8)
    assert cosine_similarity([[1.0, 0.0], [0.0, 2.0]], [[0.8, 0.6], [0.0, -1.0]]) == pytest.approx(-0.1)
    a, b = np.random.default_rng(0).normal(size=(2, 16))
    assert cosine_similarity(a, b) == pytest.approx(cosine_similarity(b, a))
    assert cosine_similarity(a, 3 * a) == pytest.approx(1.0)


def test_cosine_similarity_errors():
    with pytest.raises(ShapeError) as info:
        cosine_similarity([0.0, 0.0], [1.0, 0.0])
    assert isinstance(info.value, ValueError) and info.value.category == 'shape_mismatch'
    with pytest.raises(ShapeError):
        cosine_similarity([1.0, 0.0], [1.0, 0.0, 0.0])


def test_ffe_hand_cases():
    f0Gt, uvGt = [100.0, 100.0, 100.0, 0.0], [1, 1, 1, 0]
    assert ffe([100.0, 101.0, 0.0, 0.0], [1, 1, 0, 0], f0Gt, uvGt) == 0.25
    sharp = 100.0 * 2 ** (60 / 1200)
    assert ffe([100.0, sharp, 100.0, 0.0], [1, 1, 1, 0], f0Gt, uvGt) == 0.25
    assert ffe(f0Gt, uvGt, f0Gt, uvGt) == 0.0
    assert ffe([200.0, 200.0, 0.0, 300.0], [1, 1, 0, 1], f0Gt, uvGt) == 1.0


def test_ffe_symmetric():
    rng = np.random.default_rng(1)
    f0a, f0b = rng.uniform(100, 400, 50), rng.uniform(100, 400, 50)
    uva, uvb = rng.integers(0, 2, 50), rng.integers(0, 2, 50)
    assert ffe(f0a, uva, f0b, uvb) == ffe(f0b, uvb, f0a, uva)


def test_ffe_errors():
    with pytest.raises(ShapeError):
        ffe([100.0], [1], [100.0, 100.0], [1, 1])
    with pytest.raises(ShapeError):
        ffe([], [], [], [])




## ----------------------- Report ----------------------- ##
def test_report_schema(tmp_path):
    report = MetricReport.from_samples(
        [{'sample_id': 'a', 'cos': 0.8, 'ffe': 0.1}, {'sample_id': 'b', 'cos': 0.6, 'ffe': 0.3}],
        metadata={'split': 'ood'}
    )
    assert report.cos == pytest.approx(0.7) and report.ffe == pytest.approx(0.2)
    data = read_json(report.write(tmp_path / 'report.json'))
    assert data['schema'] == REPORT_SCHEMA
    assert set(data) == {'schema', 'cos', 'ffe', 'per_sample', 'metadata'}
    assert data['metadata'] == {'split': 'ood'}
    assert [s['sample_id'] for s in data['per_sample']] == ['a', 'b']


def test_report_checks_ranges():
    with pytest.raises(ShapeError):
        MetricReport(cos=1.5, ffe=0.0)
    with pytest.raises(ShapeError):
        MetricReport(cos=0.5, ffe=-0.1)
    with pytest.raises(ShapeError):
        MetricReport.from_samples([])




## ----------------------- Figures ----------------------- ##
def panel(label: str, frames: int = 40) -> tuple[str, np.ndarray, np.ndarray]:
    rng = np.random.default_rng(0)
    f0 = np.full(frames, 220.0)
    f0[:5] = 0.0
    return label, rng.normal(-2.0, 1.0, (frames, 80)), f0


def test_contour_in_mel_bin_coordinates():
    centers = mel_center_frequencies()
    bins = f0_to_mel_bin(np.array([centers[10], centers[40], 0.0]))
    assert bins[0] == pytest.approx(10.0, abs=1e-6)
    assert bins[1] == pytest.approx(40.0, abs=1e-6)
    assert np.isnan(bins[2])


def test_figure_panels():
    figure = build_comparison_figure([panel('ground truth'), panel('transfer')])
    axes = figure.get_axes()
    assert len(axes) == 2
    assert axes[0].get_title() == 'ground truth'
    assert axes[1].get_xlim() == (-0.5, 39.5)
    with pytest.raises(ShapeError):
        build_comparison_figure([])


def test_plot_is_reproducible(tmp_path):
    a = plot_comparison([panel('x')], tmp_path / 'a.png')
    b = plot_comparison([panel('x')], tmp_path / 'sub' / 'b.png')
    assert a.read_bytes()[:8] == b'\x89PNG\r\n\x1a\n'
    assert a.read_bytes() == b.read_bytes()
