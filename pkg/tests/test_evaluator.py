import json
import math

import numpy as np
import pytest

from errors import ContractError, DomainError
from evaluator import UNCOVERED, bin_metrics, build_report, metrics, write_report

BINS = [{"label": "Light", "lo": 0.0, "hi": 100.0},
        {"label": "Medium", "lo": 100.0, "hi": 500.0},
        {"label": "Heavy", "lo": 1000.0, "hi": 3500.0}]


def test_reference_values():
    m = metrics([110.0, 180.0], [100.0, 200.0])
    assert m["mae_kg"] == pytest.approx(15.0)
    assert m["rmse_kg"] == pytest.approx(math.sqrt(250.0))
    assert m["mape_pct"] == pytest.approx(10.0)
    assert m["r2"] == pytest.approx(0.9)


def test_perfect_predictions():
    y = np.array([5.0, 50.0, 500.0])
    m = metrics(y, y)
    assert m["mae_kg"] == 0.0
    assert m["r2"] == 1.0
    assert m["msle"] == 0.0


def test_needs_two_samples():
    with pytest.raises(ContractError):
        metrics([1.0], [1.0])


def test_zero_variance_targets():
    with pytest.raises(DomainError):
        metrics([1.0, 2.0], [3.0, 3.0])


def test_negative_targets():
    with pytest.raises(DomainError):
        metrics([1.0, 2.0], [-1.0, 3.0])


def test_zero_targets_excluded_from_mape():
    m = metrics([1.0, 110.0], [0.0, 100.0])
    assert m["mape_pct"] == pytest.approx(10.0)
    assert m["mape_excluded"] == 1


def test_bins_are_half_open_with_uncovered_row():
    y = np.array([50.0, 100.0, 700.0, 3500.0])
    rows = bin_metrics(y + 10.0, y, BINS)
    by_label = {r.label: r for r in rows}
    assert by_label["Light"].n == 1
    assert by_label["Medium"].n == 1
    assert by_label["Heavy"].n == 0
    assert by_label["Heavy"].mae_kg is None
    assert by_label[UNCOVERED].n == 2
    assert by_label["Light"].mae_kg == pytest.approx(10.0)
    assert by_label["Light"].mape_pct == pytest.approx(20.0)


def test_report_files(tmp_path):
    report = build_report("test", [110.0, 180.0], [100.0, 200.0], BINS)
    json_path, csv_path = write_report(report, tmp_path, "metrics_test")
    payload = json.loads(json_path.read_text())
    assert payload["split"] == "test"
    assert payload["mae_kg"] == pytest.approx(15.0)
    lines = csv_path.read_text().splitlines()
    assert lines[0].startswith("scope,lo,hi,n")
    assert lines[1].startswith("overall")
    assert len(lines) == 2 + len(BINS) + 1


def test_rmse_never_below_mae():
    rng = np.random.default_rng(7)
    for _ in range(50):
        y = rng.uniform(1.0, 3000.0, size=int(rng.integers(2, 40)))
        m = metrics(y * rng.uniform(0.5, 1.5, size=y.size), y)
        assert m["rmse_kg"] >= m["mae_kg"] - 1e-12


def test_bins_partition_the_split():
    rng = np.random.default_rng(8)
    y = rng.uniform(3.5, 3450.0, size=500)
    rows = bin_metrics(y, y, BINS)
    assert sum(r.n for r in rows) == y.size
