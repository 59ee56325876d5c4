import pytest

from ramt.gradcheck import OPERATIONS, check_pipeline
from ramt.model import VISUAL_MODES


@pytest.mark.parametrize("name", sorted(OPERATIONS))
@pytest.mark.parametrize("seed", [0, 3])
def test_operation_gradients(name, seed):
    report = OPERATIONS[name](seed)
    assert report and max(report.values()) < 1e-4, report


@pytest.mark.parametrize("condition", sorted(VISUAL_MODES))
def test_pipeline_gradients(condition):
    report = check_pipeline(0, condition)
    assert max(report.values()) < 1e-4, {k: v for k, v in report.items() if v >= 1e-4}
