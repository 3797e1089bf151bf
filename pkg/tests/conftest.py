import numpy as np
import pytest

from automos.config import PipelineConfig
from automos.evaluation import ConfusionCounts, confusion_counts, iou_mos
from automos.pipeline import label_sequence
from automos.synthetic import generate_sequence, urban_scene

URBAN_SCANS = 200

_acceptance_lines = []


def sequence_iou(pred, truth) -> float:
    c = ConfusionCounts()
    for p, t in zip(pred, truth):
        c = c + confusion_counts(p, t)
    return iou_mos(c)


class UrbanRun:
    def __init__(self, seq, result, seconds):
        self.seq = seq
        self.result = result
        self.seconds = seconds
        self.iou = sequence_iou(result.labels, seq.labels)


def _urban_run(**noise):
    import time
    seq = generate_sequence(urban_scene(seed=0, **noise), URBAN_SCANS)
    t0 = time.perf_counter()
    res = label_sequence(seq.scans, seq.poses, PipelineConfig())
    return UrbanRun(seq, res, time.perf_counter() - t0)


@pytest.fixture(scope="session")
def urban_run():
    """The 200-scan urban scene at 2 cm / 0.2 deg pose noise, labelled once per session."""
    return _urban_run(pose_noise_trans=0.02, pose_noise_yaw_deg=0.2)


@pytest.fixture(scope="session")
def noisy_urban_run():
    """Same scene and seed with tripled pose noise (6 cm / 0.6 deg)."""
    return _urban_run(pose_noise_trans=0.06, pose_noise_yaw_deg=0.6)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.fixture
def detail(request):
    """Call with a short measurement summary; it is shown on the criterion line."""
    def note(text):
        request.node.user_properties.append(("detail", text))
        print(text)
    return note


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        status = "PASS" if rep.passed else "SKIP" if rep.skipped else "FAIL"
        notes = [v for k, v in item.user_properties if k == "detail"]
        if rep.skipped and isinstance(rep.longrepr, tuple):
            notes.append(rep.longrepr[2])
        _acceptance_lines.append((mark.args[0], status, "; ".join(notes)))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_lines:
        return
    terminalreporter.section("acceptance criteria")
    for n, status, text in sorted(_acceptance_lines, key=lambda r: r[0]):
        terminalreporter.write_line(f"{status} criterion {n:2d}: {text}")
