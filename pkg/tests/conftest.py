import numpy as np
import pytest
import torch

from mmant.config import CorpusSpec, cyclic_transition_matrix, default_corpus_spec
from mmant.data import generate_corpus


@pytest.fixture
def tiny_spec():
    return CorpusSpec(
        n_videos=4,
        n_coarse=2,
        n_fine=4,
        fine_to_coarse=[0, 0, 1, 1],
        C=5,
        mean_video_len=60,
        drift_rate=0.01,
        noise_std=0.3,
        transition_matrix=cyclic_transition_matrix(4, seed=7),
        seed=7,
        mean_segment_len=8.0,
    )


@pytest.fixture
def tiny_corpus(tiny_spec):
    return generate_corpus(tiny_spec)


@pytest.fixture
def default_spec():
    return default_corpus_spec(0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)


_CRITERIA: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    """Collect an acceptance-criterion verdict for the terminal summary."""
    _CRITERIA[number] = (ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_CRITERIA):
        ok, detail = _CRITERIA[number]
        terminalreporter.write_line(
            f"criterion {number}: {'PASS' if ok else 'FAIL'} — {detail}")
