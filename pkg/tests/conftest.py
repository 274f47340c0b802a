from functools import reduce
from pathlib import Path

import numpy as np
import pytest

from pqtopk import Codebook, PQConfig, SequenceEmbedding, SubItemEmbeddings

DATA = Path(__file__).resolve().parents[1] / "src" / "pqtopk" / "data"


def tiny_instance():
    """m=2, b=2, d=4 instance with hand-computed scores 8, 8, 7."""
    cfg = PQConfig(3, 2, 2, 4)
    codebook = Codebook(cfg, np.array([[0, 0], [1, 1], [0, 1]]))
    embeddings = SubItemEmbeddings(cfg, np.array([[[1, 0], [0, 1]], [[1, 1], [2, 0]]]))
    return codebook, embeddings, SequenceEmbedding([1, 2, 3, 4])


@pytest.fixture
def tiny():
    return tiny_instance()


@pytest.fixture(scope="session")
def tiny_instance_path():
    return DATA / "tiny.pqtk"


@pytest.fixture(scope="session")
def tiny_phi_path():
    return DATA / "tiny_phi.txt"


def brute_force_pq_scores(codebook, S):
    """Independent float32 item scores: one numpy gather per split, folded left to right."""
    cols = [S.scores[k][codebook.codes[:, k]] for k in range(codebook.config.num_splits)]
    return reduce(lambda acc, col: (acc + col).astype(np.float32), cols, np.zeros(len(cols[0]), np.float32))


def brute_force_ranking(scores, ids=None):
    """Full sort by (-score, id) with Python's sorted; no shared code with top_k_select."""
    ids = range(len(scores)) if ids is None else ids
    return sorted(zip((int(i) for i in ids), (float(s) for s in scores)), key=lambda t: (-t[1], t[0]))


ACCEPTANCE_LINES = []


def record_criterion(number, title, passed, detail):
    ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} -- {detail}")
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
