"""Shared fixtures: the toy extractor and synthetic corpora."""

import pytest

from fragvqa.backbones import ToyConvExtractor
from fragvqa.synthetic import generate_corpus


@pytest.fixture(scope="session")
def toy_extractor():
    return ToyConvExtractor()


@pytest.fixture(scope="session")
def corpus25(tmp_path_factory):
    """25 graded-degradation clips; enough for a 64/16/20 split with 5 test videos."""
    root = tmp_path_factory.mktemp("corpus25")
    return generate_corpus(root, n_clips=25, seed=11)


@pytest.fixture(scope="session")
def corpus50(tmp_path_factory):
    """The full 50-clip corpus used by the end-to-end acceptance runs."""
    root = tmp_path_factory.mktemp("corpus50")
    return generate_corpus(root, n_clips=50, seed=7)
