import pytest

from rfsentry.dataset import write_synthetic_corpus


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Six synthetic segments per class, shared across test modules."""
    out_dir = tmp_path_factory.mktemp("corpus")
    manifest = write_synthetic_corpus(out_dir, n_per_class=6, seed=11, length=4096)
    return manifest
