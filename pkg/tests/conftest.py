import hashlib
from pathlib import Path

import pytest

from autolabel.interchange import ManifestParams
from autolabel.synth import SynthSpec, make_corpus


def tree_hash(root) -> str:
    """Digest of every file's relative path and bytes under root."""
    h = hashlib.sha256()
    for p in sorted(Path(root).rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Six-image clustered corpus with ground truth, shared across tests."""
    root = tmp_path_factory.mktemp("corpus")
    manifest = make_corpus(
        root, SynthSpec(n_images=6, seed=3), params=ManifestParams(sigma=0.3, k=4, batch_size=64)
    )
    return manifest
