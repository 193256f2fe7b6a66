import pytest

from compass3d import synth


@pytest.fixture(scope="session")
def default_dataset(tmp_path_factory):
    """The frozen default micro corpus (64 train / 16 test scenes, seed 7)."""
    out = tmp_path_factory.mktemp("default") / "dataset"
    manifest = synth.build_dataset(synth.SynthConfig(), out)
    return out, manifest
