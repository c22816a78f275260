import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


TINY_INI = """\
[synth]
n_writers = 4
docs_per_writer = 2
test_writers = 2
n_extra_writers = 2
extra_docs_per_writer = 1
patches_per_doc = 4
lines_per_doc = 1
line_height = 32
seed = 0

[preprocess]
patch_size = 32

[model]
conv_channels = 4,8
feature_dim = 8

[train]
epochs = 2
lr_decay_epoch = 1
lr = 0.01
lr_after = 0.001
batch_size = 8

[loss]
mode = wlsr_mixed

[eval]
top_k = 1,2
"""


@pytest.fixture
def tiny_config(tmp_path):
    """A config small enough to run every stage in about a second."""
    path = tmp_path / "tiny.ini"
    path.write_text(TINY_INI)
    return path
