import pytest
import torch

from ganslim.data import TaskSpec
from ganslim.engine import train_teacher

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def tiny_task():
    return TaskSpec(tag="hue-rotate", n_per_domain=48, seed=3)


@pytest.fixture(scope="session")
def tiny_teacher(tmp_path_factory, tiny_task):
    """A cheap throwaway teacher for plumbing tests (quality irrelevant)."""
    path = tmp_path_factory.mktemp("teacher") / "teacher.ckpt"
    train_teacher(tiny_task, budget=120, seed=0, out_path=path, batch_size=4,
                  extractor_steps=50)
    return str(path)
