import sys
import os
import numpy as np
import pytest
from contextlib import ContextDecorator

class ChangeDirToFileLocation(ContextDecorator):
    def __enter__(self):
        # Save the current working directory
        self.original_cwd = os.getcwd()
        # Change the working directory to the location of the currently running .py file
        os.chdir(os.path.dirname(os.path.realpath(__file__)))
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        # Reset the working directory back to its original location
        os.chdir(self.original_cwd)


with ChangeDirToFileLocation():
    full_path = os.path.abspath(os.path.join(os.getcwd(), "../../"))
    sys.path.insert(0, full_path)
    import ipccf.simulation as simulation
    import ipccf.dataset as dataset
    import ipccf.graph as graph
    import ipccf.model as model
    import ipccf.utils as utils


@pytest.fixture
def toy_dataset():
    """10 users x 10 items, every user with at least two interactions, split 80/20."""
    raw = simulation.random_bipartite(10, 10, density=0.3, seed=7, min_degree=2)
    return dataset.split_train_test(raw, ratio=0.8, seed=3)


@pytest.fixture
def toy_operators(toy_dataset):
    return graph.build_graph_operators(toy_dataset, graph.ExtractionConfig(eta=0.5, q=3))


@pytest.fixture
def toy_params(toy_dataset):
    return model.ModelParams.initialize(toy_dataset.num_users, toy_dataset.num_items, dim=4, num_intents=2,
                                        rng=np.random.default_rng(11))


@pytest.fixture
def write_interactions(tmp_path):
    """Write `content` to a file under tmp_path and return its path."""
    def _write(content: str, name: str = 'interactions.txt') -> str:
        path = tmp_path / name
        path.write_bytes(content.encode('utf-8') if isinstance(content, str) else content)
        return str(path)
    return _write
