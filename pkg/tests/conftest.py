import numpy as np
import pytest
import torch

torch.set_num_threads(1)

from fauxnews.data_model import BBox, Dataset, Domain, ManipClass, NewsSample, render_reasoning
from fauxnews.forge import ForgeConfig, default_lexicon, forge_dataset
from fauxnews.model import ModelConfig, NewsModel


@pytest.fixture(scope="session")
def lexicon():
    return default_lexicon()


@pytest.fixture(scope="session")
def forge32():
    return forge_dataset(ForgeConfig(n_samples=32, seed=13))


@pytest.fixture(scope="session")
def small_model():
    return NewsModel(ModelConfig.small(), seed=5)


def make_sample(
    sample_id="s0",
    label=0,
    fake_cls=ManipClass.ORIG,
    domain=Domain.SPORT,
    text="Liu Xiang returns triumphantly and receives heated extolling",
    with_bbox=True,
    size=32,
    seed=0,
):
    rng = np.random.default_rng(seed)
    image = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
    reasoning = render_reasoning(
        label,
        f'The photo shows a person. The headline reports: "{text}". They match.',
        "No editing traces are visible." if label == 0 else "The face region shows seams.",
    )
    return NewsSample(
        id=sample_id,
        image=np.asarray(image),
        text=text,
        domain=domain,
        label=label,
        fake_cls=fake_cls,
        face_bbox=BBox(0.25, 0.25, 0.75, 0.75) if with_bbox else None,
        reasoning=reasoning,
    )


@pytest.fixture
def sample_factory():
    return make_sample
