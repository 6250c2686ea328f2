import numpy as np
import pytest

from sml import autodiff as ad
from sml import encoders


def make_model(kind="MaxPool", vocab=12, dim=8, seed=0, **overrides):
    cfg = encoders.ModelConfig(
        vocab_size=vocab, embedding_dim=dim, encoder_kind=kind,
        max_session_length=overrides.pop("max_session_length", 6),
        **overrides)
    return encoders.build_model(cfg, seed=seed)


@pytest.fixture
def tiny_model():
    return make_model()


def encoder_loss_builder(config, loss_fn, seed=3):
    """(params, build) pair for grad-checking a loss through a full encoder.

    ``loss_fn(tape, model)`` must produce the scalar loss; the returned build
    function rewires the supplied tensors into a fresh model on every call so
    finite differences see the perturbed values.
    """
    params = encoders.init_arrays(config, seed=seed)
    params = {k: v.astype(np.float64) for k, v in params.items()}

    def build(tape, tensors):
        model = encoders.model_from_tensors(config, dict(tensors))
        return loss_fn(tape, model)

    return params, build
