"""Session-scoped fixtures for models that are expensive to train.

Several test modules (and most of the acceptance suite) examine the same
trained artifacts. Training them once per pytest session keeps the full run
inside its time budget without weakening any individual check.
"""

import numpy as np
import pytest

from oracles import mixture_dataset
from spotrl import cvae

# the 1-D mixture estimator used by the density-fidelity checks: a 1-D latent
# suffices for a 1-D action, the small decoder variance pushes mode shaping
# into the latent, and the lr anneal settles the sharp mode boundary
MIXTURE_CVAE_CONFIG = dict(iters=45_000, batch_size=512, lr=1e-3, lr_final=5e-5,
                           hidden=64, depth=4, latent_dim=1, sigma_dec=0.03,
                           kl_weight=1.0, action_bound=1.5, seed=1)


@pytest.fixture(scope="session")
def mixture_data():
    return mixture_dataset(100_000, seed=0)


@pytest.fixture(scope="session")
def mixture_cvae(mixture_data):
    model, losses = cvae.train_vae(mixture_data, **MIXTURE_CVAE_CONFIG)
    assert np.isfinite(losses).all()
    return model


@pytest.fixture(scope="session")
def mixture_gaussian_fit(mixture_data):
    model, _ = cvae.train_gaussian_baseline(mixture_data, iters=4_000,
                                            action_bound=1.5, seed=2)
    return model
