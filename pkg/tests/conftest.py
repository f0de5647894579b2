from __future__ import annotations

import numpy as np
import pytest

from deskbot.simworld import SessionConfig, collect_episode, get_task


@pytest.fixture(scope="session")
def reach_task():
    return get_task("reach")


@pytest.fixture(scope="session")
def reach_episodes():
    """Three small scripted reach demos (aligned), shared read-only."""
    task = get_task("reach")
    eps = []
    for i in range(3):
        _, ep, _ = collect_episode(task, 1000 + i, SessionConfig(noise_sigma=0.003))
        eps.append(ep)
    return eps


@pytest.fixture(scope="session")
def tiny_policy(reach_episodes):
    """A barely-trained diffusion policy; fast to fit, enough for plumbing
    tests (checkpoints, bridge, eval). Not expected to act competently."""
    from deskbot.policy import DiffusionPolicy

    return DiffusionPolicy(epochs=8, seed=3).fit(reach_episodes)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
