import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hdb_bidder import nets


def const_head_policy(head_values, obs_dim=16, lam_min=-50.0, lam_max=200.0,
                      head="zero_band"):
    """Policy whose mean head is constant: zero weights, arctanh biases.

    Values of exactly +-1 use a saturating bias (tanh(25) rounds to 1.0 in
    float64), so fully saturated plateaus are representable.
    """
    rng = np.random.default_rng(0)
    policy = nets.make_policy(obs_dim, len(head_values), rng, lam_min, lam_max,
                              head=head)
    for w in policy.mlp.weights:
        w[:] = 0.0
    for b in policy.mlp.biases:
        b[:] = 0.0
    values = np.asarray(head_values, dtype=np.float64)
    saturated = np.abs(values) >= 1.0
    bias = np.where(saturated, np.sign(values) * 25.0,
                    np.arctanh(np.where(saturated, 0.0, values)))
    policy.mlp.biases[-1][:] = bias
    return policy


@pytest.fixture
def zero_band_policy():
    """Charge below -0.5 (normalized), discharge above 0.5, full powers."""
    return const_head_policy([-0.5, 0.5, 1.0, 1.0])
