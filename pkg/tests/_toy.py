"""Small synthetic studies shared by the estimator and CLI tests."""

import numpy as np

from strifle.glm import ObservationBlock, StudyData, empty_block


def toy_study(seed, n_T=40, N_T=200, n_S=60, N_S=200, p=4, q=2, shift=0.3, link="logit", beta=None):
    """Target and source rows differing by a mean shift in X; y depends on X and S."""
    rng = np.random.default_rng(seed)

    def block(n, pop, lab, mean):
        if n == 0:
            return empty_block(p, q, pop, lab)
        X = np.hstack([np.ones((n, 1)), rng.normal(mean, 1, (n, p - 1))])
        S = X[:, 1:q + 1] + rng.normal(0, 1, (n, q))
        y = None
        if lab:
            coef = np.array([0.3, 1.0, -0.5] + [0.0] * p)[:p]
            eta = X @ coef + (S[:, 0] if q else 0.0)
            if link == "logit":
                y = (rng.random(n) < 1 / (1 + np.exp(-eta))).astype(float)
            else:
                y = eta + rng.normal(0, 1, n)
        return ObservationBlock(X, S, y, pop, lab)

    return StudyData(
        block(n_T, "target", True, 0.0),
        block(N_T, "target", False, 0.0),
        block(n_S, "source", True, shift),
        block(N_S, "source", False, shift),
    )
