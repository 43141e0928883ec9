"""scikit-learn style wrappers around moment estimation and Gram recovery.

Observations are rows of ``Y`` in block coordinates (the layout of
``Signal.to_vector``).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .moments import psd_project
from .recovery import MomentAccumulator, extract_gram, recover_from_gram
from .repspec import RepSpec


def _check_obs(Y, spec: RepSpec) -> np.ndarray:
    Y = check_array(Y, dtype=float)
    if Y.shape[1] != spec.ambient_dim:
        raise ValueError(f"observations have {Y.shape[1]} features, spec needs {spec.ambient_dim}")
    return Y


class InvariantFeatures(TransformerMixin, BaseEstimator):
    """Per-observation Gram tuple, flattened: features invariant under ``H``.

    Stateless; ``fit`` only checks the feature count.
    """

    def __init__(self, spec: RepSpec):
        self.spec = spec

    def fit(self, Y, y=None):
        Y = _check_obs(Y, self.spec)
        self.n_features_in_ = Y.shape[1]
        return self

    def transform(self, Y):
        check_is_fitted(self, "n_features_in_")
        Y = _check_obs(Y, self.spec)
        out = []
        for off, (n, r) in zip(self.spec.offsets(), self.spec.blocks):
            X = Y[:, off : off + n * r].reshape(-1, n, r)
            out.append(np.einsum("kir,kis->krs", X, X).reshape(len(Y), r * r))
        return np.hstack(out)


class MomentEstimator(BaseEstimator):
    """Streaming second-moment estimate with noise debiasing and Gram extraction.

    Parameters
    ----------
    spec : RepSpec
        Block layout of the observations.
    noise_sigma : float
        Known noise level; ``sigma^2 I`` is subtracted before extraction.

    Attributes
    ----------
    raw_ : ndarray
        Empirical ``E[y y^T]``.
    debiased_ : ndarray
    gram_ : GramTuple
        Extracted Gram tuple, clamped to PSD.
    n_samples_seen_ : int
    """

    def __init__(self, spec: RepSpec, noise_sigma: float = 0.0):
        self.spec = spec
        self.noise_sigma = noise_sigma

    def fit(self, Y, y=None):
        if hasattr(self, "_acc"):
            del self._acc
        return self.partial_fit(Y)

    def partial_fit(self, Y, y=None):
        Y = _check_obs(Y, self.spec)
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        if not hasattr(self, "_acc"):
            self._acc = MomentAccumulator(self.spec.ambient_dim)
        self._acc.update(Y)
        self.n_features_in_ = Y.shape[1]
        self.n_samples_seen_ = self._acc.count
        self.raw_ = self._acc.mean()
        self.debiased_ = self.raw_ - self.noise_sigma**2 * np.eye(self.spec.ambient_dim)
        self.gram_ = psd_project(extract_gram(self.debiased_, self.spec))
        return self


class GramRecovery(BaseEstimator):
    """Estimate the second moment from observations, then recover a signal in a prior.

    Parameters
    ----------
    prior : Prior
    noise_sigma : float
    restarts, max_iters, tol
        Passed to the multistart descent.
    random_state : int
        Required; recovery is randomized.

    Attributes
    ----------
    signal_ : Signal
        Recovered signal, defined up to a global sign.
    result_ : RecoveryResult
    gram_ : GramTuple
    """

    def __init__(self, prior, noise_sigma: float = 0.0, restarts: int = 20, max_iters: int = 500,
                 tol: float = 1e-10, random_state=0):
        self.prior = prior
        self.noise_sigma = noise_sigma
        self.restarts = restarts
        self.max_iters = max_iters
        self.tol = tol
        self.random_state = random_state

    def fit(self, Y, y=None):
        moments = MomentEstimator(self.prior.spec, self.noise_sigma).fit(Y)
        return self.fit_gram(moments.gram_, n_features_in=moments.n_features_in_)

    def fit_gram(self, G, n_features_in=None):
        self.gram_ = G
        self.result_ = recover_from_gram(G, self.prior, self.restarts, self.max_iters, self.tol, self.random_state)
        self.signal_ = self.result_.estimate
        self.n_features_in_ = n_features_in or self.prior.spec.ambient_dim
        return self
