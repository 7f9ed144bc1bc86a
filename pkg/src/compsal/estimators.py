"""scikit-learn style wrappers around the network and the saliency methods."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .attribution import DEFAULT_EPSILON, Method, attribute
from .nn import Network, TrainConfig, build_network, train


class SaliencyNetClassifier(ClassifierMixin, BaseEstimator):
    """Feedforward ReLU classifier trained with plain SGD.

    ``X`` is flat (n_samples, prod(input_shape)); it is reshaped to
    ``input_shape`` internally. Labels must be integers 0..C-1 where C is
    the width of the last layer.
    """

    def __init__(self, arch="flatten,dense:128,relu,dense:10", input_shape=(16, 16), epochs=20,
                 batch_size=32, learning_rate=0.05, bias=True, random_state=0):
        self.arch = arch
        self.input_shape = input_shape
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.bias = bias
        self.random_state = random_state

    def _reshape(self, X):
        return X.reshape((X.shape[0],) + tuple(self.input_shape))

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = unique_labels(y)
        if not np.issubdtype(self.classes_.dtype, np.integer) and not np.all(self.classes_ == np.round(self.classes_)):
            raise ValueError("labels must be integer class indices")
        seed = 0 if self.random_state is None else int(self.random_state)
        self.network_ = build_network(self.arch, self.input_shape, seed=seed, bias=self.bias)
        cfg = TrainConfig(self.epochs, self.batch_size, self.learning_rate, seed)
        self.train_report_ = train(self.network_, self._reshape(X), y.astype(np.int64), cfg)
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X, dtype=np.float64)
        return self.network_.logits(self._reshape(X))

    def predict_proba(self, X):
        z = self.decision_function(X)
        z = np.exp(z - z.max(axis=1, keepdims=True))
        return z / z.sum(axis=1, keepdims=True)

    def predict(self, X):
        return np.argmax(self.decision_function(X), axis=1)


class CompetitiveSaliency(TransformerMixin, BaseEstimator):
    """Maps each sample to its saliency map (flattened) for a fitted network.

    ``network`` may be a :class:`Network` or a fitted
    :class:`SaliencyNetClassifier`. ``transform(X, y)`` explains node ``y[i]``
    for sample i; without ``y`` the predicted node is explained.
    """

    def __init__(self, network=None, method="cgi", epsilon=DEFAULT_EPSILON):
        self.network = network
        self.method = method
        self.epsilon = epsilon

    def fit(self, X=None, y=None):
        net = self.network
        if isinstance(net, SaliencyNetClassifier):
            check_is_fitted(net, "network_")
            net = net.network_
        if not isinstance(net, Network):
            raise TypeError("network must be a Network or a fitted SaliencyNetClassifier")
        Method(self.method)
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        self.network_ = net
        return self

    def transform(self, X, y=None):
        check_is_fitted(self, "network_")
        X = check_array(X, dtype=np.float64)
        net = self.network_
        shaped = X.reshape((X.shape[0],) + net.input_shape)
        nodes = [None] * len(X) if y is None else [int(v) for v in np.asarray(y)]
        out = np.empty_like(X)
        for i, (x, node) in enumerate(zip(shaped, nodes)):
            out[i] = attribute(net, x, self.method, node, self.epsilon).scores.ravel()
        return out

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X, y).transform(X, y)
