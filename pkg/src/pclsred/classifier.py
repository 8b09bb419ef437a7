"""One-vs-all sigmoid MLP bank selecting the basis region from parameters.

One small fully-connected network per cluster, logistic sigmoid on every
hidden layer and on the output, trained with full-batch gradient descent
plus momentum on the binary cross-entropy. Region selection is the argmax
of the K one-vs-all scores. Inputs are standardized with statistics from
the training data; raw physical units saturate the sigmoids otherwise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

# pre-activation clip keeping sigmoid outputs strictly inside (0,1) in f64
_Z_CLIP = 36.0
_LOSS_CLIP = 1e-12


@dataclass
class MlpClassifier:
    weights: list[np.ndarray]  # layer l maps n_{l-1} -> n_l, stored n_l x n_{l-1}
    biases: list[np.ndarray]
    loss_trace: list[float] = field(default_factory=list)

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def n_coefficients(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Scores in (0,1) for standardized inputs x (single vector or rows)."""
        single = x.ndim == 1
        a = np.atleast_2d(x)
        for w, b in zip(self.weights, self.biases):
            z = np.clip(a @ w.T + b, -_Z_CLIP, _Z_CLIP)
            a = expit(z)
        out = a[:, 0]
        return out[0] if single else out


def init_classifier(layer_sizes: list[int], rng: np.random.Generator) -> MlpClassifier:
    """Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases."""
    weights, biases = [], []
    for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = np.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-bound, bound, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    return MlpClassifier(weights=weights, biases=biases)


def cross_entropy_loss(clf: MlpClassifier, x: np.ndarray, y: np.ndarray) -> float:
    p = np.clip(clf.forward(x), _LOSS_CLIP, 1.0 - _LOSS_CLIP)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def gradients(
    clf: MlpClassifier, x: np.ndarray, y: np.ndarray
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Back-propagated gradients of the mean cross-entropy."""
    acts = [np.atleast_2d(x)]
    for w, b in zip(clf.weights, clf.biases):
        z = np.clip(acts[-1] @ w.T + b, -_Z_CLIP, _Z_CLIP)
        acts.append(expit(z))
    M = acts[0].shape[0]
    # sigmoid output + cross-entropy collapse to (p - y) at the last layer
    delta = (acts[-1][:, 0] - y)[:, None] / M
    grads_w, grads_b = [], []
    for layer in range(len(clf.weights) - 1, -1, -1):
        grads_w.append(delta.T @ acts[layer])
        grads_b.append(delta.sum(axis=0))
        if layer:
            delta = (delta @ clf.weights[layer]) * acts[layer] * (1.0 - acts[layer])
    return grads_w[::-1], grads_b[::-1]


@dataclass
class ClassifierBank:
    classifiers: list[MlpClassifier]
    mean: np.ndarray
    scale: np.ndarray

    @property
    def K(self) -> int:
        return len(self.classifiers)

    @property
    def p(self) -> int:
        return self.mean.shape[0]

    def standardize(self, thetas: np.ndarray) -> np.ndarray:
        return (thetas - self.mean) / self.scale

    def scores(self, thetas: np.ndarray) -> np.ndarray:
        x = self.standardize(np.atleast_2d(thetas))
        return np.column_stack([clf.forward(x) for clf in self.classifiers])

    def to_json(self) -> str:
        return json.dumps(
            {
                "version": 1,
                "mean": self.mean.tolist(),
                "scale": self.scale.tolist(),
                "classifiers": [
                    {
                        "layer_sizes": clf.layer_sizes,
                        "weights": [w.flatten(order="F").tolist() for w in clf.weights],
                        "biases": [b.tolist() for b in clf.biases],
                    }
                    for clf in self.classifiers
                ],
            }
        )

    @staticmethod
    def from_json(text: str) -> "ClassifierBank":
        d = json.loads(text)
        if d.get("version") != 1:
            raise ValueError(f"unsupported bank version {d.get('version')!r}")
        classifiers = []
        for c in d["classifiers"]:
            sizes = c["layer_sizes"]
            weights = [
                np.asarray(flat).reshape((n_out, n_in), order="F")
                for flat, n_in, n_out in zip(c["weights"], sizes[:-1], sizes[1:])
            ]
            biases = [np.asarray(b) for b in c["biases"]]
            classifiers.append(MlpClassifier(weights=weights, biases=biases))
        return ClassifierBank(
            classifiers=classifiers,
            mean=np.asarray(d["mean"]),
            scale=np.asarray(d["scale"]),
        )


def train_bank(
    thetas: np.ndarray,
    labels: np.ndarray,
    hidden_sizes: tuple[int, ...] = (10, 10, 10),
    epochs: int = 1500,
    learning_rate: float = 1.0,
    momentum: float = 0.9,
    seed: int = 0,
    checkpoint_every: int = 25,
) -> ClassifierBank:
    """Train K one-vs-all classifiers on (theta, cluster-label) pairs."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    labels = np.asarray(labels, dtype=int)
    if labels.shape != (thetas.shape[0],):
        raise ValueError("one label per parameter vector required")
    K = int(labels.max()) + 1 if labels.size else 0
    counts = np.bincount(labels, minlength=K)
    if K == 0 or np.any(counts == 0):
        raise ValueError("every cluster needs at least one training sample")
    mean = thetas.mean(axis=0)
    scale = thetas.std(axis=0)
    scale[scale == 0.0] = 1.0  # constant features pass through unscaled
    x = (thetas - mean) / scale
    sizes = [thetas.shape[1], *hidden_sizes, 1]
    classifiers = []
    for j in range(K):
        clf = init_classifier(sizes, np.random.default_rng([seed, j]))
        y = (labels == j).astype(float)
        vel_w = [np.zeros_like(w) for w in clf.weights]
        vel_b = [np.zeros_like(b) for b in clf.biases]
        for epoch in range(epochs):
            if epoch % checkpoint_every == 0:
                clf.loss_trace.append(cross_entropy_loss(clf, x, y))
            gw, gb = gradients(clf, x, y)
            for w, b, vw, vb, dw, db in zip(
                clf.weights, clf.biases, vel_w, vel_b, gw, gb
            ):
                vw *= momentum
                vw -= learning_rate * dw
                w += vw
                vb *= momentum
                vb -= learning_rate * db
                b += vb
        clf.loss_trace.append(cross_entropy_loss(clf, x, y))
        classifiers.append(clf)
    return ClassifierBank(classifiers=classifiers, mean=mean, scale=scale)


def predict(bank: ClassifierBank, theta: np.ndarray) -> int:
    """Region label from the maximal one-vs-all score; ties take the lowest."""
    return int(np.argmax(bank.scores(theta)[0]))


def predict_batch(bank: ClassifierBank, thetas: np.ndarray) -> np.ndarray:
    return np.argmax(bank.scores(thetas), axis=1)


def accuracy(bank: ClassifierBank, thetas: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(predict_batch(bank, thetas) == np.asarray(labels)))


def partition_section(
    bank: ClassifierBank,
    fixed_coords: np.ndarray,
    axis_i: int,
    axis_j: int,
    grid_i: np.ndarray,
    grid_j: np.ndarray,
) -> np.ndarray:
    """Predicted labels over a 2-D slice, remaining coordinates held fixed.

    Row r, column c holds the label at coordinates fixed_coords with
    component axis_i set to grid_i[r] and axis_j set to grid_j[c].
    """
    fixed = np.asarray(fixed_coords, dtype=float)
    ii, jj = np.meshgrid(grid_i, grid_j, indexing="ij")
    pts = np.tile(fixed, (ii.size, 1))
    pts[:, axis_i] = ii.ravel()
    pts[:, axis_j] = jj.ravel()
    return predict_batch(bank, pts).reshape(ii.shape)
