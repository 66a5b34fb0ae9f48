"""Hand-analyzable stand-in models shared across the test modules.

Each class bends the classifier interface around a closed-form function so
tests can compare attack and training behavior against pencil-and-paper
arithmetic instead of trained networks.
"""

import torch

from tinyadv.models import DifferentiableClassifier


class ScalarSurrogate(DifferentiableClassifier):
    """Two-class model whose class-0 cross-entropy equals loss_fn(sum(x)).

    Logits are [0, log(expm1(L))], so softplus of the second logit recovers
    L exactly and the input gradient of the loss is loss_fn's derivative.
    loss_fn must stay strictly positive wherever a test walks the input.
    """

    def __init__(self, loss_fn, input_shape=(1, 1, 1)):
        super().__init__({"kind": "scalar_surrogate"}, input_shape, 2)
        self.loss_fn = loss_fn

    def forward(self, x):
        s = x.flatten(1).sum(dim=1)
        g = self.loss_fn(s)
        z = torch.log(torch.expm1(g))
        return torch.stack([torch.zeros_like(z), z], dim=1)


class ThresholdModel(DifferentiableClassifier):
    """Predicts class 1 exactly when the pixel sum exceeds the threshold.

    The cross-entropy gradient for label 0 always points up the sum, so
    signed-gradient attacks move every pixel by +step each iteration.
    """

    def __init__(self, threshold, input_shape=(1, 1, 1)):
        super().__init__({"kind": "threshold"}, input_shape, 2)
        self.threshold = float(threshold)

    def forward(self, x):
        m = x.flatten(1).sum(dim=1) - self.threshold
        return torch.stack([-m, m], dim=1)


class LinearToyModel(DifferentiableClassifier):
    """Linear two-class score w.x + b with symmetric logits.

    The decision boundary is the hyperplane w.x + b = 0 and the class-0 loss
    gradient is parallel to +w, which makes margins and boundary offsets
    available in closed form.
    """

    def __init__(self, w, b, input_shape, scale=6.0):
        super().__init__({"kind": "linear_toy"}, input_shape, 2)
        self.w = w.flatten().clone()
        self.b = float(b)
        self.scale = float(scale)

    def score(self, x):
        return x.flatten(1) @ self.w + self.b

    def forward(self, x):
        s = self.scale * self.score(x)
        return torch.stack([-s, s], dim=1)


class FixedLabelModel(DifferentiableClassifier):
    """Answers a pre-set label per batch position, ignoring pixel content."""

    def __init__(self, labels, num_classes=2, input_shape=(1, 1, 1)):
        super().__init__({"kind": "fixed_labels"}, input_shape, num_classes)
        self.labels = torch.as_tensor(labels, dtype=torch.int64)

    def forward(self, x):
        if x.shape[0] != self.labels.shape[0]:
            raise ValueError("batch size does not match the label table")
        return torch.nn.functional.one_hot(self.labels, self.num_classes).float()
