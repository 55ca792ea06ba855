"""
Gradients by hand and by finite differences
===========================================

Build a small expression, backpropagate, and compare against central
differences with ``grad_check``.
"""

import numpy as np

from genrefusion.tensor import Tensor, grad_check, softmax, tanh

rng = np.random.default_rng(0)

# a tiny attention-style score: softmax over tanh(x W) u
x = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
W = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
u = Tensor(rng.normal(size=(3, 1)), requires_grad=True)

scores = (tanh(x @ W) @ u).reshape(5)
alpha = softmax(scores)
print("attention weights:", np.round(alpha.data, 3), "sum", alpha.data.sum())

# weighted sum of the rows, reduced to a scalar
loss = (alpha.reshape(5, 1) * x).sum()
loss.backward()
print("dloss/du:", u.grad.ravel())

# central differences agree to ~1e-9 in float64
worst, info = grad_check(lambda: (softmax((tanh(x @ W) @ u).reshape(5)).reshape(5, 1) * x).sum(),
                         [x, W, u])
print(f"worst relative error {worst:.2e} over {info['checked']} coordinates")
