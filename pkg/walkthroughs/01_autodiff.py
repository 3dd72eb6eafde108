"""Build a small loss on the tape, backpropagate, and check one gradient by hand."""

import numpy as np

from dpgan import numerics as nx

rng = np.random.default_rng(0)
W = nx.parameter(rng.standard_normal((4, 3)), "W")
x = nx.constant(rng.standard_normal((2, 4)))
targets = np.array([[0], [2]])

with nx.Graph() as g:
    logits = nx.reshape(nx.matmul(x, W), (2, 1, 3))
    loss = nx.masked_cross_entropy(logits, targets, np.ones((2, 1)))
(grad,) = nx.backward(g, loss, [W])
print("loss", float(loss.data))
print("dloss/dW\n", grad)

# central difference on one coordinate
h = 1e-6
W.data[1, 2] += h
up = float(nx.masked_cross_entropy(nx.reshape(nx.matmul(x, W), (2, 1, 3)), targets, np.ones((2, 1))).data)
W.data[1, 2] -= 2 * h
down = float(nx.masked_cross_entropy(nx.reshape(nx.matmul(x, W), (2, 1, 3)), targets, np.ones((2, 1))).data)
W.data[1, 2] += h
print("numeric", (up - down) / (2 * h), "analytic", grad[1, 2])

opt = nx.Adagrad([W], 0.1, 1e-10, 5.0)
opt.step([grad])
print("after one Adagrad step, W[1, 2] =", W.data[1, 2])
