# Gradient engine walkthrough: build a tiny computation, differentiate it,
# and compare against central finite differences.

import numpy as np

from avasdlab import autodiff as ad

# a small expression: mean(sigmoid(x W)) for a 4x3 input
rng = np.random.Generator(np.random.PCG64(0))
x = ad.Tensor(rng.standard_normal((4, 3)).astype(np.float32), requires_grad=True)
w = ad.Tensor(rng.standard_normal((3, 2)).astype(np.float32), requires_grad=True)

loss = ad.tmean(ad.sigmoid(ad.matmul(x, w)))
loss.backward()
print("loss:", loss.item())
print("dL/dW:\n", w.grad)

# finite-difference check of one weight entry
h = 1e-3
w_plus = w.data.astype(np.float64).copy()
w_plus[0, 0] += h
w_minus = w.data.astype(np.float64).copy()
w_minus[0, 0] -= h


def f(wm):
    return float(np.mean(1.0 / (1.0 + np.exp(-(x.data.astype(np.float64) @ wm)))))


fd = (f(w_plus) - f(w_minus)) / (2 * h)
print(f"finite difference dL/dW[0,0] = {fd:.6f}, autodiff = {w.grad[0, 0]:.6f}")

# gradients accumulate across fan-out: x used twice gets the sum of both paths
y = ad.Tensor([1.0, 2.0, 3.0], requires_grad=True)
ad.add(ad.tsum(ad.mul(y, y)), ad.tmean(y)).backward()
print("fan-out gradient (2y + 1/3):", y.grad)

# a second backward over the same graph is an error: rebuild instead
try:
    loss.backward()
except ad.GraphError as exc:
    print("repeated backward rejected:", exc)
