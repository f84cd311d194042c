"""A tour of the tensor engine: values, tapes, gradients.

Every number the model ever computes flows through these primitives, so it
is worth seeing them in isolation first.
"""

import numpy as np

from fpg import tensor as T
from fpg.tensor import Tape, Tensor

print("== values are plain float64 numpy arrays ==")
x = Tensor([[1.0, 2.0], [3.0, 4.0]])
y = T.tanh(x)
print("tanh(x) =\n", y.data)

print("\n== gradients come from a tape of recorded operations ==")
w = Tensor(np.array([[0.5, -0.2], [0.1, 0.3]]), requires_grad=True)
with Tape() as tape:
    out = T.softmax_masked(T.matmul(x, w))
    loss = T.mean(T.cross_entropy_from_logits(out, np.array([0, 1])))
    T.backward(loss)
print(f"recorded {len(tape)} operations; loss = {loss.item():.4f}")
print("dL/dw =\n", w.grad)

print("\n== the tape replays consumers before producers, so shared")
print("   subexpressions accumulate gradient contributions ==")
a = Tensor([2.0], requires_grad=True)
with Tape():
    b = T.mul(a, a)  # a appears twice
    T.backward(T.sum_(T.mul(b, a)))  # d(a^3)/da = 3a^2
print("d(a^3)/da at a=2:", a.grad, "(expect 12)")

print("\n== analytic gradients agree with finite differences ==")
rng = np.random.default_rng(0)
p = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
v = Tensor(rng.normal(size=3))


def f():
    return T.sum_(T.mul(T.sigmoid(T.matmul(v, p)), T.tanh(v)))


with Tape():
    T.backward(f())
step = 1e-5
numeric = np.zeros_like(p.data)
for i in range(p.data.size):
    flat = p.data.ravel()
    keep = flat[i]
    flat[i] = keep + step
    up = f().item()
    flat[i] = keep - step
    down = f().item()
    flat[i] = keep
    numeric.ravel()[i] = (up - down) / (2 * step)
print("max |analytic - central difference| =", np.abs(p.grad - numeric).max())

print("\n== masked softmax writes exact zeros and renormalizes the rest ==")
logits = Tensor([[3.0, 1.0, -2.0, 0.5]])
keep = np.array([True, False, True, True])
probs = T.softmax_masked(logits, keep)
print("keep:", keep, "->", probs.data, "row sum:", probs.data.sum())
