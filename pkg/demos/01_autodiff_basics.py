"""Tape-based reverse-mode differentiation on a tiny least-squares fit."""

import numpy as np

from glossgen.autodiff import (AdamState, Tape, Tensor, add, adam_step,
                               backward, grad_check, matmul, mul, scale,
                               sum_all, zero_grads)

rng = np.random.default_rng(0)

# ground truth: y = x @ w_true, we recover w from noisy observations
w_true = np.array([[2.0], [-3.0], [0.5]])
x = rng.normal(size=(64, 3))
y = x @ w_true + 0.01 * rng.normal(size=(64, 1))

w = Tensor(np.zeros((3, 1)), requires_grad=True)
x_t = Tensor(x)
y_t = Tensor(y)


def loss_fn(w_param):
    # mean squared residual, built from the same primitives the models use
    r = add(matmul(x_t, w_param), scale(y_t, -1.0))
    return scale(sum_all(mul(r, r)), 1.0 / len(x))


# the analytic gradient agrees with central differences
err = grad_check(loss_fn, [w])
print(f"grad_check relative error: {err:.2e}")

params = {"w": w}
state = AdamState(lr=0.1)
for step in range(200):
    zero_grads(params)
    with Tape() as tape:
        loss = loss_fn(w)
        backward(tape, loss)
    adam_step(params, state)
    if step % 50 == 0:
        print(f"step {step:3d}  loss {float(loss.data):.6f}")

print("recovered:", np.round(w.data.ravel(), 3), " true:", w_true.ravel())
