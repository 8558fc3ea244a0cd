"""Backprop versus central differences on a tiny full model.

Neighbour routing is discrete, so it is computed once and frozen; the
differences then probe a smooth function of the parameters.
"""

import numpy as np

from dimignn import ModelConfig, build_params, finite_difference_grad, model_forward, no_grad
from dimignn.model import mse_loss
from dimignn.tensor import backward, grad_rel_error

cfg = ModelConfig(T_in=8, tau=2, L_s=2, B=2, d_hidden=4, heads=2, k=2, d_fuse=3)
store = build_params(cfg, N=4, C=2)
rng = np.random.default_rng(0)
x = rng.standard_normal((2, 8, 4, 2))
y = rng.standard_normal((2, 2, 4, 1))

with no_grad():
    _, det = model_forward(x, cfg, store, return_details=True)
routing = det["neighbors"]


def loss():
    return mse_loss(model_forward(x, cfg, store, neighbors=routing), y)


backward(loss())
analytic, numeric = [], []
for name, p in store.items():
    # small step: a ReLU pre-activation near zero makes wider steps straddle the kink
    fd = finite_difference_grad(lambda _: loss(), p, h=1e-6).data
    analytic.append(p.grad.ravel())
    numeric.append(fd.ravel())
    print(f"{name:28s} {str(p.shape):10s} |g|={np.linalg.norm(p.grad):.2e}")

err = grad_rel_error(np.concatenate(analytic), np.concatenate(numeric))
print(f"\n{store.num_values()} parameters, relative error {err:.2e}")
