import numpy as np
import torch

import oracles

STEP = 1e-4
RTOL = 1e-3


def assert_grad_close(auto, fd, rtol=RTOL):
    auto, fd = np.asarray(auto, float), np.asarray(fd, float)
    # relative to the largest gradient entry so near-zero entries do not dominate
    np.testing.assert_allclose(auto, fd, rtol=rtol, atol=rtol * np.abs(fd).max())


def autograd(fn, x):
    t = torch.tensor(x, dtype=torch.float64, requires_grad=True)
    fn(t).backward()
    return t.grad.numpy()


def finite_difference(fn, x, step=STEP):
    return oracles.central_difference(lambda v: float(fn(v)), x, step)
