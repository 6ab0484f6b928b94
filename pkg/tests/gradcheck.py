import numpy as np


def rel_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


def numeric_grad(f, x, h=1e-6):
    """Central differences of scalar ``f`` at flat vector ``x`` (restores ``x``)."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        old = x[i]
        x[i] = old + h
        fp = f(x)
        x[i] = old - h
        fm = f(x)
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    f(x)
    return g


def net_grad_error(net, loss_fn, grads_fn):
    """Compare backprop parameter gradients with central differences.

    ``loss_fn()`` evaluates the loss at the net's current parameters;
    ``grads_fn()`` returns the list of parameter gradients.
    """
    flat0 = net.get_flat()
    analytic = np.concatenate([np.ravel(g) for g in grads_fn()])

    def f(v):
        net.set_flat(v)
        return loss_fn()

    numeric = numeric_grad(f, flat0)
    net.set_flat(flat0)
    return rel_error(analytic, numeric)
