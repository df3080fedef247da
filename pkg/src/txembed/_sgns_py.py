"""Pure-Python SGNS update loop, used when the compiled extension is unavailable."""
import math


def _sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def _log_sigmoid(x):
    if x >= 0:
        return -math.log1p(math.exp(-x))
    return x - math.log1p(math.exp(x))


def sgns_train(w_in, w_out, centers, contexts, negs, lr0, lr1):
    """One sequential SGD pass over (center, context, negatives) triples; updates in place.

    Same arithmetic order as the compiled kernel: the center gradient is
    accumulated over the positive and the negatives and applied last, output
    vectors are updated as they are visited. Returns the summed loss.
    """
    n = len(centers)
    if n == 0:
        return 0.0
    dim = w_in.shape[1]
    rows_in = w_in.tolist()
    rows_out = w_out.tolist()
    centers = centers.tolist()
    contexts = contexts.tolist()
    negs = negs.tolist()
    rng_d = range(dim)
    loss = 0.0
    for i in range(n):
        lr = lr0 + (lr1 - lr0) * i / (n - 1) if n > 1 else lr0
        v = rows_in[centers[i]]
        grad = [0.0] * dim
        targets = [contexts[i]] + negs[i]
        for j, t in enumerate(targets):
            u = rows_out[t]
            dot = 0.0
            for d in rng_d:
                dot = dot + v[d] * u[d]
            if j == 0:
                loss = loss - _log_sigmoid(dot)
                g = lr * (1.0 - _sigmoid(dot))
            else:
                loss = loss - _log_sigmoid(-dot)
                g = -lr * _sigmoid(dot)
            for d in rng_d:
                grad[d] = grad[d] + g * u[d]
                u[d] = u[d] + g * v[d]
        for d in rng_d:
            v[d] = v[d] + grad[d]
    w_in[...] = rows_in
    w_out[...] = rows_out
    return loss
