# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled SGNS update loop. Must stay arithmetically equivalent to _sgns_py.sgns_train."""
from libc.math cimport exp, log1p
from libc.stdint cimport int64_t
from libc.stdlib cimport calloc, free


cdef inline double _sigmoid(double x) nogil:
    cdef double z
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    z = exp(x)
    return z / (1.0 + z)


cdef inline double _log_sigmoid(double x) nogil:
    if x >= 0:
        return -log1p(exp(-x))
    return x - log1p(exp(x))


def sgns_train(double[:, ::1] w_in, double[:, ::1] w_out,
               const int64_t[::1] centers, const int64_t[::1] contexts,
               const int64_t[:, ::1] negs, double lr0, double lr1):
    cdef Py_ssize_t n = centers.shape[0]
    cdef Py_ssize_t dim = w_in.shape[1]
    cdef Py_ssize_t n_neg = negs.shape[1]
    cdef Py_ssize_t i, j, d
    cdef int64_t c, t
    cdef double lr, dot, g, loss = 0.0
    cdef double *grad
    if n == 0:
        return 0.0
    grad = <double *> calloc(dim, sizeof(double))
    if grad == NULL:
        raise MemoryError()
    with nogil:
        for i in range(n):
            if n > 1:
                lr = lr0 + (lr1 - lr0) * i / (n - 1)
            else:
                lr = lr0
            c = centers[i]
            for d in range(dim):
                grad[d] = 0.0
            for j in range(n_neg + 1):
                if j == 0:
                    t = contexts[i]
                else:
                    t = negs[i, j - 1]
                dot = 0.0
                for d in range(dim):
                    dot = dot + w_in[c, d] * w_out[t, d]
                if j == 0:
                    loss = loss - _log_sigmoid(dot)
                    g = lr * (1.0 - _sigmoid(dot))
                else:
                    loss = loss - _log_sigmoid(-dot)
                    g = -lr * _sigmoid(dot)
                for d in range(dim):
                    grad[d] = grad[d] + g * w_out[t, d]
                    w_out[t, d] = w_out[t, d] + g * w_in[c, d]
            for d in range(dim):
                w_in[c, d] = w_in[c, d] + grad[d]
    free(grad)
    return loss
