"""Hot numeric loops, each with a numba kernel and a numpy fallback.

``lindley_waits`` and ``pegasos_epochs`` dispatch on :data:`autonom._accel.USE_NUMBA`.
Both variants are importable directly so they can be compared.
"""
from __future__ import annotations

import math

import numpy as np

from ._accel import USE_NUMBA, njit


@njit
def _lindley_waits_loop(interarrival, service):
    n = interarrival.shape[0]
    waits = np.zeros(n)
    w = 0.0
    for k in range(1, n):
        w = w + service[k - 1] - interarrival[k]
        if w < 0.0:
            w = 0.0
        waits[k] = w
    return waits


def lindley_waits_numpy(interarrival: np.ndarray, service: np.ndarray) -> np.ndarray:
    """Queue waits for a FIFO single server, customer 0 arriving to an empty system.

    Unrolling ``W[k] = max(0, W[k-1] + S[k-1] - A[k])`` gives
    ``W[k] = C[k] - min(C[0..k])`` with ``C`` the running sum of increments and ``C[0] = 0``.
    """
    increments = np.empty_like(interarrival, dtype=np.float64)
    increments[0] = 0.0
    increments[1:] = service[:-1] - interarrival[1:]
    walk = np.cumsum(increments)
    return walk - np.minimum.accumulate(np.minimum(walk, 0.0))


def lindley_waits_numba(interarrival: np.ndarray, service: np.ndarray) -> np.ndarray:
    return _lindley_waits_loop(
        np.ascontiguousarray(interarrival, dtype=np.float64),
        np.ascontiguousarray(service, dtype=np.float64),
    )


@njit
def _pegasos_loop(X, y, lam, order, project):
    n, p = X.shape
    epochs = order.shape[0]
    w = np.zeros(p)
    w_sum = np.zeros(p)
    objective = np.empty(epochs)
    radius = 1.0 / math.sqrt(lam)
    t = 0
    for e in range(epochs):
        for j in range(n):
            i = order[e, j]
            t += 1
            eta = 1.0 / (lam * t)
            m = 0.0
            for c in range(p):
                m += w[c] * X[i, c]
            m *= y[i]
            shrink = 1.0 - eta * lam
            for c in range(p):
                w[c] *= shrink
            if m < 1.0:
                step = eta * y[i]
                for c in range(p):
                    w[c] += step * X[i, c]
            if project:
                sq = 0.0
                for c in range(p):
                    sq += w[c] * w[c]
                norm = math.sqrt(sq)
                if norm > radius:
                    scale = radius / norm
                    for c in range(p):
                        w[c] *= scale
            for c in range(p):
                w_sum[c] += w[c]
        sq = 0.0
        for c in range(p):
            sq += w_sum[c] * w_sum[c]
        sq /= t * t
        loss = 0.0
        for i in range(n):
            m = 0.0
            for c in range(p):
                m += w_sum[c] * X[i, c]
            m = 1.0 - y[i] * m / t
            if m > 0.0:
                loss += m
        objective[e] = 0.5 * lam * sq + loss / n
    return w, w_sum / t, objective


def pegasos_epochs_numpy(X, y, lam, order, project=True):
    n, p = X.shape
    w = np.zeros(p)
    w_sum = np.zeros(p)
    objective = np.empty(order.shape[0])
    radius = 1.0 / math.sqrt(lam)
    t = 0
    for e, perm in enumerate(order):
        for i in perm:
            t += 1
            eta = 1.0 / (lam * t)
            m = y[i] * (w @ X[i])
            w *= 1.0 - eta * lam
            if m < 1.0:
                w += (eta * y[i]) * X[i]
            if project:
                norm = math.sqrt(w @ w)
                if norm > radius:
                    w *= radius / norm
            w_sum += w
        avg = w_sum / t
        objective[e] = 0.5 * lam * (avg @ avg) + np.maximum(0.0, 1.0 - y * (X @ avg)).mean()
    return w, w_sum / t, objective


def pegasos_epochs_numba(X, y, lam, order, project=True):
    return _pegasos_loop(
        np.ascontiguousarray(X, dtype=np.float64),
        np.ascontiguousarray(y, dtype=np.float64),
        float(lam),
        np.ascontiguousarray(order, dtype=np.int64),
        bool(project),
    )


if USE_NUMBA:
    lindley_waits = lindley_waits_numba
    pegasos_epochs = pegasos_epochs_numba
else:
    lindley_waits = lindley_waits_numpy
    pegasos_epochs = pegasos_epochs_numpy
