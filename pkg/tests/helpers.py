"""Shared oracles: central finite differences and brute-force metrics."""

from __future__ import annotations

import itertools

import numpy as np

from motiondiff.tensor import Tensor


def numerical_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of scalar f at x (mutates a copy)."""
    x = x.astype(np.float64).copy()
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(b), 1e-8)
    return float(np.linalg.norm(a - b) / denom)


def check_grad(op, shapes, seed, h: float = 1e-5, tol: float = 1e-6):
    """Compare autodiff and finite-difference gradients for each input slot.

    op takes leaf Tensors and returns a Tensor (reduced to a scalar via a
    fixed random weighting so the check exercises non-trivial cotangents).
    """
    from motiondiff import tensor as T

    rng = np.random.default_rng(seed)
    arrays = [rng.standard_normal(s) for s in shapes]
    leaves = [Tensor(a, requires_grad=True, dtype=np.float64) for a in arrays]
    out = op(*leaves)
    w = rng.standard_normal(out.shape)

    def scalar_from(arrs):
        ls = [Tensor(a, dtype=np.float64) for a in arrs]
        return float((op(*ls).data * w).sum())

    weighted = T.tsum(out * Tensor(w, dtype=np.float64))
    weighted.backward()
    errs = []
    for slot, leaf in enumerate(leaves):
        def f(x, slot=slot):
            arrs = [a for a in arrays]
            arrs[slot] = x
            return scalar_from(arrs)

        fd = numerical_grad(f, arrays[slot], h=h)
        ad = leaf.grad if leaf.grad is not None else np.zeros_like(arrays[slot])
        errs.append(rel_error(ad, fd))
    assert max(errs) < tol, f"gradient mismatch: {errs}"
    return max(errs)


def dtw_bruteforce(a: np.ndarray, b: np.ndarray) -> float:
    """Exhaustive enumeration of monotone warping paths (tiny inputs only).

    Minimizes total cost; among minimal-cost paths takes the shortest, then
    normalizes cost by that path length.
    """
    n, m = a.shape[0], b.shape[0]
    d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2).astype(np.float64)
    best = [np.inf, np.inf]  # cost, length

    def walk(i, j, cost, length):
        cost = cost + d[i, j]
        length += 1
        if cost > best[0] + 1e-12:
            return
        if i == n - 1 and j == m - 1:
            if cost < best[0] - 1e-12 or (abs(cost - best[0]) <= 1e-12 and length < best[1]):
                best[0], best[1] = cost, length
            return
        if i + 1 < n and j + 1 < m:
            walk(i + 1, j + 1, cost, length)
        if i + 1 < n:
            walk(i + 1, j, cost, length)
        if j + 1 < m:
            walk(i, j + 1, cost, length)

    walk(0, 0, 0.0, 0)
    return best[0] / best[1]


def diversity_bruteforce(flats: list[np.ndarray]) -> float:
    pairs = list(itertools.combinations(range(len(flats)), 2))
    return sum(np.linalg.norm(flats[i] - flats[j]) for i, j in pairs) / len(pairs)
