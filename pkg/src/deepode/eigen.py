"""Dense nonsymmetric eigensolver for small matrices.

Pipeline: Parlett-Reinsch balancing, Householder reduction to upper
Hessenberg form, Francis double-shift QR for the eigenvalues, and inverse
iteration on the Hessenberg form for the right eigenvectors. Complex
conjugate pairs come out adjacent (the + imaginary part first). Intended for
the dimensions that arise here (<= a few dozen); no attempt at LAPACK-grade
performance.
"""

from __future__ import annotations

import numpy as np

from .errors import DecompositionError

_EPS = np.finfo(float).eps


def balance(A: np.ndarray):
    """Radix-2 diagonal similarity scaling; returns (A_balanced, d) with
    A_balanced = D^-1 A D, D = diag(d). Powers of two keep it exact."""
    A = np.array(A, dtype=float)
    n = A.shape[0]
    d = np.ones(n)
    radix = 2.0
    sqrdx = radix * radix
    done = False
    while not done:
        done = True
        for i in range(n):
            c = np.sum(np.abs(A[:, i])) - abs(A[i, i])
            r = np.sum(np.abs(A[i, :])) - abs(A[i, i])
            if c == 0.0 or r == 0.0:
                continue
            g = r / radix
            f = 1.0
            s = c + r
            while c < g:
                f *= radix
                c *= sqrdx
            g = r * radix
            while c > g:
                f /= radix
                c /= sqrdx
            if (c + r) / f < 0.95 * s:
                done = False
                d[i] *= f
                A[i, :] /= f
                A[:, i] *= f
    return A, d


def hessenberg(A: np.ndarray):
    """Householder reduction A = Q H Q^T with H upper Hessenberg, Q orthogonal."""
    H = np.array(A, dtype=float)
    n = H.shape[0]
    Q = np.eye(n)
    for k in range(n - 2):
        x = H[k + 1 :, k]
        norm_x = np.linalg.norm(x)
        if norm_x == 0.0:
            continue
        alpha = -np.copysign(norm_x, x[0] if x[0] != 0 else 1.0)
        v = x.copy()
        v[0] -= alpha
        vnorm = np.linalg.norm(v)
        if vnorm == 0.0:
            continue
        v /= vnorm
        H[k + 1 :, k:] -= 2.0 * np.outer(v, v @ H[k + 1 :, k:])
        H[:, k + 1 :] -= 2.0 * np.outer(H[:, k + 1 :] @ v, v)
        Q[:, k + 1 :] -= 2.0 * np.outer(Q[:, k + 1 :] @ v, v)
        H[k + 2 :, k] = 0.0
    return H, Q


def hessenberg_eigvals(H: np.ndarray, max_sweeps: int = 30) -> np.ndarray:
    """Francis double-shift QR on an upper Hessenberg matrix; eigenvalues only.

    Complex pairs are returned adjacent. Raises DecompositionError if a block
    refuses to converge within max_sweeps shifts.
    """
    H = np.array(H, dtype=float)
    n = H.shape[0]
    w = np.empty(n, dtype=complex)
    anorm = np.sum(np.abs(H))
    if anorm == 0.0:
        return np.zeros(n, dtype=complex)
    nn = n - 1
    t = 0.0
    while nn >= 0:
        its = 0
        while True:
            # Find a negligible subdiagonal element to split the problem.
            l = nn
            while l > 0:
                s = abs(H[l - 1, l - 1]) + abs(H[l, l])
                if s == 0.0:
                    s = anorm
                if abs(H[l, l - 1]) <= _EPS * s:
                    H[l, l - 1] = 0.0
                    break
                l -= 1
            x = H[nn, nn]
            if l == nn:
                w[nn] = x + t
                nn -= 1
                break
            y = H[nn - 1, nn - 1]
            wv = H[nn, nn - 1] * H[nn - 1, nn]
            if l == nn - 1:
                p = 0.5 * (y - x)
                q = p * p + wv
                z = np.sqrt(abs(q))
                x += t
                if q >= 0.0:
                    z = p + np.copysign(z, p if p != 0 else 1.0)
                    w[nn - 1] = w[nn] = x + z
                    if z != 0.0:
                        w[nn] = x - wv / z
                else:
                    w[nn - 1] = complex(x + p, z)
                    w[nn] = complex(x + p, -z)
                nn -= 2
                break
            if its == max_sweeps:
                raise DecompositionError(f"QR iteration failed to converge on a block of size {nn - l + 1}")
            if its == 10 or its == 20:
                # Exceptional shift to break symmetric-cycle stalls.
                t += x
                for i in range(nn + 1):
                    H[i, i] -= x
                s = abs(H[nn, nn - 1]) + abs(H[nn - 1, nn - 2])
                y = x = 0.75 * s
                wv = -0.4375 * s * s
            its += 1
            # First column of (H - aI)(H - bI) and search for a small
            # 2x2 window to start the bulge chase.
            m = nn - 2
            while m >= l:
                z = H[m, m]
                r = x - z
                s = y - z
                p = (r * s - wv) / H[m + 1, m] + H[m, m + 1]
                q = H[m + 1, m + 1] - z - r - s
                r = H[m + 2, m + 1]
                s = abs(p) + abs(q) + abs(r)
                p /= s
                q /= s
                r /= s
                if m == l:
                    break
                u = abs(H[m, m - 1]) * (abs(q) + abs(r))
                v = abs(p) * (abs(H[m - 1, m - 1]) + abs(z) + abs(H[m + 1, m + 1]))
                if u <= _EPS * v:
                    break
                m -= 1
            for i in range(m + 2, nn + 1):
                H[i, i - 2] = 0.0
            for i in range(m + 3, nn + 1):
                H[i, i - 3] = 0.0
            # Double QR sweep on rows l..nn, columns m..nn.
            for k in range(m, nn):
                if k != m:
                    p = H[k, k - 1]
                    q = H[k + 1, k - 1]
                    r = H[k + 2, k - 1] if k != nn - 1 else 0.0
                    x = abs(p) + abs(q) + abs(r)
                    if x != 0.0:
                        p /= x
                        q /= x
                        r /= x
                s = np.copysign(np.sqrt(p * p + q * q + r * r), p if p != 0 else 1.0)
                if s == 0.0:
                    continue
                if k == m:
                    if l != m:
                        H[k, k - 1] = -H[k, k - 1]
                else:
                    H[k, k - 1] = -s * x
                p += s
                x = p / s
                y = q / s
                z = r / s
                q /= p
                r /= p
                for j in range(k, nn + 1):
                    p = H[k, j] + q * H[k + 1, j]
                    if k != nn - 1:
                        p += r * H[k + 2, j]
                        H[k + 2, j] -= p * z
                    H[k + 1, j] -= p * y
                    H[k, j] -= p * x
                for i in range(l, min(nn, k + 3) + 1):
                    p = x * H[i, k] + y * H[i, k + 1]
                    if k != nn - 1:
                        p += z * H[i, k + 2]
                        H[i, k + 2] -= p * r
                    H[i, k + 1] -= p * q
                    H[i, k] -= p
    return _pair_order(w)


def _pair_order(w: np.ndarray) -> np.ndarray:
    """Normalize conjugate-pair ordering: positive imaginary part first."""
    w = w.copy()
    i = 0
    while i < w.size - 1:
        if w[i].imag != 0.0 and np.isclose(w[i].conjugate(), w[i + 1]):
            if w[i].imag < 0:
                w[i], w[i + 1] = w[i + 1], w[i]
            i += 2
        else:
            i += 1
    return w


def _inverse_iteration(H: np.ndarray, lam: complex, starts: int = 3, seed: int = 0) -> np.ndarray:
    """Right eigenvector of H for eigenvalue lam by shifted inverse iteration."""
    n = H.shape[0]
    scale = max(np.max(np.abs(H)), abs(lam), 1.0)
    shift = lam + scale * _EPS ** 0.75
    M = H.astype(complex) - shift * np.eye(n)
    hnorm = max(np.max(np.abs(H)), 1.0)
    best = None
    best_res = np.inf
    for attempt in range(starts):
        rng = np.random.default_rng(0xD1A6 + 101 * seed + attempt)
        v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        v /= np.linalg.norm(v)
        for _ in range(3):
            try:
                v = np.linalg.solve(M, v)
            except np.linalg.LinAlgError:
                M = H.astype(complex) - (shift + scale * _EPS**0.5) * np.eye(n)
                continue
            v /= np.linalg.norm(v)
        res = np.linalg.norm(H @ v - lam * v) / hnorm
        if res < best_res:
            best, best_res = v, res
        if res < 1e-11:
            break
    return best


def eig(A: np.ndarray):
    """Eigenvalues and right eigenvectors of a real square matrix.

    Returns (w, V) with V[:, i] the unit eigenvector for w[i]; conjugate pairs
    adjacent, second of a pair the conjugate of the first. Eigenvector phase is
    fixed by making the largest-magnitude component real and positive.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise DecompositionError("matrix must be square")
    if not np.all(np.isfinite(A)):
        raise DecompositionError("matrix has non-finite entries")
    if n == 1:
        return A[0, 0].astype(complex).reshape(1), np.ones((1, 1), dtype=complex)
    B, d = balance(A)
    H, Q = hessenberg(B)
    w = hessenberg_eigvals(H)
    V = np.empty((n, n), dtype=complex)
    # Eigenvalues that coincide numerically share an invariant subspace; give
    # each member a different start and orthogonalize within the group.
    scale = max(np.max(np.abs(w)), 1.0)
    done = np.zeros(n, dtype=bool)
    i = 0
    while i < n:
        if done[i]:
            i += 1
            continue
        if w[i].imag > 0 and i + 1 < n and np.isclose(w[i + 1], w[i].conjugate()):
            v = _inverse_iteration(H, w[i])
            V[:, i] = v
            V[:, i + 1] = v.conjugate()
            done[i] = done[i + 1] = True
            i += 2
            continue
        group = [j for j in range(n) if not done[j] and abs(w[j] - w[i]) <= 1e-8 * scale and w[j].imag == w[i].imag]
        basis = []
        for j in group:
            v = _inverse_iteration(H, w[j], seed=len(basis))
            for u in basis:
                v = v - (u.conjugate() @ v) * u
            nv = np.linalg.norm(v)
            # A vanishing residual after orthogonalization means the eigenspace
            # is smaller than the group (defective matrix); keep the raw column
            # and let the caller's residual check reject the decomposition.
            if nv > 1e-8:
                v = v / nv
            basis.append(v)
            V[:, j] = v
            done[j] = True
        i += 1
    # Back-transform: Hessenberg -> balanced -> original coordinates.
    V = Q @ V
    V = d[:, None] * V
    norms = np.linalg.norm(V, axis=0, keepdims=True)
    V /= np.maximum(norms, 1e-300)
    for j in range(n):
        kmax = np.argmax(np.abs(V[:, j]))
        pivot = V[kmax, j]
        if pivot != 0 and np.isfinite(pivot):
            V[:, j] *= np.abs(pivot) / pivot
    return w, V
