"""Parks-McClellan (Remez exchange) design of linear-phase lowpass FIR filters.

The approximation is carried out on ``x = cos(w)`` with barycentric Lagrange
interpolation.  Even-length (type II) filters are handled by factoring
``cos(w/2)`` out of the amplitude response, so both parities reduce to a
cosine polynomial fit.
"""

import numpy as np

from .errors import FilterDesignError


def _bary_weights(x):
    # scaled by 2 like the original Fortran code to stay away from underflow
    diff = 2.0 * (x[:, None] - x[None, :])
    np.fill_diagonal(diff, 1.0)
    return 1.0 / np.prod(diff, axis=1)


def _bary_eval(xk, yk, wk, x):
    d = x[:, None] - xk[None, :]
    exact = np.isclose(d, 0.0, rtol=0.0, atol=1e-14)
    d[exact] = 1.0
    t = wk[None, :] / d
    out = (t @ yk) / t.sum(axis=1)
    rows, cols = np.nonzero(exact)
    out[rows] = yk[cols]
    return out


def _local_extrema(err, band_id):
    """Indices of signed local extrema of ``err`` in each band (edges included).

    A positive point qualifies when no in-band neighbour is larger, a negative
    one when no neighbour is smaller.  Testing |err| instead would miss a
    small band-edge value sitting next to a large value of opposite sign.
    """
    idx = []
    for b in np.unique(band_id):
        sel = np.flatnonzero(band_id == b)
        e = err[sel]
        s = np.sign(e)
        for j in range(len(sel)):
            if s[j] == 0:
                continue
            v = s[j] * e[j]
            left = s[j] * e[j - 1] if j > 0 else -np.inf
            right = s[j] * e[j + 1] if j < len(sel) - 1 else -np.inf
            # plateaus contribute one point
            if (v >= left and v > right) or (v > left and v >= right):
                idx.append(sel[j])
    return np.array(idx, dtype=int)


def _alternating(idx, err, r):
    """Reduce candidate extrema to ``r + 1`` points of alternating sign."""
    keep = []
    for i in idx:
        if keep and np.sign(err[i]) == np.sign(err[keep[-1]]):
            if abs(err[i]) > abs(err[keep[-1]]):
                keep[-1] = i
        else:
            keep.append(i)
    while len(keep) > r + 1:
        # drop the weaker endpoint; alternation is preserved
        if abs(err[keep[0]]) < abs(err[keep[-1]]):
            keep.pop(0)
        else:
            keep.pop()
    return np.array(keep, dtype=int)


def remez_lowpass(num_taps, pass_edge, stop_edge, stop_weight,
                  grid_density=16, max_iter=20, tol=1e-4):
    """Minimax lowpass design.

    Edges are in cycles/sample.  The passband has unit gain and weight one;
    the stopband has zero gain and weight ``stop_weight``.  Returns the
    symmetric impulse response and the final weighted deviation ``delta``
    (the passband ripple; stopband ripple is ``delta / stop_weight``).

    Raises FilterDesignError if the exchange does not settle within
    ``max_iter`` iterations.
    """
    n = int(num_taps)
    odd = n % 2 == 1
    r = (n + 1) // 2 if odd else n // 2
    wp = 2 * np.pi * pass_edge
    ws = 2 * np.pi * stop_edge
    w_end = np.pi if odd else np.pi * (1.0 - 1.0 / (grid_density * r))

    n_grid = grid_density * (r + 1)
    width = wp + (w_end - ws)
    n_pass = max(int(round(n_grid * wp / width)), 2)
    n_stop = max(n_grid - n_pass, 2)
    w = np.concatenate([np.linspace(0.0, wp, n_pass), np.linspace(ws, w_end, n_stop)])
    band_id = np.concatenate([np.zeros(n_pass, int), np.ones(n_stop, int)])
    desired = np.where(band_id == 0, 1.0, 0.0)
    weight = np.where(band_id == 0, 1.0, float(stop_weight))
    q = np.ones_like(w) if odd else np.cos(w / 2.0)
    d_mod = desired / q
    w_mod = weight * q
    x = np.cos(w)

    # Chebyshev nodes cos(pi*i/r) in x are uniform in w; place them uniformly
    # over the band union (transition band excluded) and snap to the grid
    ext = np.round(np.linspace(0, len(w) - 1, r + 1)).astype(int)

    sign = (-1.0) ** np.arange(r + 1)
    converged = False
    for _ in range(max_iter):
        xe = x[ext]
        a = _bary_weights(xe)
        delta = np.dot(a, d_mod[ext]) / np.dot(a, sign / w_mod[ext])
        c = d_mod[ext] - sign * delta / w_mod[ext]
        xk, ck = xe[:-1], c[:-1]
        bk = _bary_weights(xk)
        p = _bary_eval(xk, ck, bk, x)
        err = w_mod * (d_mod - p)
        cand = _local_extrema(err, band_id)
        new_ext = _alternating(cand, err, r)
        emax = np.max(np.abs(err))
        if len(new_ext) < r + 1:
            raise FilterDesignError(
                f"exchange lost alternation ({len(new_ext)} of {r + 1} extrema)")
        ext = new_ext
        if (emax - abs(delta)) / emax < tol:
            converged = True
            break
    if not converged:
        raise FilterDesignError(
            f"Remez exchange did not converge in {max_iter} iterations")

    # recover cosine-series coefficients from the interpolating polynomial
    n_fit = 4 * r
    wf = np.pi * (np.arange(n_fit) + 0.5) / n_fit
    amp = _bary_eval(xk, ck, bk, np.cos(wf)) * (1.0 if odd else np.cos(wf / 2.0))
    k = np.arange(r)
    basis = np.cos(np.outer(wf, k if odd else k + 0.5))
    coef, *_ = np.linalg.lstsq(basis, amp, rcond=None)

    h = np.zeros(n)
    if odd:
        mid = r - 1
        h[mid] = coef[0]
        h[mid + 1:] = coef[1:] / 2.0
        h[:mid] = h[mid + 1:][::-1]
    else:
        half = coef[::-1] / 2.0
        h[:r] = half
        h[r:] = half[::-1]
    return h, abs(delta)
