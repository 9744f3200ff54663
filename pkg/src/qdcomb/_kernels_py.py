"""Pure-Python/numpy versions of the compiled kernels in ``_kernels.pyx``."""
import numpy as np

_CHUNK = 8192


def cma_run(xin, taps, mu, radius, n_sym, sps, out, err, adapt=True):
    n_taps = taps.shape[2]
    if xin.shape[1] < sps * (n_sym - 1) + n_taps:
        raise ValueError("input too short for the requested number of symbols")
    # sliding windows: view[k] = xin[:, sps*k : sps*k + n_taps]
    view = np.lib.stride_tricks.sliding_window_view(xin, n_taps, axis=1)[:, ::sps][:, :n_sym]
    view = view.transpose(1, 0, 2)
    flat_taps = taps.reshape(2, -1)
    for k in range(n_sym):
        xk = view[k].reshape(-1)
        y = flat_taps @ xk
        e = radius - (y.real**2 + y.imag**2)
        out[:, k] = y
        err[k] = 0.5 * (e[0] * e[0] + e[1] * e[1])
        if adapt:
            flat_taps += np.outer(mu * e * y, xk.conj())


def _window_metrics(sym, rot, levels, h_lo, h_hi, start, stop):
    """Window-summed squared slicing error for symbols ``start:stop``."""
    K = sym.size
    lo = max(0, start - h_lo)
    hi = min(K, stop + h_hi)
    r = sym[lo:hi, None] * rot[None, :]
    step = levels[1] - levels[0]

    def err(v):
        idx = np.clip(np.floor((v - levels[0]) / step + 0.5), 0, levels.size - 1).astype(np.intp)
        return v - levels[idx]

    d = err(r.real) ** 2 + err(r.imag) ** 2
    csum = np.zeros((d.shape[0] + 1, d.shape[1]))
    np.cumsum(d, axis=0, out=csum[1:])
    k = np.arange(start, stop)
    a = np.full(k.size, h_lo)
    b = np.full(k.size, h_hi)
    edge = (k - h_lo < 0) | (k + h_hi > K - 1)
    m = np.minimum(k, K - 1 - k)
    a[edge] = np.minimum(a[edge], m[edge])
    b[edge] = np.minimum(b[edge], m[edge])
    return csum[k + b + 1 - lo] - csum[k - a - lo]


def bps_unwrapped(sym, test_phases, levels, h_lo, h_hi, tie_rtol, symmetry):
    sym = np.asarray(sym, dtype=complex)
    test_phases = np.asarray(test_phases, dtype=float)
    levels = np.asarray(levels, dtype=float)
    K = sym.size
    rot = np.exp(1j * test_phases)
    best = np.empty(K, dtype=np.intp)
    tie_rows = []
    tie_sets = []
    for start in range(0, K, _CHUNK):
        stop = min(K, start + _CHUNK)
        metric = _window_metrics(sym, rot, levels, h_lo, h_hi, start, stop)
        idx = np.argmin(metric, axis=1)
        mmin = metric[np.arange(idx.size), idx]
        close = metric <= (mmin * tie_rtol + 1e-15 + mmin)[:, None]
        best[start:stop] = idx
        for row in np.flatnonzero(close.sum(axis=1) > 1):
            tie_rows.append(start + row)
            tie_sets.append(np.flatnonzero(close[row]))

    phi = test_phases[best]
    out = np.empty(K)
    ties = dict(zip(tie_rows, tie_sets))
    cursor = 0
    prev = None
    for k in sorted(ties) + [K]:
        if k > cursor:
            seg = phi[cursor:k]
            if prev is None:
                base = 0.0
            else:
                base = symmetry * np.floor((prev - seg[0]) / symmetry + 0.5)
            steps = np.floor((seg[:-1] - seg[1:]) / symmetry + 0.5)
            out[cursor:k] = seg + base + symmetry * np.concatenate(([0.0], np.cumsum(steps)))
            prev = out[k - 1]
        if k == K:
            break
        cands = test_phases[ties[k]]
        if prev is None:
            choice = cands[np.argmin(np.abs(cands))]
        else:
            unwrapped = cands + symmetry * np.floor((prev - cands) / symmetry + 0.5)
            choice = unwrapped[np.argmin(np.abs(unwrapped - prev))]
        out[k] = choice
        prev = choice
        cursor = k + 1
    return out
