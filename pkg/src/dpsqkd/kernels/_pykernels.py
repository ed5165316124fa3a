"""Pure numpy implementations of the hot kernels.

These mirror the Cython versions in ``_ckernels.pyx`` exactly: same
floating-point expressions, same comparison conventions, same random
consumption, so both backends produce bit-identical simulation output
for a given seed.
"""

import numpy as np


def candidate_clicks(code, g_tab, f_slot, u):
    """Indices of slots whose uniform draw falls under the click probability.

    Per slot i the probability is ``1 - g_tab[code[i]] * f_slot[i % n]``:
    ``g_tab`` holds the per-pattern survival factor (no-click probability
    before the per-slot stray factor), ``f_slot`` the per-slot stray
    survival factor over one window of n slots.
    """
    n = f_slot.shape[0]
    reps, rem = divmod(code.shape[0], n)
    if rem:
        raise ValueError("code length must be a multiple of the window size")
    p = 1.0 - g_tab[code.reshape(reps, n)] * f_slot
    return np.nonzero(u < p.reshape(-1))[0].astype(np.int64)


def dead_time_filter(t, dead, last):
    """Keep clicks separated by at least ``dead`` from the previous kept one.

    ``t`` must be nondecreasing.  Returns (kept indices, updated last time).
    Candidates are sparse, so the python loop below only touches actual
    click candidates, never the full slot stream.
    """
    m = t.shape[0]
    if dead <= 0.0:
        if m:
            last = float(t[m - 1])
        return np.arange(m, dtype=np.int64), last
    keep = []
    for i in range(m):
        ti = float(t[i])
        if ti - last >= dead:
            keep.append(i)
            last = ti
    return np.asarray(keep, dtype=np.int64), last


def lfsr_bits(order, tap, state, count):
    """Fibonacci LFSR output stream for the polynomial x^order + x^tap + 1.

    The register state is an integer whose bit ``j`` (from the LSB) is the
    output due at step ``order - 1 - j``, so the stream obeys
    ``o[m] = o[m - order] ^ o[m - tap]`` once the first ``order`` outputs
    (the state bits, MSB first) are laid down.  Returns the bits and the
    register state after ``count`` steps.
    """
    k = int(order)
    j = int(tap)
    total = count + k
    o = np.empty(total, dtype=np.uint8)
    for t in range(k):
        o[t] = (state >> (k - 1 - t)) & 1
    t = k
    while t < total:
        step = min(j, total - t)
        np.bitwise_xor(o[t - k:t - k + step], o[t - j:t - j + step],
                       out=o[t:t + step])
        t += step
    new_state = 0
    for b in range(k):
        new_state = (new_state << 1) | int(o[count + b])
    return o[:count].copy(), new_state
