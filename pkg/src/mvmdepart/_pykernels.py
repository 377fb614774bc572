"""Pure-Python (numpy) kernels. Same contract as the compiled ``_ckernels``."""

from __future__ import annotations

import math

import numpy as np

from .distribution import DROP_MASS, drop_light, merge_atoms


def lattice_two_state(d, v1, v2, p, q, delta, phase):
    """Recombining binomial lattice for a two-state link.

    Returns unmerged ``(times, probs)`` of emitted atoms. Level ``m`` holds one
    node per count ``j`` of incident-speed steps among the ``m + 1`` steps taken,
    split by the phase of the last step.
    """
    v0 = v1 if phase == 1 else v2
    if v0 * delta >= d:
        return np.array([d / v0]), np.array([1.0])
    # node arrays indexed by j = number of steps at v2
    pf = np.zeros(2)
    pi = np.zeros(2)
    if phase == 1:
        pf[0] = 1.0
    else:
        pi[1] = 1.0
    out_t: list[np.ndarray] = []
    out_p: list[np.ndarray] = []
    m = 0
    while True:
        j = np.arange(m + 2)
        dist = delta * ((m + 1 - j) * v1 + j * v2)
        alive = (pf > 0) | (pi > 0)
        if not alive.any():
            break
        c1 = pf * p + pi * (1.0 - q)
        c2 = pf * (1.0 - p) + pi * q
        d1 = delta * ((m + 2 - j) * v1 + j * v2)
        d2 = delta * ((m + 1 - j) * v1 + (j + 1) * v2)
        done1 = alive & (d1 >= d)
        done2 = alive & (d2 >= d)
        if done1.any():
            out_t.append((m + 1) * delta + (d - dist[done1]) / v1)
            out_p.append(c1[done1])
        if done2.any():
            out_t.append((m + 1) * delta + (d - dist[done2]) / v2)
            out_p.append(c2[done2])
        nf = np.zeros(m + 3)
        ni = np.zeros(m + 3)
        keep1 = alive & ~done1
        keep2 = alive & ~done2
        nf[: m + 2][keep1] = c1[keep1]
        ni[1 : m + 3][keep2] = c2[keep2]
        pf, pi = nf, ni
        m += 1
    return np.concatenate(out_t), np.concatenate(out_p)


def compose(t, p, w, lt, lp, offsets):
    """All products of path atoms with per-phase link atoms.

    ``w[i, j]`` is the probability of entering the link in phase ``j`` given the
    path atom ``i``; the link atoms for phase ``j`` are ``lt/lp[offsets[j]:offsets[j+1]]``.
    """
    counts = np.diff(offsets)
    seg = np.repeat(np.arange(len(counts)), counts)
    times = (t[:, None] + lt[None, :]).ravel()
    probs = (p[:, None] * w[:, seg] * lp[None, :]).ravel()
    return times, probs


def rebin_sorted(times, probs, bins, upper, pin_mass):
    """Equal-width rebin of sorted, merged atoms (``len(times) > bins``).

    Atoms with probability at least ``pin_mass`` (when positive) keep their own
    time; the rest are pooled into ``bins`` intervals over the full support.
    Interior edges belong to the lower bin.
    """
    lo, hi = times[0], times[-1]
    width = (hi - lo) / bins
    if not width > 0:
        return times[:1].copy(), np.array([probs.sum()])
    if pin_mass > 0:
        pinned = probs >= pin_mass
        pt, pp = times[pinned], probs[pinned]
        rt, rp = times[~pinned], probs[~pinned]
    else:
        pt = pp = np.empty(0)
        rt, rp = times, probs
    idx = np.ceil((rt - lo) / width).astype(np.int64) - 1
    np.clip(idx, 0, bins - 1, out=idx)
    mass = np.bincount(idx, weights=rp, minlength=bins)
    used = mass > 0
    if upper:
        reps = lo + (np.arange(bins) + 1) * width
        reps[-1] = hi
    else:
        tsum = np.bincount(idx, weights=rp * rt, minlength=bins)
        reps = np.divide(tsum, mass, out=np.zeros(bins), where=used)
    return merge_atoms(np.concatenate((pt, reps[used])), np.concatenate((pp, mass[used])))


def compose_rebin(t, p, w, lt, lp, offsets, bins, upper, pin_mass):
    times, probs = compose(t, p, w, lt, lp, offsets)
    times, probs = drop_light(times, probs, DROP_MASS)
    times, probs = merge_atoms(times, probs)
    if bins and times.size > bins:
        times, probs = rebin_sorted(times, probs, bins, upper, pin_mass)
    return times, probs


def lattice_steps(d, vmin, delta):
    return math.ceil(d / (vmin * delta))
