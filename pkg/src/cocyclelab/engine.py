"""Batched evolution of QR-reorthogonalized cocycle products.

A batch is a grid of ``P`` spectral parameters times ``S`` orbits. Orbits may
be shared by all points (one omega, many z) or given per point. Every member
is advanced independently, so splitting the batch across threads does not
change any number.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .drivers import ConstantModel, OrbitSeed, PotentialModel, orbit_potentials
from .symplectic import apply_transfer, compound_matrix, reorthonormalize, standard_frame

_MAX_BUFFER = 1 << 21  # floats of potential buffered per chunk


@dataclass
class Run:
    logstretch: np.ndarray  # (P, S, m)
    snapshots: np.ndarray | None  # (len(record), P, S, m)
    record: tuple[int, ...]
    frame: np.ndarray  # (P, S, 2W, m)
    n: int


def _seed_table(seeds, P: int):
    """Unique orbit list and a ``(P, S)`` index into it."""
    if len(seeds) and isinstance(seeds[0], (list, tuple)) and not isinstance(seeds[0], OrbitSeed):
        rows = [list(r) for r in seeds]
        if len(rows) != P:
            raise ValueError("per-point seeds must have one row per point")
    else:
        rows = [list(seeds)] * P
    S = len(rows[0])
    if S == 0 or any(len(r) != S for r in rows):
        raise ValueError("every point needs the same positive number of orbits")
    uniq: dict[OrbitSeed, int] = {}
    idx = np.empty((P, S), dtype=np.intp)
    for p, row in enumerate(rows):
        for s, sd in enumerate(row):
            if isinstance(sd, (int, np.integer)):
                sd = OrbitSeed(int(sd))
            idx[p, s] = uniq.setdefault(sd, len(uniq))
    return list(uniq), idx


def _potential_chunks(model, uniq, idx, n, start_site=1):
    """Yield ``(step0, V)`` with ``V`` of shape ``(B, cnt, W, W)`` or ``(cnt, W, W)`` when shared."""
    W = model.W
    B = idx.size
    if isinstance(model, ConstantModel):
        cnt = n
        yield 0, np.broadcast_to(model.V, (cnt, W, W)), True
        return
    shared = len(uniq) == 1
    per = (1 if shared else B) * W * W
    chunk = max(1, min(4096, _MAX_BUFFER // per))
    for start in range(0, n, chunk):
        cnt = min(chunk, n - start)
        pots = np.stack([orbit_potentials(model, s, start_site + start, cnt) for s in uniq])
        if shared:
            yield start, pots[0], True
        else:
            yield start, pots[idx], False


def _evolve_block(model, z, uniq, idx, n, frame, stride, record):
    B = idx.size
    logs = np.zeros((B, frame.shape[-1]))
    snaps = np.zeros((len(record), B, frame.shape[-1]))
    rec = {r: i for i, r in enumerate(record)}
    zz = np.asarray(z, dtype=complex)
    for start, pots, shared in _potential_chunks(model, uniq, idx, n):
        cnt = pots.shape[0] if shared else pots.shape[1]
        for t in range(cnt):
            step = start + t + 1
            V = pots[t] if shared else pots[:, t]
            frame = apply_transfer(frame, zz, V)
            if step % stride == 0 or step == n or step in rec:
                frame, ld = reorthonormalize(frame)
                logs += ld
            if step in rec:
                snaps[rec[step]] = logs
    return logs, snaps, frame


def evolve(
    model: PotentialModel,
    z,
    seeds: Sequence,
    n: int,
    *,
    m: int | None = None,
    frame=None,
    stride: int = 1,
    record: Sequence[int] = (),
    threads: int = 1,
) -> Run:
    """Advance ``P x S`` cursors ``n`` steps from ``frame`` (default: standard frame)."""
    if n < 1:
        raise ValueError("n must be positive")
    if not 1 <= stride <= 10:
        raise ValueError("re-orthogonalization stride must lie in 1..10")
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    if z.ndim != 1:
        raise ValueError("z must be a scalar or a 1-d array")
    P = z.size
    uniq, idx = _seed_table(seeds, P)
    S = idx.shape[1]
    W = model.W
    record = tuple(sorted(set(int(r) for r in record)))
    if record and not (1 <= record[0] and record[-1] <= n):
        raise ValueError("record steps must lie in 1..n")
    f0 = standard_frame(W, m) if frame is None else np.asarray(frame, dtype=complex)
    if f0.ndim != 2 or f0.shape[0] != 2 * W:
        raise ValueError("initial frame must be a 2W x m matrix")
    mm = f0.shape[1]
    zz = np.repeat(z, S)
    flat_idx = idx.reshape(-1)

    def block(sel: slice):
        sub = flat_idx[sel]
        # re-index so shared orbits stay shared inside the block
        used, local = np.unique(sub, return_inverse=True)
        fr = np.broadcast_to(f0, (sub.size, 2 * W, mm)).copy()
        return _evolve_block(model, zz[sel], [uniq[u] for u in used], local.reshape(-1), n, fr, stride, record)

    B = P * S
    threads = max(1, min(int(threads), B))
    bounds = np.linspace(0, B, threads + 1).astype(int)
    slices = [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]
    if threads == 1:
        parts = [block(slices[0])]
    else:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(block, slices))
    logs = np.concatenate([p[0] for p in parts]).reshape(P, S, mm)
    snaps = np.concatenate([p[1] for p in parts], axis=1).reshape(len(record), P, S, mm)
    fr = np.concatenate([p[2] for p in parts]).reshape(P, S, 2 * W, mm)
    return Run(logs, snaps if record else None, record, fr, n)


def wedge_log_norms(
    model: PotentialModel,
    z,
    seeds: Sequence,
    record: Sequence[int],
    ks: Sequence[int],
) -> np.ndarray:
    """Exact ``log ||Phi_n^(wedge k)|| = sum_{j<=k} log s_j(Phi_n)`` at steps ``record``.

    The k-th compound of the product is accumulated as a product of compounds
    with max-entry rescaling, so the top singular value of each compound is
    resolved to full relative precision at any ``n``.
    Returns shape ``(len(record), P, S, len(ks))``.
    """
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    P = z.size
    uniq, idx = _seed_table(seeds, P)
    S = idx.shape[1]
    W = model.W
    record = tuple(sorted(set(int(r) for r in record)))
    n = record[-1]
    rec = {r: i for i, r in enumerate(record)}
    B = P * S
    zz = np.repeat(z, S)[:, None, None]
    flat_idx = idx.reshape(-1)
    out = np.zeros((len(record), B, len(ks)))
    mats = []
    for k in ks:
        if not 1 <= k <= 2 * W:
            raise ValueError(f"k must lie in 1..{2 * W}")
        d = compound_matrix(np.eye(2 * W), k).shape[0]
        mats.append(np.broadcast_to(np.eye(d, dtype=complex), (B, d, d)).copy())
    scale = np.zeros((len(ks), B))
    I = np.eye(W)
    for start, pots, shared in _potential_chunks(model, uniq, flat_idx, n):
        cnt = pots.shape[0] if shared else pots.shape[1]
        for t in range(cnt):
            step = start + t + 1
            V = pots[t] if shared else pots[:, t]
            T = np.zeros((B, 2 * W, 2 * W), dtype=complex)
            T[:, :W, :W] = zz * I - V
            T[:, :W, W:] = -I
            T[:, W:, :W] = I
            for a, k in enumerate(ks):
                M = compound_matrix(T, k) @ mats[a]
                mx = np.max(np.abs(M), axis=(-2, -1))
                mats[a] = M / mx[:, None, None]
                scale[a] += np.log(mx)
            if step in rec:
                for a in range(len(ks)):
                    s1 = np.linalg.norm(mats[a], ord=2, axis=(-2, -1))
                    out[rec[step], :, a] = np.log(s1) + scale[a]
    return out.reshape(len(record), P, S, len(ks))
