"""Shared test utilities: a central finite-difference gradient checker and
an independent brute-force triplet decoder used as an oracle."""

from __future__ import annotations

from collections import Counter

import numpy as np
import torch

from astetag.corpus import Sentiment, Span, Triplet


def fd_gradient_check(loss_fn, params, n_coords=60, eps=1e-6, seed=0):
    """Compare analytic gradients of ``loss_fn()`` against central finite
    differences on randomly chosen parameter coordinates.

    Everything must already be double precision. Returns the worst relative
    error over the sampled coordinates, using max(1, |a|, |b|) in the
    denominator so near-zero gradients do not blow it up.
    """
    value = loss_fn()
    grads = torch.autograd.grad(value, params)
    sizes = [p.numel() for p in params]
    total = sum(sizes)
    rng = np.random.default_rng(seed)
    coords = rng.choice(total, size=min(n_coords, total), replace=False)
    worst = 0.0
    for flat_index in sorted(int(c) for c in coords):
        k = 0
        offset = flat_index
        while offset >= sizes[k]:
            offset -= sizes[k]
            k += 1
        param = params[k]
        with torch.no_grad():
            original = param.view(-1)[offset].item()
            h = eps * max(1.0, abs(original))
            param.view(-1)[offset] = original + h
            up = float(loss_fn())
            param.view(-1)[offset] = original - h
            down = float(loss_fn())
            param.view(-1)[offset] = original
        fd = (up - down) / (2.0 * h)
        analytic = float(grads[k].reshape(-1)[offset])
        err = abs(fd - analytic) / max(1.0, abs(fd), abs(analytic))
        worst = max(worst, err)
    return worst


def oracle_decode(logits1d, logits2d) -> frozenset[Triplet]:
    """Naive reference decoder: plain-Python run scanning, naive vote
    counting, same tie rules (logit mass over a class's voting cells, then
    Pos > Neg > Neu)."""
    logits1d = np.asarray(logits1d).tolist()
    logits2d = np.asarray(logits2d).tolist()
    n = len(logits1d)

    def first_argmax(values):
        best = 0
        for c in range(1, len(values)):
            if values[c] > values[best]:
                best = c
        return best

    tags1 = [first_argmax(logits1d[i]) for i in range(n)]
    tags2 = [[first_argmax(logits2d[i][j]) for j in range(n)] for i in range(n)]

    def runs(tag):
        found = []
        i = 0
        while i < n:
            if tags1[i] == tag:
                j = i
                while j + 1 < n and tags1[j + 1] == tag:
                    j += 1
                found.append((i, j))
                i = j + 1
            else:
                i += 1
        return found

    triplets = set()
    for a_start, a_end in runs(0):
        for o_start, o_end in runs(1):
            votes = Counter()
            mass = {}
            for i in range(a_start, a_end + 1):
                for j in range(o_start, o_end + 1):
                    lo, hi = min(i, j), max(i, j)
                    cls = tags2[lo][hi]
                    if cls == 3:
                        continue
                    votes[cls] += 1
                    mass[cls] = mass.get(cls, 0.0) + logits2d[lo][hi][cls]
            if not votes:
                continue
            top = max(votes.values())
            tied = [c for c in (0, 1, 2) if votes.get(c, 0) == top]
            if len(tied) > 1:
                best_mass = max(mass[c] for c in tied)
                tied = [c for c in tied if mass[c] == best_mass]
                winner = next(c for c in (0, 2, 1) if c in tied)
            else:
                winner = tied[0]
            triplets.add(
                Triplet(Span(a_start, a_end), Span(o_start, o_end), Sentiment(winner))
            )
    return frozenset(triplets)


def random_logit_case(rng, max_n=8):
    """A random decoder input; half the draws are integer-quantized so that
    argmax, vote-count, and logit-mass ties actually occur."""
    n = int(rng.integers(1, max_n + 1))
    if rng.random() < 0.5:
        logits1d = rng.normal(size=(n, 3))
        logits2d = rng.normal(size=(n, n, 4))
    else:
        logits1d = rng.integers(0, 2, size=(n, 3)).astype(float)
        logits2d = rng.integers(0, 2, size=(n, n, 4)).astype(float)
    return logits1d, logits2d
