"""Multinomial blending of relation matrices into one mixed input matrix.

Each unordered atom pair independently selects one of the three relation
sources (SPD / edge-path / 3D distance) with probabilities ``p``; the
selection is mirrored so masks are symmetric, and the diagonal is pinned
to SPD (all sources are degenerate at distance zero). Sampling uses the
keyed Philox stream from :mod:`relblend.rng`, so a mask is a pure function
of ``(n, p, seed, counter)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .relations import RelationSet
from .rng import TAG_BLEND_MASK, keyed_stream

SRC_SPD = 1
SRC_EDGE = 2
SRC_DIST = 3


def validate_probs(p) -> tuple[float, float, float]:
    """Check a selection probability triple: nonnegative, sums to 1."""
    if len(p) != 3:
        raise ValueError(f"expected 3 probabilities, got {len(p)}")
    p = (float(p[0]), float(p[1]), float(p[2]))
    if any(v < 0 for v in p):
        raise ValueError(f"negative probability in {p}")
    if abs(sum(p) - 1.0) > 1e-12:
        raise ValueError(f"probabilities must sum to 1, got {sum(p)}")
    return p


def renormalize_without_dist(p) -> tuple[float, float, float]:
    """Zero the distance slot and rescale; used for molecules without coordinates."""
    p = validate_probs(p)
    rest = p[0] + p[1]
    if rest <= 0:
        raise ValueError("cannot drop the distance source from p with p1 + p2 = 0")
    return (p[0] / rest, p[1] / rest, 0.0)


@dataclass(frozen=True)
class BlendMask:
    """Symmetric n x n selector with entries in {SPD, EDGE, DIST}."""

    selectors: np.ndarray  # (n, n) int64
    seed: int
    p: tuple[float, float, float]

    def __post_init__(self):
        s = self.selectors
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise ValueError("selector matrix must be square")
        if not np.array_equal(s, s.T):
            raise ValueError("selector matrix must be symmetric")
        if not np.all((s >= SRC_SPD) & (s <= SRC_DIST)):
            raise ValueError("selectors must be in {1, 2, 3}")
        validate_probs(self.p)

    @property
    def n(self) -> int:
        return self.selectors.shape[0]


@dataclass(frozen=True)
class BlendedRelation:
    """The mixed relation matrix together with the mask that produced it."""

    matrix: np.ndarray
    mask: BlendMask


def sample_blend_mask(n: int, p, seed: int, *counter: int) -> BlendMask:
    """Draw a symmetric blend mask; deterministic given (n, p, seed, counter).

    One uniform draw per unordered pair i < j is compared against the
    cumulative probabilities; the diagonal is SPD. Extra ``counter`` words
    (e.g. step, molecule id, batch slot) decorrelate masks across training
    without any shared state.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    p = validate_probs(p)
    sel = np.full((n, n), SRC_SPD, dtype=np.int64)
    n_pairs = n * (n - 1) // 2
    if n_pairs:
        u = keyed_stream(seed, TAG_BLEND_MASK, *counter).random(n_pairs)
        draws = np.where(u < p[0], SRC_SPD, np.where(u < p[0] + p[1], SRC_EDGE, SRC_DIST))
        iu, ju = np.triu_indices(n, k=1)
        sel[iu, ju] = draws
        sel[ju, iu] = draws
    return BlendMask(selectors=sel, seed=seed, p=p)


def blend_relations(rels: RelationSet, mask: BlendMask) -> BlendedRelation:
    """Entrywise selection among the three encodings according to the mask."""
    n = rels.spd_enc.shape[0]
    if mask.n != n:
        raise ValueError(f"mask is {mask.n} x {mask.n} but molecule has {n} atoms")
    uses_dist = bool(np.any(mask.selectors == SRC_DIST))
    if uses_dist and rels.dist_enc is None:
        raise ValueError("mask selects the distance source but no 3D encoding is present")
    out = np.where(mask.selectors == SRC_EDGE, rels.edge_enc, rels.spd_enc)
    if uses_dist:
        out = np.where(mask.selectors == SRC_DIST, rels.dist_enc, out)
    return BlendedRelation(matrix=out, mask=mask)


def blend_backward(grad_matrix: np.ndarray, mask: BlendMask) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Route the blended-matrix gradient to the selected sources.

    Returns per-source gradient matrices (spd, edge, dist); entries whose
    source was not selected receive exactly zero.
    """
    sel = mask.selectors
    g_spd = np.where(sel == SRC_SPD, grad_matrix, 0.0)
    g_edge = np.where(sel == SRC_EDGE, grad_matrix, 0.0)
    g_dist = np.where(sel == SRC_DIST, grad_matrix, 0.0)
    return g_spd, g_edge, g_dist
