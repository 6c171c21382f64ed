"""Single-shot associative memory ``z = Proj.T @ sep(sim(M, q))``.

Similarity and separation functions are chosen by name; the capacity sweep
stores random bipolar patterns and measures how often a corrupted query
retrieves its source pattern (componentwise sign match).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import as_matrix, frobenius_norm

SIMILARITIES = ("dot", "neg_euclidean", "neg_manhattan")
SEPARATIONS = ("identity", "poly", "softmax", "threshold")


@dataclass(frozen=True)
class MemoryBank:
    patterns: np.ndarray
    projections: np.ndarray | None = None

    def __post_init__(self):
        pats = as_matrix(self.patterns, "patterns")
        proj = pats if self.projections is None else as_matrix(self.projections, "projections")
        if proj.shape[0] != pats.shape[0]:
            raise ValueError(
                f"{pats.shape[0]} patterns but {proj.shape[0]} projection rows"
            )
        object.__setattr__(self, "patterns", pats)
        object.__setattr__(self, "projections", proj)


@dataclass(frozen=True)
class UHNConfig:
    similarity: str = "dot"
    separation: str = "softmax"
    degree: int = 2
    beta: float = 1.0
    theta: float = 0.0

    def __post_init__(self):
        if self.similarity not in SIMILARITIES:
            raise ValueError(f"unknown similarity {self.similarity!r}; choose from {SIMILARITIES}")
        if self.separation not in SEPARATIONS:
            raise ValueError(f"unknown separation {self.separation!r}; choose from {SEPARATIONS}")
        if self.separation == "poly" and (int(self.degree) != self.degree or self.degree < 1):
            raise ValueError(f"poly degree must be an integer >= 1, got {self.degree}")
        if self.separation == "softmax" and not self.beta > 0:
            raise ValueError(f"softmax beta must be positive, got {self.beta}")

    @classmethod
    def parse(cls, similarity: str, separation: str) -> "UHNConfig":
        """Build from CLI-style strings such as ``"softmax:5"`` or ``"poly:3"``."""
        name, _, arg = separation.partition(":")
        name = name.strip().lower()
        kwargs = {}
        if name == "poly":
            kwargs["degree"] = int(arg) if arg else 2
        elif name == "softmax":
            kwargs["beta"] = float(arg) if arg else 1.0
        elif name == "threshold":
            kwargs["theta"] = float(arg) if arg else 0.0
        elif arg:
            raise ValueError(f"separation {name!r} takes no parameter")
        return cls(similarity=similarity.strip().lower(), separation=name, **kwargs)

    @property
    def label(self) -> str:
        if self.separation == "poly":
            return f"poly:{self.degree}"
        if self.separation == "softmax":
            return f"softmax:{self.beta:g}"
        if self.separation == "threshold":
            return f"threshold:{self.theta:g}"
        return self.separation


def similarity(bank: MemoryBank, q, kind: str = "dot") -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    m = bank.patterns
    if q.shape[-1] != m.shape[1]:
        raise ValueError(f"query has length {q.shape[-1]}, patterns have {m.shape[1]}")
    if kind == "dot":
        return q @ m.T
    diff = q[..., None, :] - m
    if kind == "neg_euclidean":
        return -np.sqrt(np.sum(diff * diff, axis=-1))
    if kind == "neg_manhattan":
        return -np.sum(np.abs(diff), axis=-1)
    raise ValueError(f"unknown similarity {kind!r}")


def separation(scores, cfg: UHNConfig) -> np.ndarray:
    """Sharpen scores along the last axis.

    ``poly`` shifts each score vector to a zero minimum before taking the
    power so that even degrees preserve ranking. A vector of tied scores has
    no minimum to rank against and gets equal unit weights. Softmax sums
    its terms in sorted order, which makes it exactly permutation-equivariant.
    """
    x = np.asarray(scores, dtype=np.float64)
    kind = cfg.separation
    if kind == "identity":
        return x.copy()
    if kind == "poly":
        shifted = x - np.min(x, axis=-1, keepdims=True)
        tied = np.all(shifted == 0, axis=-1, keepdims=True)
        shifted = np.where(tied, 1.0, shifted)
        return shifted * np.abs(shifted) ** (cfg.degree - 1)
    if kind == "softmax":
        e = np.exp(cfg.beta * (x - np.max(x, axis=-1, keepdims=True)))
        return e / np.sum(np.sort(e, axis=-1), axis=-1, keepdims=True)
    if kind == "threshold":
        return np.maximum(0.0, x - cfg.theta)
    raise ValueError(f"unknown separation {kind!r}")


def retrieve(bank: MemoryBank, q, cfg: UHNConfig) -> np.ndarray:
    weights = separation(similarity(bank, q, cfg.similarity), cfg)
    return weights @ bank.projections


@dataclass
class CapacityReport:
    visible_n: int
    separation_order: str
    stored_counts: list[int]
    retrieval_rates: list[float]
    corruption_fraction: float
    similarity: str = "dot"
    trials: int = 0
    seed: int = 0


def corrupt(pattern: np.ndarray, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Flip the sign of ``round(fraction * d)`` uniformly chosen components."""
    q = pattern.copy()
    flips = int(round(fraction * q.shape[-1]))
    idx = rng.choice(q.shape[-1], size=flips, replace=False)
    q[idx] = -q[idx]
    return q


def capacity_sweep(dim: int, stored_counts, corruption: float, cfg: UHNConfig,
                   trials: int = 100, seed: int = 0) -> CapacityReport:
    """Retrieval success rate versus number of stored patterns.

    Trial ``t`` draws its patterns and corruptions from ``seed ^ t``. Within a
    trial, smaller banks are prefixes of the largest one and every stored
    pattern is queried once, so runs with different configs see identical
    patterns and queries.
    """
    stored_counts = [int(c) for c in stored_counts]
    if dim < 8:
        raise ValueError("dim must be at least 8")
    if trials < 10:
        raise ValueError("trials must be at least 10")
    if not stored_counts or min(stored_counts) < 1:
        raise ValueError("stored counts must be positive")
    if not 0 <= corruption < 1:
        raise ValueError("corruption must be in [0, 1)")
    top = max(stored_counts)
    hits = np.zeros(len(stored_counts))
    for t in range(trials):
        rng = np.random.default_rng(seed ^ t)
        patterns = rng.choice([-1.0, 1.0], size=(top, dim))
        queries = np.stack([corrupt(p, corruption, rng) for p in patterns])
        for j, n in enumerate(stored_counts):
            bank = MemoryBank(patterns[:n])
            z = retrieve(bank, queries[:n], cfg)
            hits[j] += np.count_nonzero(np.all(np.sign(z) == patterns[:n], axis=1)) / n
    rates = (hits / trials).tolist()
    order = cfg.label
    return CapacityReport(dim, order, stored_counts, rates, corruption,
                          cfg.similarity, trials, seed)


def lmd_uhn_correspondence(f) -> dict:
    """Name the LMD factors by their associative-memory roles.

    similarity <-> I_dist @ Vt, separation <-> S', projection <-> U @ O_dist.
    """
    parts = {
        "similarity": f.i_dist @ f.vt,
        "separation": f.s_prime,
        "projection": f.u @ f.o_dist,
    }
    return {
        "mode": f.mode.value,
        "n_prime": f.n_prime,
        "matrices": {
            name: {
                "rows": int(m.shape[0]),
                "cols": int(m.shape[1]),
                "data": m.ravel().tolist(),
                "frobenius_norm": frobenius_norm(m),
            }
            for name, m in parts.items()
        },
    }
