"""Layer Matrix Decomposition: ``W = U @ O_dist @ S' @ I_dist @ Vt``.

``w`` is always the linear map of a layer, shape ``(o, i)``, acting on column
vectors of length ``i``. Two constructions of the metric transforms exist:

* trivial: ``I_dist`` and ``O_dist`` are identity blocks, so the product is
  the rank-``n'`` truncated SVD;
* graph: ``I_dist = C @ L @ pinv(L_in) @ B_in`` and
  ``O_dist = B_out.T @ L_out @ pinv(L) @ C.T`` where ``C`` holds the latent
  graph's spectral basis and ``B_in``/``B_out`` the input/output graphs'
  spectral bases, reshaping the p x p Laplacian products to n' x i and o x n'.
  ``S'`` is then the diagonal least-squares fit to ``S``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import graph as gm
from .linalg import as_matrix, frobenius_norm, pseudo_inverse, svd
from .mlp import MLPModel, NotConvergedError, augment, layer_inputs, layer_outputs


class Mode(str, Enum):
    TRIVIAL = "trivial"
    GRAPH = "graph"


@dataclass(frozen=True)
class MetricTransform:
    """``g = L_B @ pinv(L_A)``, then projected with ``reshape_basis``."""

    matrix: np.ndarray
    source_laplacian: np.ndarray
    target_laplacian: np.ndarray
    reshape_basis: np.ndarray


@dataclass(frozen=True)
class LMDFactorization:
    u: np.ndarray
    o_dist: np.ndarray
    s_prime: np.ndarray
    i_dist: np.ndarray
    vt: np.ndarray
    n_prime: int
    mode: Mode
    residual_to_w: float
    residual_eq4: float
    residual_eq4_full: float
    singular_values: np.ndarray
    rank_deficient: bool = False
    input_transform: MetricTransform | None = field(default=None, repr=False)
    output_transform: MetricTransform | None = field(default=None, repr=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.shape[0], self.vt.shape[1]

    def product(self) -> np.ndarray:
        return self.u @ self.o_dist @ self.s_prime @ self.i_dist @ self.vt


def metric_transform(source_laplacian, target_laplacian) -> np.ndarray:
    """The map between two graph metrics, ``L_target @ pinv(L_source)``."""
    src = as_matrix(source_laplacian, "source laplacian")
    tgt = as_matrix(target_laplacian, "target laplacian")
    if tgt.shape[1] != src.shape[1]:
        raise ValueError(f"laplacian sizes differ: {src.shape} vs {tgt.shape}")
    return tgt @ pseudo_inverse(src)


def _check_n_prime(w: np.ndarray, n_prime: int):
    limit = min(w.shape)
    if not 1 <= int(n_prime) <= limit:
        raise ValueError(f"n_prime must be in [1, {limit}], got {n_prime}")


def _diag_s(s: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    out = np.zeros(shape)
    k = s.shape[0]
    out[np.arange(k), np.arange(k)] = s
    return out


def _relative(x: float, scale: float) -> float:
    return x / scale if scale > 0 else x


def _residuals(w, u, o_dist, s_prime, i_dist, vt, s, n_prime):
    big_s = _diag_s(s, w.shape)
    core = o_dist @ s_prime @ i_dist
    scale = frobenius_norm(big_s)
    rw = _relative(frobenius_norm(w - u @ core @ vt), frobenius_norm(w))
    block = _relative(frobenius_norm(core[:n_prime, :n_prime] - big_s[:n_prime, :n_prime]), scale)
    full = _relative(frobenius_norm(core - big_s), scale)
    return rw, block, full


def factorize_trivial(w, n_prime: int) -> LMDFactorization:
    w = as_matrix(w, "weight matrix")
    _check_n_prime(w, n_prime)
    o, i = w.shape
    f = svd(w)
    i_dist = np.eye(n_prime, i)
    o_dist = np.eye(o, n_prime)
    s_prime = np.diag(f.s[:n_prime])
    rw, block, full = _residuals(w, f.u, o_dist, s_prime, i_dist, f.vt, f.s, n_prime)
    return LMDFactorization(f.u, o_dist, s_prime, i_dist, f.vt, int(n_prime), Mode.TRIVIAL,
                            rw, block, full, f.s)


def _basis(spec: gm.LaplacianSpectrum, count: int, selection) -> np.ndarray:
    """Spectral basis with ``count`` columns, zero-padded past the vertex count."""
    p = spec.values.shape[0]
    take = min(count, p)
    out = np.zeros((p, count))
    out[:, :take] = gm.spectral_embedding(spec, take, selection)
    return out


def factorize_graph(w, in_graph: gm.Graph, out_graph: gm.Graph, latent_graph: gm.Graph,
                    n_prime: int, selection=gm.Selection.SMALLEST_NONZERO) -> LMDFactorization:
    """Graph-mode factorization; all three graphs live on the same p vertices.

    When p is smaller than a requested basis size the basis is zero-padded,
    which makes the ``S'`` fit rank deficient; that case is solved with the
    pseudo-inverse and flagged in ``rank_deficient``.
    """
    w = as_matrix(w, "weight matrix")
    _check_n_prime(w, n_prime)
    sizes = {in_graph.n, out_graph.n, latent_graph.n}
    if len(sizes) != 1:
        raise ValueError(
            f"graphs must share a vertex count, got in={in_graph.n}, "
            f"out={out_graph.n}, latent={latent_graph.n}"
        )
    o, i = w.shape
    f = svd(w)

    spec_in = gm.laplacian_spectrum(in_graph)
    spec_out = gm.laplacian_spectrum(out_graph)
    spec_lat = gm.laplacian_spectrum(latent_graph)
    c = _basis(spec_lat, n_prime, selection).T  # n' x p
    b_in = _basis(spec_in, i, selection)  # p x i
    b_out = _basis(spec_out, o, selection)  # p x o

    g_in = metric_transform(spec_in.laplacian, spec_lat.laplacian)
    g_out = metric_transform(spec_lat.laplacian, spec_out.laplacian)
    i_dist = c @ g_in @ b_in
    o_dist = b_out.T @ g_out @ c.T

    # diagonal least squares: S ~ sum_k s_k * outer(o_dist[:, k], i_dist[k, :])
    design = np.column_stack([np.outer(o_dist[:, k], i_dist[k]).ravel() for k in range(n_prime)])
    target = _diag_s(f.s, (o, i)).ravel()
    design_rank = int(np.count_nonzero(svd(design).s))
    rank_deficient = design_rank < n_prime
    if rank_deficient:
        warnings.warn(
            f"S' least-squares system has rank {design_rank} < n' = {n_prime}; "
            "using the minimum-norm solution",
            RuntimeWarning,
            stacklevel=2,
        )
    s_fit = (pseudo_inverse(design) @ target[:, None]).ravel()

    # absorb signs into I_dist rows and sort descending; the product is unchanged
    neg = s_fit < 0
    s_fit = np.abs(s_fit)
    i_dist = np.where(neg[:, None], -i_dist, i_dist)
    order = np.argsort(-s_fit, kind="stable")
    s_fit, i_dist, o_dist = s_fit[order], i_dist[order], o_dist[:, order]
    s_prime = np.diag(s_fit)

    rw, block, full = _residuals(w, f.u, o_dist, s_prime, i_dist, f.vt, f.s, n_prime)
    in_t = MetricTransform(i_dist, spec_in.laplacian, spec_lat.laplacian, c)
    out_t = MetricTransform(o_dist, spec_lat.laplacian, spec_out.laplacian, c.T)
    return LMDFactorization(f.u, o_dist, s_prime, i_dist, f.vt, int(n_prime), Mode.GRAPH,
                            rw, block, full, f.s, rank_deficient, in_t, out_t)


def reconstruct(f: LMDFactorization, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != f.vt.shape[1]:
        raise ValueError(f"x must have length {f.vt.shape[1]}, got shape {x.shape}")
    return f.u @ (f.o_dist @ (f.s_prime @ (f.i_dist @ (f.vt @ x))))


def estimate_latent_dim(s, energy: float = 0.95) -> int:
    """Smallest k whose leading singular values carry ``energy`` of sum(s**2).

    Values under the numerical-rank tolerance count as zero, so
    ``energy=1.0`` returns the numerical rank.
    """
    s = np.asarray(s, dtype=np.float64).ravel()
    if s.size == 0 or np.any(s < 0):
        raise ValueError("singular values must be a nonempty nonnegative vector")
    if not 0 < energy <= 1:
        raise ValueError(f"energy must be in (0, 1], got {energy}")
    smax = float(np.max(s))
    if smax == 0:
        raise ValueError("all-zero spectrum has no latent dimension")
    s = np.where(s > s.size * np.finfo(np.float64).eps * smax, s, 0.0)
    cum = np.cumsum(s * s)
    return int(np.argmax(cum >= energy * cum[-1])) + 1


def principal_angles(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Principal angles (radians, ascending) between the column spans of a and b."""

    def orth(m):
        f = svd(m)
        r = int(np.count_nonzero(f.s))
        return f.u[:, :r]

    qa, qb = orth(a), orth(b)
    if qa.shape[1] == 0 or qb.shape[1] == 0:
        return np.zeros(0)
    cos = svd(qa.T @ qb).s
    return np.sort(np.arccos(np.clip(cos, -1.0, 1.0)))


@dataclass
class AnalysisConfig:
    energies: tuple[float, ...] = (0.9, 0.95, 0.99)
    energy: float = 0.95
    n_prime: int | None = None
    graph: bool = False
    knn: int | None = None
    selection: gm.Selection = gm.Selection.SMALLEST_NONZERO
    force: bool = False


def _graph_on(points: np.ndarray, k: int) -> tuple[gm.Graph, float]:
    h = gm.auto_bandwidth(points)
    if h <= 0:
        # every point coincides (e.g. dead units); any bandwidth gives weight 1
        h = 1.0
    return gm.build_knn_graph(gm.DataSet(points), k, bandwidth=h), h


def layer_graphs(x_in: np.ndarray, x_out: np.ndarray, targets: np.ndarray | None,
                 knn: int | None = None):
    """kNN graphs over a layer's inputs, its outputs, and inputs paired with targets.

    Returns ``(in_graph, out_graph, latent_graph, params)``.
    """
    p = x_in.shape[0]
    if p < 2:
        raise ValueError("graph mode needs at least 2 data points")
    k = min(knn if knn is not None else 10, p - 1)
    if k < 1:
        raise ValueError(f"knn must be positive, got {knn}")
    joint = x_in if targets is None else np.hstack([x_in, targets])
    g_in, h_in = _graph_on(x_in, k)
    g_out, h_out = _graph_on(x_out, k)
    g_lat, h_lat = _graph_on(joint, k)
    params = {"knn": k, "vertices": p,
              "bandwidths": {"input": h_in, "output": h_out, "latent": h_lat}}
    return g_in, g_out, g_lat, params


def _curve_point(f: LMDFactorization) -> dict:
    return {"n_prime": f.n_prime, "residual_to_w": f.residual_to_w, "residual_eq4": f.residual_eq4}


def _layer_record(index: int, w: np.ndarray, x_in: np.ndarray, x_out: np.ndarray,
                  targets: np.ndarray | None, cfg: AnalysisConfig) -> dict:
    f = svd(w)
    s = f.s
    limit = min(w.shape)
    curve = [_curve_point(factorize_trivial(w, k)) for k in range(1, limit + 1)]
    estimates = {f"{e:g}": estimate_latent_dim(s, e) for e in cfg.energies} if np.any(s > 0) else {}
    if cfg.n_prime is not None:
        n_prime = min(int(cfg.n_prime), limit)
    elif np.any(s > 0):
        n_prime = estimate_latent_dim(s, cfg.energy)
    else:
        n_prime = 1
    chosen = factorize_trivial(w, n_prime)

    aug = augment(x_in)
    wx = aug @ w.T
    recon = np.array([reconstruct(chosen, row) for row in aug])
    denom = max(frobenius_norm(wx), np.finfo(np.float64).tiny)
    record = {
        "layer": index,
        "shape": [int(w.shape[0]), int(w.shape[1])],
        "singular_values": s.tolist(),
        "n_prime_by_energy": estimates,
        "n_prime": int(n_prime),
        "energy": cfg.energy,
        "trivial": {
            "curve": curve,
            "residual_to_w": chosen.residual_to_w,
            "residual_eq4": chosen.residual_eq4,
            "residual_on_data": frobenius_norm(recon - wx) / denom,
        },
    }

    if cfg.graph:
        p = x_in.shape[0]
        g_in, g_out, g_lat, params = layer_graphs(x_in, x_out, targets, cfg.knn)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            gf = factorize_graph(w, g_in, g_out, g_lat, n_prime, cfg.selection)
            graph_curve = [_curve_point(factorize_graph(w, g_in, g_out, g_lat, kk, cfg.selection))
                           for kk in range(1, limit + 1)]
        recon_g = np.array([reconstruct(gf, row) for row in aug])
        spec_in = gm.laplacian_spectrum(g_in)
        emb = gm.spectral_embedding(spec_in, min(n_prime, p), cfg.selection)
        angles = principal_angles(f.vt[:n_prime].T, aug.T @ emb)
        record["graph"] = {
            "residual_to_w": gf.residual_to_w,
            "residual_eq4": gf.residual_eq4,
            "residual_eq4_full": gf.residual_eq4_full,
            "residual_on_data": frobenius_norm(recon_g - wx) / denom,
            "curve": graph_curve,
            "rank_deficient": gf.rank_deficient,
            "s_prime": np.diag(gf.s_prime).tolist(),
            "input_dim": int(w.shape[1]),
            "output_dim": int(w.shape[0]),
            **params,
            "selection": gm.Selection(cfg.selection).value,
            "principal_angles": angles.tolist(),
        }
    return record


def layer_report(model: MLPModel, dataset: gm.DataSet, config: AnalysisConfig | None = None) -> list[dict]:
    """Per-layer spectra, latent-dimension estimates, and residual curves.

    Each layer is analysed through its linear map ``W.T`` (bias column
    included) acting on that layer's inputs over ``dataset``.
    """
    cfg = config or AnalysisConfig()
    if not cfg.force and (model.certificate is None or not model.certificate.stable):
        raise NotConvergedError("model is not certified as converged (use force to override)")
    if dataset.p < 1:
        raise ValueError("dataset is empty")
    ins = layer_inputs(model, dataset.points)
    outs = layer_outputs(model, dataset.points)
    return [
        _layer_record(i, w.T, ins[i], outs[i], dataset.targets, cfg)
        for i, w in enumerate(model.layers)
    ]
