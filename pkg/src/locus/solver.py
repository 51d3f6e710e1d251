"""Iterative node-rotation solver for sparse low-rank source separation.

Each latent source is a symmetric low-rank factorization X diag(d) X' whose
upper-triangle vector lives in edge space.  One outer iteration updates, for
every source: the latent node coordinates one node at a time (conditioning
on all other nodes, Gauss-Seidel), then the diagonal weights, and finally
re-estimates the reduced mixing matrix and orthogonalizes it.  Both block
updates share the same two-stage scheme: soft-threshold the projected data
in edge space, then least-squares project onto the current low-rank span.
"""

from __future__ import annotations

import functools
import logging
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from .connmat import EdgeIndexMap, nodes_from_edge_count, unvectorize
from .errors import DegeneracyError, DimensionError, NumericError, ValidationError
from .preprocess import WhitenedData, unmix_to_subject_space

logger = logging.getLogger(__name__)

PINV_RTOL = 1e-10
PRUNE_RTOL = 1e-10

REGULARIZERS = ("uniform_l1", "vector_l1", "nuclear")


class DegenerateSourceWarning(UserWarning):
    """A source collapsed to zero during thresholding and was re-seeded."""


@functools.lru_cache(maxsize=32)
def _triu(node_count: int):
    return np.triu_indices(node_count, k=1)


def _polar_orthogonalize(m: np.ndarray) -> np.ndarray:
    """Closest orthogonal matrix in Frobenius norm (symmetric/polar
    orthogonalization, order-independent across columns)."""
    u, svals, vt = np.linalg.svd(m)
    if svals[-1] <= 1e-12 * max(svals[0], np.finfo(float).tiny):
        raise DegeneracyError("singular_mixing",
                              "mixing estimate is rank deficient; cannot orthogonalize")
    return u @ vt


@dataclass(frozen=True)
class LowRankSource:
    """One latent source: node coordinates ``x`` (V, R) and weights ``d`` (R,).

    Columns of ``x`` are renormalized to unit 2-norm on construction, with
    the scale absorbed into ``d`` (d_r <- d_r * |x_r|^2), which leaves the
    reconstructed matrix unchanged.
    """

    x: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        d = np.atleast_1d(np.asarray(self.d, dtype=float))
        if x.ndim != 2 or d.ndim != 1 or x.shape[1] != d.shape[0]:
            raise DimensionError("dimension_mismatch",
                                 f"factor shape {x.shape} incompatible with "
                                 f"{d.shape[0]} weights")
        if not 1 <= x.shape[1] < x.shape[0]:
            raise DimensionError("dimension_mismatch",
                                 f"rank must lie in [1, V-1], got R={x.shape[1]} "
                                 f"for V={x.shape[0]}")
        norms = np.linalg.norm(x, axis=0)
        safe = np.where(norms > 0, norms, 1.0)
        x = x / safe
        d = d * norms ** 2
        x.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "d", d)

    @property
    def rank(self) -> int:
        return self.d.shape[0]

    @property
    def node_count(self) -> int:
        return self.x.shape[0]

    def matrix(self) -> np.ndarray:
        """Full V x V reconstruction X diag(d) X' (diagonal included)."""
        return (self.x * self.d) @ self.x.T

    def edge_vector(self) -> np.ndarray:
        """Upper-triangle vector of the reconstruction (diagonal dropped)."""
        r, c = _triu(self.node_count)
        return np.einsum("ij,ij->i", self.x[r] * self.d, self.x[c])


@dataclass(frozen=True)
class SolverConfig:
    """Solver settings.

    phi : sparsity weight (threshold phi/2 in the edge-space prox step)
    rho : rank-closeness level in (0, 1); larger keeps more energy
    r_max : per-source rank cap (effective cap is min(r_max, V-1))
    eps1, eps2 : relative-change stopping tolerances for the mixing matrix
        and the source matrix
    regularizer : "uniform_l1" (edge-wise), "vector_l1" or "nuclear"
    """

    phi: float = 0.0
    rho: float = 0.95
    r_max: int = 10
    eps1: float = 1e-4
    eps2: float = 1e-4
    max_iter: int = 1000
    regularizer: str = "uniform_l1"
    seed: int = 0

    def __post_init__(self):
        if self.phi < 0:
            raise ValidationError("bad_config", f"phi must be >= 0, got {self.phi}")
        if not 0 < self.rho < 1:
            raise ValidationError("bad_config", f"rho must lie in (0, 1), got {self.rho}")
        if self.eps1 <= 0 or self.eps2 <= 0:
            raise ValidationError("bad_config", "stopping tolerances must be positive")
        if self.max_iter < 1:
            raise ValidationError("bad_config", "max_iter must be >= 1")
        if self.r_max < 1:
            raise ValidationError("bad_config", "r_max must be >= 1")
        if self.regularizer not in REGULARIZERS:
            raise ValidationError("bad_config",
                                  f"unknown regularizer {self.regularizer!r}, "
                                  f"expected one of {REGULARIZERS}")


@dataclass
class LocusModel:
    """Fitted decomposition: q low-rank sources, the orthogonal reduced
    mixing matrix, subject loadings and fit diagnostics."""

    sources: list[LowRankSource]
    a_tilde: np.ndarray
    a: np.ndarray | None = None
    objective_trace: np.ndarray = field(default_factory=lambda: np.empty(0))
    converged: bool = False
    iterations: int = 0

    @property
    def q(self) -> int:
        return len(self.sources)

    @property
    def ranks(self) -> list[int]:
        return [s.rank for s in self.sources]

    def source_matrix(self) -> np.ndarray:
        """(q, p) matrix whose rows are the sources' edge vectors."""
        return np.vstack([s.edge_vector() for s in self.sources])


def soft_threshold(y: np.ndarray, t: float) -> np.ndarray:
    """Elementwise sign(y) * max(|y| - t, 0); exact zeros where |y| <= t."""
    if t < 0:
        raise ValidationError("bad_threshold", f"threshold must be >= 0, got {t}")
    y = np.asarray(y, dtype=float)
    return np.sign(y) * np.maximum(np.abs(y) - t, 0.0)


def _solve_gram(gram: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve gram @ x = rhs, falling back to a pseudo-inverse when the Gram
    matrix is rank deficient (relative tolerance PINV_RTOL)."""
    svals = np.linalg.svd(gram, compute_uv=False)
    if svals[0] == 0 or svals[-1] <= PINV_RTOL * svals[0]:
        logger.debug("rank-deficient Gram matrix (cond %.2e), using pseudo-inverse",
                     np.inf if svals[-1] == 0 else svals[0] / svals[-1])
        return np.linalg.pinv(gram, rcond=PINV_RTOL) @ rhs
    return np.linalg.solve(gram, rhs)


def _node_row(x: np.ndarray, d: np.ndarray, v: int, bhat: np.ndarray) -> np.ndarray:
    """Project the thresholded edge values at node v onto the span of the
    remaining rows: D^(-1) (X(-v)' X(-v))^(-1) X(-v)' bhat.

    Weights below PRUNE_RTOL * max|d| are dead components; their
    coordinates are returned as zero instead of dividing by them.
    """
    x_minus = np.delete(x, v, axis=0)
    coef = _solve_gram(x_minus.T @ x_minus, x_minus.T @ bhat)
    keep = np.abs(d) > PRUNE_RTOL * np.max(np.abs(d), initial=0.0)
    row = np.zeros_like(d)
    row[keep] = coef[keep] / d[keep]
    if not keep.all():
        logger.debug("node %d: %d near-zero weights skipped in projection",
                     v, int((~keep).sum()))
    return row


def update_node(source: LowRankSource, v: int, y_proj: np.ndarray,
                phi: float) -> np.ndarray:
    """Two-stage update of node v's latent coordinates.

    y_proj holds the V-1 projected edge values involving node v, ordered by
    the other endpoint.  Stage one soft-thresholds them at phi/2; stage two
    projects the result onto the span of the other nodes' coordinates.
    """
    y_proj = np.asarray(y_proj, dtype=float)
    if y_proj.shape != (source.node_count - 1,):
        raise DimensionError("dimension_mismatch",
                             f"expected {source.node_count - 1} projected values, "
                             f"got {y_proj.shape}")
    bhat = soft_threshold(y_proj, phi / 2.0)
    return _node_row(source.x, source.d, v, bhat)


def _z_columns(x: np.ndarray) -> np.ndarray:
    """(p, R) matrix whose r-th column is the edge vector of x_r x_r'."""
    r, c = _triu(x.shape[0])
    return x[r] * x[c]


def update_d(source: LowRankSource, y_src: np.ndarray, phi: float) -> np.ndarray:
    """Two-stage update of the diagonal weights.

    Thresholds the full-length projected source at phi/2, then projects
    onto the span of the per-component edge vectors Z.  Weights that come
    back below PRUNE_RTOL * max|d| are zeroed (rank reduction happens in
    the caller).
    """
    z = _z_columns(source.x)
    y_src = np.asarray(y_src, dtype=float)
    if y_src.shape != (z.shape[0],):
        raise DimensionError("dimension_mismatch",
                             f"expected {z.shape[0]} edge values, got {y_src.shape}")
    s_star = soft_threshold(y_src, phi / 2.0)
    d = _solve_gram(z.T @ z, z.T @ s_star)
    scale = np.max(np.abs(d), initial=0.0)
    small = np.abs(d) < PRUNE_RTOL * scale
    if small.any() and scale > 0:
        logger.debug("zeroing %d near-zero diagonal weights", int(small.sum()))
        d = np.where(small, 0.0, d)
    return d


def update_mixing(whitened: WhitenedData, sources: list[LowRankSource]) -> np.ndarray:
    """Least-squares mixing estimate Y~ S' (S S')^(-1), then symmetric
    orthogonalization.  The result satisfies A~' A~ = I to 1e-10."""
    s = np.vstack([src.edge_vector() for src in sources])
    norms = np.linalg.norm(s, axis=1)
    dead = np.flatnonzero(norms <= 1e-14 * max(norms.max(initial=0.0), 1.0))
    if dead.size:
        raise DegeneracyError("singular_sources",
                              f"sources {list(dead)} are identically zero; "
                              "cannot update the mixing matrix")
    gram = s @ s.T
    svals = np.linalg.svd(gram, compute_uv=False)
    if svals[-1] <= 1e-12 * svals[0]:
        corr = (s / norms[:, None]) @ (s / norms[:, None]).T
        np.fill_diagonal(corr, 0.0)
        i, j = np.unravel_index(int(np.argmax(np.abs(corr))), corr.shape)
        raise DegeneracyError("singular_sources",
                              f"sources {i} and {j} are linearly dependent "
                              f"(|corr| = {abs(corr[i, j]):.6f})")
    a_raw = whitened.y_tilde @ s.T @ np.linalg.inv(gram)
    return _polar_orthogonalize(a_raw)


def _penalty(sources: list[LowRankSource], phi: float, regularizer: str) -> float:
    from .regularizers import RegularizerKind, penalty_value
    return penalty_value(RegularizerKind(regularizer, phi), sources)


def objective(whitened: WhitenedData, model: LocusModel, phi: float,
              regularizer: str = "uniform_l1") -> float:
    """Source-domain objective: sum_l |Y~' A~_l - s_l|^2 plus the penalty.

    By the orthogonality of the mixing matrix this equals the data-domain
    residual |Y~ - A~ S|_F^2 plus the same penalty.
    """
    targets = model.a_tilde.T @ whitened.y_tilde
    s = model.source_matrix()
    fidelity = float(np.sum((targets - s) ** 2))
    return fidelity + _penalty(model.sources, phi, regularizer)


def data_domain_objective(whitened: WhitenedData, model: LocusModel, phi: float,
                          regularizer: str = "uniform_l1") -> float:
    """Objective evaluated on the reduced data domain, |Y~ - A~ S|_F^2 plus
    the penalty.  Agrees with :func:`objective` for orthogonal mixing."""
    s = model.source_matrix()
    resid = whitened.y_tilde - model.a_tilde @ s
    return float(np.sum(resid ** 2)) + _penalty(model.sources, phi, regularizer)


def _reseed_source(y_src: np.ndarray, node_count: int,
                   rng: np.random.Generator) -> LowRankSource:
    """Rank-1 re-seed from the dominant eigen-pair of the unvectorized
    projected source; random unit vector if that is zero too."""
    m = unvectorize(y_src, node_count)
    eigvals, eigvecs = np.linalg.eigh(m)
    k = int(np.argmax(np.abs(eigvals)))
    if abs(eigvals[k]) > 0:
        return LowRankSource(eigvecs[:, [k]], np.array([eigvals[k]]))
    vec = rng.standard_normal((node_count, 1))
    vec /= np.linalg.norm(vec)
    return LowRankSource(vec, np.array([1.0]))


def initialize(whitened: WhitenedData, q: int, config: SolverConfig,
               ica_model=None) -> LocusModel:
    """Starting point for :func:`fit`.

    Runs the FastICA baseline on the whitened data, takes its orthogonalized
    mixing matrix, and truncates each unstructured source to the adaptively
    selected rank via its symmetric eigendecomposition.  If the baseline
    fails, falls back to a seeded random orthogonal mixing matrix and
    truncates the implied projected sources instead.
    """
    from . import baselines
    from .modelsel import select_rank

    if q != whitened.q:
        raise DimensionError("dimension_mismatch",
                             f"q={q} does not match whitened data (q={whitened.q})")
    node_count = nodes_from_edge_count(whitened.n_edges)
    r_max = min(config.r_max, node_count - 1)
    rng = np.random.default_rng(config.seed)

    raw = None
    try:
        ica = ica_model
        if ica is None:
            ica = baselines.fastica(whitened, q, seed=config.seed)
        a_tilde = _polar_orthogonalize(np.asarray(ica.mixing, dtype=float))
        raw = np.asarray(ica.sources, dtype=float)
        if raw.shape != (q, whitened.n_edges) or not np.all(np.isfinite(raw)):
            raise ValueError("baseline produced unusable sources")
    except Exception as err:  # fall back to a seeded random start
        logger.warning("baseline initialization failed (%s); using random "
                       "orthogonal start", err)
        a_tilde = _polar_orthogonalize(rng.standard_normal((q, q)))
        raw = a_tilde.T @ whitened.y_tilde

    sources = []
    for ell in range(q):
        try:
            _, src = select_rank(raw[ell], config.rho, r_max)
        except DegeneracyError:
            warnings.warn(f"initial source {ell} is zero; re-seeding",
                          DegenerateSourceWarning)
            src = _reseed_source((a_tilde.T @ whitened.y_tilde)[ell],
                                 node_count, rng)
        sources.append(src)
    return LocusModel(sources=sources, a_tilde=a_tilde)


def _relative_change(new: np.ndarray, old: np.ndarray) -> float:
    denom = np.linalg.norm(old)
    diff = np.linalg.norm(new - old)
    if denom == 0:
        return 0.0 if diff == 0 else np.inf
    return float(diff / denom)


def fit(whitened: WhitenedData, q: int, config: SolverConfig,
        init: LocusModel | None = None, ica_model=None) -> LocusModel:
    """Run the node-rotation algorithm on whitened data.

    Iterates the three block updates until the relative changes of the
    mixing matrix and the source matrix drop below eps1/eps2 or max_iter is
    reached.  The per-source rank is re-selected each outer iteration from
    the thresholded unstructured source; a rank change re-seeds that
    source's factors from the eigendecomposition of the thresholded target.
    Subject loadings are filled in by least squares against the final
    sources.
    """
    from .modelsel import select_rank
    from .regularizers import RegularizerKind, prox_step

    if q != whitened.q:
        raise DimensionError("dimension_mismatch",
                             f"q={q} does not match whitened data (q={whitened.q})")
    node_count = nodes_from_edge_count(whitened.n_edges)
    r_max = min(config.r_max, node_count - 1)
    phi = config.phi
    regularizer = config.regularizer
    kind = RegularizerKind(regularizer, phi)
    rng = np.random.default_rng(config.seed)
    edge_map = EdgeIndexMap(node_count)
    node_idx = [edge_map.node_edges(v) for v in range(node_count)]

    if init is None:
        init = initialize(whitened, q, config, ica_model=ica_model)
    if init.q != q or init.a_tilde.shape != (q, q):
        raise DimensionError("dimension_mismatch",
                             "init model does not match q")

    sources = list(init.sources)
    a_tilde = np.asarray(init.a_tilde, dtype=float).copy()
    trace = [objective(whitened, LocusModel(sources, a_tilde), phi, regularizer)]
    prev_s = np.vstack([s.edge_vector() for s in sources])
    converged = False
    iterations = 0
    warned_degenerate: set[int] = set()

    def reseed(ell, y_src, it):
        if ell not in warned_degenerate:
            warnings.warn(f"source {ell} collapsed to zero at iteration {it}; "
                          "re-seeding", DegenerateSourceWarning)
            warned_degenerate.add(ell)
        else:
            logger.debug("source %d collapsed again at iteration %d", ell, it)
        return _reseed_source(y_src, node_count, rng)

    for it in range(1, config.max_iter + 1):
        iterations = it
        targets = a_tilde.T @ whitened.y_tilde

        for ell in range(q):
            y_src = targets[ell]
            if regularizer == "uniform_l1":
                s_star = soft_threshold(y_src, phi / 2.0)
            else:
                s_star = y_src

            # adaptive rank re-selection against the unstructured source
            try:
                new_rank, eig_src = select_rank(s_star, config.rho, r_max)
            except DegeneracyError:
                sources[ell] = reseed(ell, y_src, it)
                continue
            if new_rank != sources[ell].rank:
                x = np.array(eig_src.x)
                d = np.array(eig_src.d)
            else:
                x = np.array(sources[ell].x)
                d = np.array(sources[ell].d)

            # Step 1: node sweep, freshest coordinates within the sweep
            ctx = {"x": x, "d": d, "node": 0}
            for v in range(node_count):
                ctx["node"] = v
                x[v] = prox_step(kind, y_src[node_idx[v]], ctx)
            if not np.all(np.isfinite(x)):
                raise NumericError("non_finite",
                                   f"node update overflowed at iteration {it}")

            # renormalize columns, absorbing scale into d
            norms = np.linalg.norm(x, axis=0)
            alive = norms > 0
            x[:, alive] /= norms[alive]
            d = d * norms ** 2

            # Step 2: diagonal weights against the full-length target
            d = prox_step(kind, y_src, {"z": _z_columns(x)})
            if not np.all(np.isfinite(d)):
                raise NumericError("non_finite",
                                   f"weight update overflowed at iteration {it}")

            keep = np.abs(d) >= PRUNE_RTOL * np.max(np.abs(d), initial=0.0)
            if np.max(np.abs(d), initial=0.0) == 0 or not keep.any():
                sources[ell] = reseed(ell, y_src, it)
                continue
            if not keep.all():
                logger.debug("source %d: pruning %d components at iteration %d",
                             ell, int((~keep).sum()), it)
                x, d = x[:, keep], d[keep]
            sources[ell] = LowRankSource(x, d)

        # Step 3: mixing matrix
        a_new = update_mixing(whitened, sources)
        if not np.all(np.isfinite(a_new)):
            raise NumericError("non_finite",
                               f"mixing update overflowed at iteration {it}")

        s_mat = np.vstack([s.edge_vector() for s in sources])
        trace.append(objective(whitened, LocusModel(sources, a_new), phi,
                               regularizer))
        rel_a = _relative_change(a_new, a_tilde)
        rel_s = _relative_change(s_mat, prev_s)
        a_tilde, prev_s = a_new, s_mat
        if rel_a < config.eps1 and rel_s < config.eps2:
            converged = True
            break

    model = LocusModel(sources=sources, a_tilde=a_tilde,
                       objective_trace=np.asarray(trace),
                       converged=converged, iterations=iterations)
    model.a = unmix_to_subject_space(a_tilde, whitened, prev_s)
    return model


# ---------------------------------------------------------------------------
# model serialization: one directory per fit
# ---------------------------------------------------------------------------

def _write_meta(path: str, meta: dict) -> None:
    with open(path, "w") as fh:
        for key, value in meta.items():
            fh.write(f"{key}={value}\n")


def read_meta(path: str) -> dict:
    meta = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line and "=" in line:
                key, value = line.split("=", 1)
                meta[key] = value
    return meta


def save_decomposition(path: str, sources: np.ndarray, node_count: int,
                       a: np.ndarray, a_tilde: np.ndarray, meta: dict,
                       factors: list[LowRankSource] | None = None) -> None:
    """Write a fit directory: A.csv, A_tilde.csv, per-source S_<l>.csv
    (V x V symmetric), optional X_<l>.csv / d_<l>.csv, and a key=value
    meta file.  Source files are 1-indexed."""
    os.makedirs(path, exist_ok=True)
    np.savetxt(os.path.join(path, "A.csv"), a, delimiter=",", fmt="%.17g")
    np.savetxt(os.path.join(path, "A_tilde.csv"), a_tilde, delimiter=",", fmt="%.17g")
    for ell in range(sources.shape[0]):
        np.savetxt(os.path.join(path, f"S_{ell + 1}.csv"),
                   unvectorize(sources[ell], node_count),
                   delimiter=",", fmt="%.17g")
    if factors is not None:
        for ell, src in enumerate(factors):
            np.savetxt(os.path.join(path, f"X_{ell + 1}.csv"), src.x,
                       delimiter=",", fmt="%.17g")
            np.savetxt(os.path.join(path, f"d_{ell + 1}.csv"),
                       np.atleast_1d(src.d), delimiter=",", fmt="%.17g")
    _write_meta(os.path.join(path, "meta"), meta)


def save_model(model: LocusModel, path: str, config: SolverConfig | None = None) -> None:
    """Serialize a fitted model (see :func:`save_decomposition` for layout)."""
    if model.a is None:
        raise ValidationError("no_loadings", "model has no subject loadings to save")
    meta = {
        "q": model.q,
        "ranks": ",".join(str(r) for r in model.ranks),
        "iterations": model.iterations,
        "converged": model.converged,
        "final_objective": (f"{model.objective_trace[-1]:.17g}"
                            if model.objective_trace.size else "nan"),
    }
    if config is not None:
        meta.update(phi=config.phi, rho=config.rho, seed=config.seed,
                    regularizer=config.regularizer)
    save_decomposition(path, model.source_matrix(),
                       model.sources[0].node_count, model.a, model.a_tilde,
                       meta, factors=model.sources)


def load_decomposition(path: str) -> dict:
    """Read back a fit directory written by :func:`save_decomposition`.

    Returns a dict with keys "sources" (q, p), "a", "a_tilde", "meta" and
    "node_count".
    """
    meta = read_meta(os.path.join(path, "meta"))
    q = int(meta["q"])
    from .connmat import vectorize
    rows = []
    for ell in range(q):
        m = np.loadtxt(os.path.join(path, f"S_{ell + 1}.csv"),
                       delimiter=",", ndmin=2)
        rows.append(vectorize(m))
    sources = np.vstack(rows)
    a = np.loadtxt(os.path.join(path, "A.csv"), delimiter=",", ndmin=2)
    a_tilde = np.loadtxt(os.path.join(path, "A_tilde.csv"), delimiter=",", ndmin=2)
    node_count = int(round((1 + np.sqrt(1 + 8 * sources.shape[1])) / 2))
    return {"sources": sources, "a": a, "a_tilde": a_tilde, "meta": meta,
            "node_count": node_count}
