"""Adaptive per-source rank selection and BIC-based tuning of (phi, rho).

The rank of each latent source is the smallest r whose rank-r symmetric
eigen-truncation retains a rho fraction of the unstructured source's edge
energy.  The (phi, rho) pair is picked over a grid by a BIC that trades the
Gaussian log-likelihood of the residuals against the L0 size of the
reconstructed sources.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .connmat import ConnectivityDataset, nodes_from_edge_count, unvectorize
from .errors import DegeneracyError, ValidationError
from .solver import LocusModel, LowRankSource, SolverConfig, fit

DEFAULT_ZERO_TOL = 1e-3


class RankCapWarning(UserWarning):
    """Requested closeness not reachable within the rank cap."""


@dataclass(frozen=True)
class RankSelection:
    """Record of the adaptive rank choices for one fit."""

    rho: float
    r_max: int
    chosen_ranks: tuple[int, ...]

    def __post_init__(self):
        if not all(1 <= r <= self.r_max for r in self.chosen_ranks):
            raise ValidationError("bad_rank",
                                  f"ranks {self.chosen_ranks} outside [1, {self.r_max}]")


@dataclass(frozen=True)
class TuningCell:
    phi: float
    rho: float
    bic: float
    iterations: int = 0
    converged: bool = False
    ranks: tuple[int, ...] = ()
    error: str | None = None


@dataclass(frozen=True)
class TuningResult:
    grid: tuple[TuningCell, ...]
    best: tuple[float, float]


def select_rank(s_star: np.ndarray, rho: float, r_max: int) -> tuple[int, LowRankSource]:
    """Smallest rank whose eigen-truncation reconstructs the unstructured
    source to the requested closeness.

    The residual ratio |s_hat_r - s_star|^2 / |s_star|^2 is evaluated on
    edge vectors (the diagonal is dropped by the vectorization, so
    eigenvalue sums alone do not give the ratio).  Returns the rank and the
    truncated eigen-factor; hitting the cap emits a RankCapWarning.
    """
    s_star = np.asarray(s_star, dtype=float)
    if not 0 < rho < 1:
        raise ValidationError("bad_config", f"rho must lie in (0, 1), got {rho}")
    norm2 = float(np.sum(s_star ** 2))
    if norm2 == 0:
        raise DegeneracyError("zero_source",
                              "cannot select a rank for an all-zero source")
    node_count = nodes_from_edge_count(s_star.shape[0])
    r_max = min(r_max, node_count - 1)

    m = unvectorize(s_star, node_count)
    eigvals, eigvecs = np.linalg.eigh(m)
    order = np.argsort(-np.abs(eigvals))
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]

    r_idx, c_idx = np.triu_indices(node_count, k=1)
    recon = np.zeros_like(s_star)
    rank = r_max
    capped = True
    for r in range(1, r_max + 1):
        vec = eigvecs[:, r - 1]
        recon = recon + eigvals[r - 1] * vec[r_idx] * vec[c_idx]
        ratio = float(np.sum((recon - s_star) ** 2)) / norm2
        if ratio <= 1.0 - rho:
            rank = r
            capped = False
            break
    if capped:
        warnings.warn(
            f"rank cap {r_max} hit before reaching closeness {rho}",
            RankCapWarning)
    return rank, LowRankSource(eigvecs[:, :rank], eigvals[:rank])


def bic(dataset: ConnectivityDataset, model: LocusModel,
        zero_tol: float = DEFAULT_ZERO_TOL) -> float:
    """BIC of a fitted model on (demeaned) data.

    The likelihood term is a spherical Gaussian with variance estimated
    from the residuals; the complexity term counts, per source, the edges
    whose magnitude exceeds zero_tol times the source's largest edge.
    A perfect fit (zero residual variance) returns the -inf sentinel.
    """
    if model.a is None:
        raise ValidationError("no_loadings", "model has no subject loadings")
    y = dataset.data
    n, p = y.shape
    s = model.source_matrix()
    if model.a.shape != (n, model.q) or s.shape[1] != p:
        raise ValidationError("dimension_mismatch",
                              "model dimensions do not match the dataset")
    yc = y - y.mean(axis=0)
    resid = yc - model.a @ s
    sigma2 = float(np.mean(resid ** 2))

    l0 = 0
    for ell in range(model.q):
        scale = float(np.max(np.abs(s[ell])))
        if scale > 0:
            l0 += int(np.count_nonzero(np.abs(s[ell]) > zero_tol * scale))
    if sigma2 == 0:
        return -math.inf
    loglik = -0.5 * n * p * (math.log(2.0 * math.pi * sigma2) + 1.0)
    return -2.0 * loglik + math.log(n) * l0


def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get("LOCUS_THREADS", "1")))
    except ValueError:
        return 1


def tune(dataset: ConnectivityDataset, q: int, phi_grid, rho_grid,
         config: SolverConfig | None = None, workers: int | None = None) -> TuningResult:
    """Full factorial fit over (phi, rho), sharing one whitening and one
    baseline initialization; returns all BICs and the argmin cell.

    Ties break toward larger phi, then larger rho (the sparser model).
    Failed cells are recorded and excluded; all cells failing is an error.
    """
    from . import baselines
    from .preprocess import whiten

    phi_grid = list(phi_grid)
    rho_grid = list(rho_grid)
    if not phi_grid or not rho_grid:
        raise ValidationError("empty_grid", "phi and rho grids must be non-empty")
    config = config or SolverConfig()
    whitened = whiten(dataset, q)
    ica = None
    try:
        ica = baselines.fastica(whitened, q, seed=config.seed)
    except Exception:
        ica = None  # every cell falls back to the seeded random start

    cells_in = [(phi, rho) for phi in phi_grid for rho in rho_grid]

    def run_cell(args):
        phi, rho = args
        cfg = replace(config, phi=float(phi), rho=float(rho))
        try:
            model = fit(whitened, q, cfg, ica_model=ica)
            value = bic(dataset, model)
            return TuningCell(phi=float(phi), rho=float(rho), bic=value,
                              iterations=model.iterations,
                              converged=model.converged,
                              ranks=tuple(model.ranks))
        except Exception as err:
            return TuningCell(phi=float(phi), rho=float(rho), bic=math.nan,
                              error=f"{type(err).__name__}: {err}")

    n_workers = workers if workers is not None else _worker_count()
    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            cells = list(pool.map(run_cell, cells_in))
    else:
        cells = [run_cell(args) for args in cells_in]

    ok = [c for c in cells if c.error is None and not math.isnan(c.bic)]
    if not ok:
        raise DegeneracyError("all_cells_failed",
                              "every grid cell failed; see per-cell errors")
    best = min(ok, key=lambda c: (c.bic, -c.phi, -c.rho))
    return TuningResult(grid=tuple(cells), best=(best.phi, best.rho))
