"""Command-line interface: simulate | decompose | tune | evaluate.

Every command writes its artifacts plus a ``manifest`` key=value file
(command, settings, input hashes, seed, version, timestamp).  Data outputs
are byte-identical across reruns with the same arguments; the manifest's
timestamp line is the one exception.

Exit codes: 0 success, 2 usage, 3 validation, 4 numeric/degeneracy.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
import time

import numpy as np

from . import __version__
from .baselines import fastica
from .connmat import load_dataset, save_dataset, unvectorize, vectorize
from .errors import DegeneracyError, LocusError, NumericError, ValidationError
from .evaluate import bootstrap_replicates, match_sources, reliability_report
from .modelsel import tune
from .preprocess import unmix_to_subject_space, whiten
from .solver import (SolverConfig, fit, load_decomposition, read_meta,
                     save_decomposition, save_model)
from .synth import SyntheticSpec, generate

SCENARIOS = {"I": "blocks_cross", "II": "triangle_circle_square",
             "blocks_cross": "blocks_cross",
             "triangle_circle_square": "triangle_circle_square"}
REGULARIZERS = {"uniform": "uniform_l1", "vector": "vector_l1",
                "nuclear": "nuclear"}

# option value parsers for key=value config files (flags win on conflict)
CONFIG_TYPES = {
    "q": int, "seed": int, "max_iter": int, "r_max": int,
    "phi": float, "rho": float, "sigma": float, "eps1": float, "eps2": float,
    "V": int, "N": int, "bootstrap": int,
    "method": str, "regularizer": str, "scenario": str, "format": str,
    "fisher": lambda s: s.lower() in ("1", "true", "yes"),
}


def _sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _hash_input(path: str) -> str:
    if os.path.isdir(path):
        digest = hashlib.sha256()
        for name in sorted(os.listdir(path)):
            full = os.path.join(path, name)
            if os.path.isfile(full):
                digest.update(name.encode())
                digest.update(_sha256_file(full).encode())
        return digest.hexdigest()
    return _sha256_file(path)


def write_manifest(out_dir: str, command: str, settings: dict,
                   inputs: dict | None = None) -> None:
    lines = [f"command={command}", f"version={__version__}",
             f"timestamp={time.strftime('%Y-%m-%dT%H:%M:%S%z')}"]
    for key in sorted(settings):
        lines.append(f"{key}={settings[key]}")
    for name, path in sorted((inputs or {}).items()):
        lines.append(f"input_{name}={path}")
        lines.append(f"input_{name}_sha256={_hash_input(path)}")
    with open(os.path.join(out_dir, "manifest"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_pgm(matrix: np.ndarray, path: str) -> None:
    """8-bit grayscale PGM with a symmetric diverging mapping: zero maps to
    mid-gray 128, +-max|value| to 255/1."""
    m = np.asarray(matrix, dtype=float)
    scale = float(np.max(np.abs(m)))
    if scale == 0:
        scale = 1.0
    pixels = np.round(128.0 + 127.0 * m / scale).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{m.shape[1]} {m.shape[0]}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def _apply_config(args: argparse.Namespace, argv: list[str]) -> None:
    """Fill unset options from a key=value config file; explicit flags win."""
    path = getattr(args, "config", None)
    if not path:
        return
    if not os.path.isfile(path):
        raise ValidationError("bad_config", f"config file {path!r} not found")
    explicit = set()
    for token in argv:
        if token.startswith("--"):
            explicit.add(token[2:].split("=", 1)[0].replace("-", "_"))
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or "=" not in line:
                continue
            key, value = (part.strip() for part in line.split("=", 1))
            dest = key.replace("-", "_")
            if dest in explicit or not hasattr(args, dest):
                continue
            caster = CONFIG_TYPES.get(dest, str)
            try:
                setattr(args, dest, caster(value))
            except ValueError as err:
                raise ValidationError("bad_config",
                                      f"config key {key!r}: {err}") from err


def _solver_config(args: argparse.Namespace) -> SolverConfig:
    return SolverConfig(phi=args.phi, rho=args.rho, r_max=args.r_max,
                        eps1=args.eps1, eps2=args.eps2,
                        max_iter=args.max_iter,
                        regularizer=REGULARIZERS[args.regularizer],
                        seed=args.seed)


def _add_solver_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--phi", type=float, default=0.0,
                     help="sparsity weight (default 0)")
    sub.add_argument("--rho", type=float, default=0.95,
                     help="rank-closeness level in (0,1) (default 0.95)")
    sub.add_argument("--r-max", type=int, default=10, dest="r_max",
                     help="per-source rank cap (default 10)")
    sub.add_argument("--eps1", type=float, default=1e-4,
                     help="mixing-matrix stopping tolerance")
    sub.add_argument("--eps2", type=float, default=1e-4,
                     help="source-matrix stopping tolerance")
    sub.add_argument("--max-iter", type=int, default=1000, dest="max_iter")
    sub.add_argument("--regularizer", choices=sorted(REGULARIZERS),
                     default="uniform")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--config", help="key=value file supplying defaults "
                                      "(explicit flags win)")


def _add_data_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--format", choices=["square", "edge"], default=None,
                     help="input layout (default: inferred)")
    sub.add_argument("--fisher", action="store_true",
                     help="apply the Fisher-Z transform to input correlations")


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def _write_truth(out_dir: str, truth, node_count: int, spec: SyntheticSpec) -> None:
    truth_dir = os.path.join(out_dir, "truth")
    os.makedirs(truth_dir, exist_ok=True)
    for ell in range(truth.sources.shape[0]):
        np.savetxt(os.path.join(truth_dir, f"S_{ell + 1}.csv"),
                   unvectorize(truth.sources[ell], node_count),
                   delimiter=",", fmt="%.17g")
    np.savetxt(os.path.join(truth_dir, "loadings.csv"), truth.loadings,
               delimiter=",", fmt="%.17g")
    with open(os.path.join(truth_dir, "spec"), "w") as fh:
        fh.write(f"V={node_count}\nq={truth.sources.shape[0]}\n"
                 f"N={truth.loadings.shape[0]}\nsigma={truth.noise_sd}\n"
                 f"scenario={spec.scenario}\nseed={spec.seed}\n")


def cmd_simulate(args) -> int:
    spec = SyntheticSpec(node_count=args.V, q=args.q, n_subjects=args.N,
                         sigma=args.sigma, scenario=SCENARIOS[args.scenario],
                         seed=args.seed)
    dataset, truth = generate(spec)
    os.makedirs(args.out, exist_ok=True)
    save_dataset(dataset, os.path.join(args.out, "dataset.csv"))
    _write_truth(args.out, truth, args.V, spec)
    write_manifest(args.out, "simulate",
                   {"scenario": spec.scenario, "V": args.V, "q": args.q,
                    "N": args.N, "sigma": args.sigma, "seed": args.seed})
    return 0


# ---------------------------------------------------------------------------
# decompose
# ---------------------------------------------------------------------------

def cmd_decompose(args) -> int:
    dataset = load_dataset(args.data, format=args.format, fisher=args.fisher)
    whitened = whiten(dataset, args.q)
    os.makedirs(args.out, exist_ok=True)

    if args.method == "locus":
        config = _solver_config(args)
        model = fit(whitened, args.q, config)
        save_model(model, args.out, config)
        sources = model.source_matrix()
    else:
        ica = fastica(whitened, args.q, max_iter=args.max_iter, seed=args.seed)
        loadings = unmix_to_subject_space(ica.mixing, whitened, ica.sources)
        meta = {"q": args.q, "method": "fastica", "seed": args.seed,
                "iterations": ica.iterations, "converged": ica.converged}
        save_decomposition(args.out, ica.sources, dataset.node_count,
                           loadings, ica.mixing, meta)
        sources = ica.sources

    for ell in range(sources.shape[0]):
        write_pgm(unvectorize(sources[ell], dataset.node_count),
                  os.path.join(args.out, f"S_{ell + 1}.pgm"))
    settings = {"method": args.method, "q": args.q, "seed": args.seed,
                "fisher": args.fisher}
    if args.method == "locus":
        settings.update(phi=args.phi, rho=args.rho, r_max=args.r_max,
                        regularizer=REGULARIZERS[args.regularizer],
                        max_iter=args.max_iter, eps1=args.eps1, eps2=args.eps2)
    write_manifest(args.out, "decompose", settings, inputs={"data": args.data})
    return 0


# ---------------------------------------------------------------------------
# tune
# ---------------------------------------------------------------------------

def _float_list(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as err:
        raise argparse.ArgumentTypeError(str(err)) from err


def cmd_tune(args) -> int:
    dataset = load_dataset(args.data, format=args.format, fisher=args.fisher)
    config = _solver_config(args)
    result = tune(dataset, args.q, args.phi_grid, args.rho_grid, config)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "grid.csv"), "w") as fh:
        fh.write("phi,rho,bic,iterations,converged\n")
        for cell in result.grid:
            bic_txt = "" if cell.error is not None else f"{cell.bic:.17g}"
            fh.write(f"{cell.phi:.17g},{cell.rho:.17g},{bic_txt},"
                     f"{cell.iterations},{str(cell.converged).lower()}\n")
    best_cell = next(c for c in result.grid
                     if (c.phi, c.rho) == result.best)
    with open(os.path.join(args.out, "best"), "w") as fh:
        fh.write(f"phi={result.best[0]:.17g}\nrho={result.best[1]:.17g}\n"
                 f"bic={best_cell.bic:.17g}\n")
    write_manifest(args.out, "tune",
                   {"q": args.q, "phi_grid": ",".join(map(str, args.phi_grid)),
                    "rho_grid": ",".join(map(str, args.rho_grid)),
                    "seed": args.seed,
                    "regularizer": REGULARIZERS[args.regularizer]},
                   inputs={"data": args.data})
    return 0


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def _read_truth(truth_dir: str) -> tuple[np.ndarray, np.ndarray | None]:
    spec = read_meta(os.path.join(truth_dir, "spec"))
    q = int(spec["q"])
    rows = []
    for ell in range(q):
        m = np.loadtxt(os.path.join(truth_dir, f"S_{ell + 1}.csv"),
                       delimiter=",", ndmin=2)
        rows.append(vectorize(m))
    loadings_path = os.path.join(truth_dir, "loadings.csv")
    loadings = None
    if os.path.isfile(loadings_path):
        loadings = np.loadtxt(loadings_path, delimiter=",", ndmin=2)
    return np.vstack(rows), loadings


def _bootstrap_fit_fn(method: str, q: int, args):
    """One-replicate decomposition returning a (q, p) source matrix."""
    if method == "locus":
        base = _solver_config(args)

        def run(ds, seed):
            from dataclasses import replace
            model = fit(whiten(ds, q), q, replace(base, seed=seed))
            return model.source_matrix()
    else:
        def run(ds, seed):
            return fastica(whiten(ds, q), q, max_iter=args.max_iter,
                           seed=seed).sources
    return run


def cmd_evaluate(args) -> int:
    truth, truth_loadings = _read_truth(args.truth)
    os.makedirs(args.out, exist_ok=True)
    inputs = {"truth": args.truth}

    if args.fits:
        with open(os.path.join(args.out, "match.csv"), "w") as fh:
            fh.write("fit,source,matched,sign,source_corr,loading_corr\n")
            for fit_dir in args.fits:
                dec = load_decomposition(fit_dir)
                est_loadings = dec["a"]
                if (truth_loadings is None
                        or est_loadings.shape[0] != truth_loadings.shape[0]):
                    est_loadings = None
                match = match_sources(truth, dec["sources"],
                                      truth_loadings if est_loadings is not None else None,
                                      est_loadings)
                for ell in range(truth.shape[0]):
                    lc = ("" if match.loading_corr is None
                          else f"{match.loading_corr[ell]:.6f}")
                    fh.write(f"{os.path.basename(os.path.normpath(fit_dir))},"
                             f"{ell + 1},{match.permutation[ell] + 1},"
                             f"{int(match.signs[ell])},"
                             f"{match.per_source_corr[ell]:.6f},{lc}\n")
                inputs[f"fit_{os.path.basename(os.path.normpath(fit_dir))}"] = fit_dir

    if args.bootstrap:
        if not args.data:
            raise ValidationError("missing_data",
                                  "--bootstrap needs --data to refit from")
        dataset = load_dataset(args.data, format=args.format,
                               fisher=args.fisher)
        q = truth.shape[0]
        methods = args.method or ["locus"]
        with open(os.path.join(args.out, "reliability.csv"), "w") as fh:
            fh.write("method,source,ri_pearson,ri_jaccard,n_success,B\n")
            for method in methods:
                boot = bootstrap_replicates(dataset,
                                            _bootstrap_fit_fn(method, q, args),
                                            args.bootstrap, seed=args.seed)
                if boot.n_success < 2:
                    raise DegeneracyError("bootstrap_failed",
                                          f"{method}: only {boot.n_success} "
                                          "replicates succeeded")
                pearson = reliability_report(truth, boot.estimates, "pearson")
                jaccard = reliability_report(truth, boot.estimates, "jaccard",
                                             args.top_fraction)
                for ell in range(q):
                    fh.write(f"{method},{ell + 1},"
                             f"{pearson.per_source_ri[ell]:.6f},"
                             f"{jaccard.per_source_ri[ell]:.6f},"
                             f"{boot.n_success},{args.bootstrap}\n")
        inputs["data"] = args.data

    write_manifest(args.out, "evaluate",
                   {"bootstrap": args.bootstrap or 0, "seed": args.seed},
                   inputs=inputs)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="locus",
        description="Sparse low-rank source separation for connectivity matrices")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a synthetic dataset")
    sim.add_argument("--scenario", choices=sorted(SCENARIOS), default="I")
    sim.add_argument("--V", type=int, default=50)
    sim.add_argument("--q", type=int, default=3)
    sim.add_argument("--N", type=int, default=100)
    sim.add_argument("--sigma", type=float, default=1.0)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", required=True)
    sim.set_defaults(func=cmd_simulate)

    dec = sub.add_parser("decompose", help="fit a decomposition to a dataset")
    dec.add_argument("data", help="edge CSV file or directory of square CSVs")
    dec.add_argument("--method", choices=["locus", "fastica"], default="locus")
    dec.add_argument("--q", type=int, required=True)
    dec.add_argument("--out", required=True)
    _add_solver_flags(dec)
    _add_data_flags(dec)
    dec.set_defaults(func=cmd_decompose)

    tun = sub.add_parser("tune", help="BIC grid search over (phi, rho)")
    tun.add_argument("data")
    tun.add_argument("--q", type=int, required=True)
    tun.add_argument("--phi-grid", type=_float_list, required=True,
                     dest="phi_grid", help="comma-separated phi values")
    tun.add_argument("--rho-grid", type=_float_list, required=True,
                     dest="rho_grid", help="comma-separated rho values")
    tun.add_argument("--out", required=True)
    _add_solver_flags(tun)
    _add_data_flags(tun)
    tun.set_defaults(func=cmd_tune)

    ev = sub.add_parser("evaluate",
                        help="score fits against a truth directory")
    ev.add_argument("fits", nargs="*", help="fit directories to score")
    ev.add_argument("--truth", required=True)
    ev.add_argument("--out", required=True)
    ev.add_argument("--bootstrap", type=int, default=0,
                    help="number of bootstrap refits for reliability")
    ev.add_argument("--data", help="dataset to resample when bootstrapping")
    ev.add_argument("--method", action="append",
                    choices=["locus", "fastica"],
                    help="method(s) to bootstrap (repeatable)")
    ev.add_argument("--top-fraction", type=float, default=0.01,
                    dest="top_fraction",
                    help="Jaccard support size as a fraction of edges")
    _add_solver_flags(ev)
    _add_data_flags(ev)
    ev.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if hasattr(args, "config"):
            _apply_config(args, argv)
        return args.func(args)
    except ValidationError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except (DegeneracyError, NumericError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 4
    except LocusError as err:
        print(f"error: {err}", file=sys.stderr)
        return 4
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
