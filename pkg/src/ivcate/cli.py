"""Command-line interface: fit, simulate, coverage, verify.

Configuration is a flat JSON key-value file; command-line flags win over
config values. Every report embeds the resolved configuration, the seed and
the library version, and is written as sorted-key JSON so identical runs
produce byte-identical files. The environment variable IVCATE_SEED supplies
the seed when neither flag nor config sets one.
"""
from __future__ import annotations

import json
import os
import sys

import click
import numpy as np

from . import __version__
from .ate import estimate_dmlateiv, estimate_dr_ate, weighted_mean_ci
from .crossfit import NuisanceLearners, compute_residuals, fit_nuisances
from .dataset import CsvSchema, load_csv, make_splits
from .dgp import DgpSpec, generate
from .dmliv import dmliv_reduction, fit_dmliv, overlap_diagnostic
from .driv import (
    _rw_labels_weights,
    driv_pseudo_outcome,
    fit_driv,
    fit_driv_rw,
    fit_projected_driv_rw,
    fit_theta_pre,
)
from .exceptions import IvCateError, ValidationError
from .harness import run_coverage, run_orthogonality_matrix
from .inference import ols_robust

VARIANTS = ("dmlateiv", "dmliv", "driv", "driv_rw", "projected_driv_rw")


def _resolve_seed(seed, config):
    if seed is not None:
        return int(seed)
    if "seed" in config:
        return int(config["seed"])
    env = os.environ.get("IVCATE_SEED")
    if env is not None:
        return int(env)
    return 0


def _load_config(path):
    if path is None:
        return {}
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ValidationError("config file must hold a flat JSON object")
    return cfg


def _opt(flag_value, config, key, default):
    if flag_value is not None:
        return flag_value
    return config.get(key, default)


def _write_report(obj, out):
    text = json.dumps(obj, sort_keys=True, indent=2)
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
    else:
        click.echo(text)


def _fail(exc):
    err = {"error": {"type": type(exc).__name__, "message": str(exc)}}
    click.echo(json.dumps(err, sort_keys=True))
    sys.exit(1)


def _parse_space(space):
    if space.startswith("linear_subset="):
        cols = [int(c) for c in space.split("=", 1)[1].split(",") if c != ""]
        if not cols:
            raise ValidationError("linear_subset needs at least one column")
        return "linear_subset", cols
    mapped = {"constant": "constant", "linear": "linear",
              "forest": "tree_ensemble", "lasso": "lasso_linear"}
    if space not in mapped:
        raise ValidationError(f"unknown space {space!r}")
    return mapped[space], None


@click.group()
@click.version_option(version=__version__)
def main():
    """Heterogeneous effect estimation with instruments."""


@main.command("fit")
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--outcome", default=None)
@click.option("--treatment", default=None)
@click.option("--instrument", default=None)
@click.option("--variant", type=click.Choice(VARIANTS), default=None)
@click.option("--space", default=None)
@click.option("--folds", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--level", type=float, default=None)
@click.option("--beta-min", type=float, default=None)
@click.option("--fixed-r", type=float, default=None)
@click.option("--binary", is_flag=True, default=False)
@click.option("--nuisances", type=click.Choice(["linear", "boosted"]),
              default=None)
@click.option("--threads", type=int, default=1,
              help="Reserved; results are identical for any value.")
@click.option("--out", type=click.Path(), default=None)
def cmd_fit(data_path, config_path, outcome, treatment, instrument, variant,
            space, folds, seed, level, beta_min, fixed_r, binary, nuisances,
            threads, out):
    """Estimate effects from a CSV file and write a JSON report."""
    try:
        cfg = _load_config(config_path)
        outcome = _opt(outcome, cfg, "outcome", "y")
        treatment = _opt(treatment, cfg, "treatment", "t")
        instrument = _opt(instrument, cfg, "instrument", "z")
        variant = _opt(variant, cfg, "variant", "driv")
        space = _opt(space, cfg, "space", "linear")
        folds = int(_opt(folds, cfg, "folds", 2))
        level = float(_opt(level, cfg, "level", 0.95))
        beta_min = _opt(beta_min, cfg, "beta_min", None)
        fixed_r = _opt(fixed_r, cfg, "fixed_r", None)
        binary = binary or bool(cfg.get("binary", False))
        nuisances = _opt(nuisances, cfg, "nuisances", "linear")
        seed = _resolve_seed(seed, cfg)

        schema = CsvSchema(outcome=outcome, treatment=treatment,
                           instrument=instrument, binary=binary)
        data = load_csv(data_path, schema)
        specs = (NuisanceLearners.boosted(seed=seed)
                 if nuisances == "boosted"
                 else NuisanceLearners.linear(seed=seed))
        plan = make_splits(data.n, folds, seed=seed)
        nuis = fit_nuisances(data, specs, plan, fixed_r=fixed_r)
        res = compute_residuals(data, nuis)

        resolved = {
            "data": str(data_path), "outcome": outcome,
            "treatment": treatment, "instrument": instrument,
            "variant": variant, "space": space, "folds": folds,
            "seed": seed, "level": level, "beta_min": beta_min,
            "fixed_r": fixed_r, "binary": binary, "nuisances": nuisances,
        }
        report = {"config": resolved, "version": __version__}

        if variant == "dmlateiv":
            report["ate"] = estimate_dmlateiv(res, level=level).to_dict()
        else:
            space_name, feature_idx = _parse_space(space)
            if variant == "dmliv":
                model = fit_dmliv(data, nuis, space=space_name,
                                  feature_idx=feature_idx, seed=seed)
                labels, weights = dmliv_reduction(res)
                ate = weighted_mean_ci(labels, weights, level=level)
            else:
                fit_theta_pre(data, specs, plan, nuis, space="linear",
                              fixed_r=fixed_r, seed=seed)
                if variant == "driv":
                    pseudo = driv_pseudo_outcome(res, nuis, beta_min=beta_min)
                    report["clip_count"] = pseudo.clip_count
                    report["beta_min_used"] = pseudo.beta_min
                    model = fit_driv(pseudo, data.X, space=space_name,
                                     feature_idx=feature_idx,
                                     feature_names=data.column_names,
                                     seed=seed)
                    ate = estimate_dr_ate(pseudo, level=level)
                    if space_name in ("linear", "linear_subset"):
                        idx = feature_idx or list(range(data.d))
                        proj = ols_robust(
                            pseudo.y_dr, data.X[:, idx], level=level,
                            names=[data.column_names[j] for j in idx],
                        )
                        report["projection"] = proj.to_dict()
                elif variant == "driv_rw":
                    model = fit_driv_rw(res, nuis, space=space_name,
                                        X=data.X, feature_idx=feature_idx,
                                        feature_names=data.column_names,
                                        seed=seed)
                    labels, weights = _rw_labels_weights(
                        res, nuis, res.z_res, nuis.beta, 1e-12)
                    ate = weighted_mean_ci(labels, weights, level=level)
                else:
                    model = fit_projected_driv_rw(
                        res, nuis, space=space_name, X=data.X,
                        feature_idx=feature_idx,
                        feature_names=data.column_names, seed=seed)
                    labels, weights = _rw_labels_weights(
                        res, nuis, res.z_pi_res, nuis.v, 1e-12)
                    ate = weighted_mean_ci(labels, weights, level=level)
            report["ate"] = ate.to_dict()
            report["model"] = model.to_json_dict()
            report["overlap"] = overlap_diagnostic(nuis, X=data.X).to_dict()
        _write_report(report, out)
    except IvCateError as exc:
        _fail(exc)


@main.command("simulate")
@click.option("--family", required=True,
              type=click.Choice(["tripadvisor", "coverage", "nlsym"]))
@click.option("--n", type=int, default=10000)
@click.option("--seed", type=int, default=None)
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(),
              help="Output prefix; writes <out>.csv and <out>_truth.json")
def cmd_simulate(family, n, seed, config_path, out):
    """Generate a synthetic dataset and its ground truth."""
    try:
        cfg = _load_config(config_path)
        seed = _resolve_seed(seed, cfg)
        spec = DgpSpec(family=family, n=n, seed=seed)
        data, truth = generate(spec)
        data.to_csv(out + ".csv")
        _write_report({
            "config": spec.to_dict(), "version": __version__,
            "true_ate": truth.true_ate, "precision": truth.precision,
            "info": truth.info,
        }, out + "_truth.json")
    except IvCateError as exc:
        _fail(exc)


@main.command("coverage")
@click.option("--family", default="coverage",
              type=click.Choice(["tripadvisor", "coverage", "nlsym"]))
@click.option("--n", type=int, default=100000)
@click.option("--replicates", type=int, default=100)
@click.option("--estimators", default="dmlateiv,driv")
@click.option("--seed", type=int, default=None)
@click.option("--level", type=float, default=0.95)
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--threads", type=int, default=1)
@click.option("--out", type=click.Path(), default=None)
def cmd_coverage(family, n, replicates, estimators, seed, level, config_path,
                 threads, out):
    """Monte Carlo coverage experiment over fresh replicates."""
    try:
        cfg = _load_config(config_path)
        seed = _resolve_seed(seed, cfg)
        ests = [e.strip() for e in estimators.split(",") if e.strip()]
        spec = DgpSpec(family=family, n=n, seed=seed)
        reports = run_coverage(spec, ests, R=replicates, seed=seed,
                               level=level)
        _write_report({
            "config": {"family": family, "n": n, "replicates": replicates,
                       "estimators": ests, "seed": seed, "level": level},
            "version": __version__,
            "reports": {e: r.to_dict() for e, r in reports.items()},
        }, out)
    except IvCateError as exc:
        _fail(exc)


@main.command("verify")
@click.option("--matrix", default="full",
              type=click.Choice(["lemmas", "coverage", "full"]))
@click.option("--n", type=int, default=20000,
              help="Sample size for the orthogonality checks.")
@click.option("--n-coverage", type=int, default=100000)
@click.option("--replicates", type=int, default=100)
@click.option("--seed", type=int, default=None)
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--threads", type=int, default=1)
@click.option("--out", type=click.Path(), default=None)
def cmd_verify(matrix, n, n_coverage, replicates, seed, config_path, threads,
               out):
    """Run the orthogonality matrix and/or the coverage replication.

    Exits nonzero if any asserted threshold fails.
    """
    try:
        cfg = _load_config(config_path)
        seed = _resolve_seed(seed, cfg)
        report = {
            "config": {"matrix": matrix, "n": n, "n_coverage": n_coverage,
                       "replicates": replicates, "seed": seed},
            "version": __version__,
        }
        ok = True
        if matrix in ("lemmas", "full"):
            reports, passed = run_orthogonality_matrix(n=n, seed=seed)
            report["orthogonality"] = [r.to_dict() for r in reports]
            ok = ok and passed
        if matrix in ("coverage", "full"):
            spec = DgpSpec(family="coverage", n=n_coverage, seed=seed)
            cov = run_coverage(spec, ["dmlateiv", "driv"], R=replicates,
                               seed=seed, keep_rows=False)
            passed = (cov["driv"].coverage >= 0.85
                      and cov["dmlateiv"].coverage <= 0.60
                      and cov["dmlateiv"].bias > 0.0)
            report["coverage"] = {e: r.to_dict() for e, r in cov.items()}
            report["coverage_passed"] = passed
            ok = ok and passed
        report["passed"] = ok
        _write_report(report, out)
        if not ok:
            sys.exit(2)
    except IvCateError as exc:
        _fail(exc)


if __name__ == "__main__":
    main()
