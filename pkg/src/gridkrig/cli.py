"""Command-line entry points.

Subcommands: ``simulate``, ``estimate``, ``krige``, ``study
replicate|map|converge|distcheck|realdata`` and ``ingest-check``.  Global
options pick the config file (TOML or JSON), master seed, output directory
and worker count.  Exit codes: 0 success, 2 validation error, 3 numerical
failure, 4 threshold breach in ``--check`` mode.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .covmodel import model_spec_from_config
from .errors import NumericalError, ValidationError
from .estimate import empirical_cov
from .gaussfield import FieldSample, factorize
from .grid import dyadic_grid, eval_grid, lag_table, sample_prediction_sites
from .covmodel import cov_matrix
from . import harness, rng as rngmod
from .kriging import empirical_simple, theoretical_simple

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_CHECK = 4


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    if path.endswith(".json"):
        with open(path) as fh:
            return json.load(fh)
    try:
        import tomllib  # python >= 3.11
    except ModuleNotFoundError:
        import tomli as tomllib
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _experiment_config(raw: dict, args) -> harness.ExperimentConfig:
    raw = dict(raw)
    raw.setdefault("model", {"family": "tpl", "theta": 5.0})
    study = dict(raw.get("study", {}))
    if args.seed is not None:
        study["seed"] = args.seed
    if getattr(args, "jobs", None):
        study["jobs"] = args.jobs
    raw["study"] = study
    return harness.experiment_config_from_dict(raw)


def _out_dir(args) -> str:
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    return out


def cmd_simulate(args) -> int:
    raw = _load_config(args.config)
    spec = model_spec_from_config(dict(raw.get("model", {"family": "tpl", "theta": 5.0})))
    j = int(raw.get("study", {}).get("j_train", args.grid_scale))
    sites = dyadic_grid(j)
    side = int(np.sqrt(int(raw.get("study", {}).get("n_eval", 1681))))
    model = spec.resolve(eval_grid_side=side, train_scale=j)
    seed = args.seed if args.seed is not None else 0
    factor = factorize(cov_matrix(model, sites))
    values = factor.sample(rngmod.stream(seed, 0, "field"))
    out = _out_dir(args)
    FieldSample(sites, values).to_csv(os.path.join(out, "field.csv"))
    print(f"wrote {os.path.join(out, 'field.csv')} "
          f"(n={len(sites)}, theta_domain={model.theta:.6g}, jitter={factor.jitter})")
    return EXIT_OK


def cmd_estimate(args) -> int:
    raw = _load_config(args.config)
    cfg = _experiment_config(raw, args)
    out = _out_dir(args)
    harness.write_covariance_csv(cfg, os.path.join(out, "covariance.csv"))
    print(f"wrote {os.path.join(out, 'covariance.csv')} (reps={cfg.reps})")
    return EXIT_OK


def cmd_krige(args) -> int:
    raw = _load_config(args.config)
    cfg = _experiment_config(raw, args)
    model = cfg.resolve_model()
    est_cfg = cfg.resolve_estimation(model)
    train = dyadic_grid(cfg.j_train)
    inputs = sample_prediction_sites(cfg.d, cfg.site_config, cfg.split, seed=cfg.seed)
    evals = eval_grid(cfg.n_eval)
    x_train = factorize(cov_matrix(model, train)).sample(rngmod.stream(cfg.seed, 0, "train"))
    union = harness._union_sites(inputs, evals)
    x_test = factorize(cov_matrix(model, union)).sample(rngmod.stream(cfg.seed, 0, "test"))
    obs = x_test[: len(inputs)]
    if args.empirical:
        emp = empirical_cov(FieldSample(train, x_train), lag_table(train), est_cfg)
        pred = empirical_simple(emp, inputs)
    else:
        pred = theoretical_simple(model, inputs)
    surface = pred.predict_many(evals, obs)
    out = _out_dir(args)
    path = os.path.join(out, "prediction.csv")
    with open(path, "w", newline="") as fh:
        fh.write("x,y,prediction\n")
        for (x, y), v in zip(evals.coords, surface):
            fh.write(f"{x:.17g},{y:.17g},{v:.17g}\n")
    print(f"wrote {path} ({'empirical' if args.empirical else 'theoretical'} predictor)")
    return EXIT_OK


def _check_band(summary: dict, check: dict) -> list[str]:
    """Compare study aggregates against configured expectations."""
    breaches = []
    tol = float(check.get("tolerance", 0.08))
    for kind in ("theoretical", "empirical"):
        key = f"expected_{kind}"
        if key in check:
            got = summary[kind]["mean"]
            want = float(check[key])
            if abs(got - want) > tol:
                breaches.append(f"{kind} mean {got:.3f} outside {want:.3f} +- {tol}")
    if "max_gap" in check:
        gap = summary["empirical"]["mean"] - summary["theoretical"]["mean"]
        if gap > float(check["max_gap"]):
            breaches.append(f"empirical-theoretical gap {gap:.3f} > {check['max_gap']}")
    return breaches


def cmd_study_replicate(args, map_outputs: bool = False) -> int:
    raw = _load_config(args.config)
    cfg = _experiment_config(raw, args)
    out = _out_dir(args)
    if cfg.theta_sweep:
        return _run_sweep(cfg, raw, out, args)
    report = harness.run_replication_study(cfg)
    harness.write_amse_csv(report, os.path.join(out, "amse.csv"))
    harness.write_report_json(report, os.path.join(out, "report.json"))
    harness.write_covariance_csv(cfg, os.path.join(out, "covariance.csv"),
                                 reps=min(cfg.reps, 100))
    if map_outputs:
        harness.write_mse_map_csv(report, os.path.join(out, "mse_map.csv"))
        harness.write_mse_map_pgm(report, os.path.join(out, "mse_map.pgm"))
    s = report.summary
    print(f"theoretical AMSE {s['theoretical']['mean']:.4f} (std {s['theoretical']['std']:.4f})")
    print(f"empirical   AMSE {s['empirical']['mean']:.4f} (std {s['empirical']['std']:.4f})")
    if report.failures:
        print(f"{len(report.failures)} replication(s) failed and were excluded")
    if args.check:
        breaches = _check_band(s, dict(raw.get("check", {})))
        for b in breaches:
            print(f"CHECK FAIL: {b}")
        if breaches:
            return EXIT_CHECK
        print("CHECK PASS")
    return EXIT_OK


def _run_sweep(cfg, raw, out, args) -> int:
    reports = harness.run_theta_sweep(cfg)
    harness.write_sweep_csv(reports, os.path.join(out, "sweep.csv"))
    breaches = []
    check = dict(raw.get("check", {}))
    targets = dict(check.get("targets", {}))
    for theta in sorted(reports):
        s = reports[theta].summary
        print(f"theta={theta:g}: theoretical {s['theoretical']['mean']:.4f} "
              f"(std {s['theoretical']['std']:.4f}), empirical "
              f"{s['empirical']['mean']:.4f} (std {s['empirical']['std']:.4f})")
        row_check = dict(check)
        row_check.update(targets.get(f"{theta:g}", {}))
        row_check.pop("targets", None)
        if args.check:
            breaches += [f"theta={theta:g}: {b}" for b in _check_band(s, row_check)]
    if args.check:
        for b in breaches:
            print(f"CHECK FAIL: {b}")
        if breaches:
            return EXIT_CHECK
        print("CHECK PASS")
    return EXIT_OK


def cmd_study_map(args) -> int:
    return cmd_study_replicate(args, map_outputs=True)


def cmd_study_converge(args) -> int:
    raw = _load_config(args.config)
    cfg = _experiment_config(raw, args)
    conv = dict(raw.get("converge", {}))
    j_values = [int(j) for j in conv.get("j_values", [2, 3, 4])]
    reps = int(conv.get("reps", 100))
    model = cfg.resolve_model()
    report = harness.run_convergence_study(
        model, j_values, reps=reps, seed=cfg.seed,
        d=cfg.d, n_eval=int(conv.get("n_eval", 441)),
        j1=cfg.j1, cutoff=cfg.cutoff,
        excess_reps=int(conv["excess_reps"]) if "excess_reps" in conv else None,
    )
    for rec in report.records:
        print(f"J={rec.J} n={rec.n}: sup-error p90 {rec.sup_error_p90:.4f}, "
              f"median excess {rec.median_excess:.3e}")
    print(f"sup-error slope {report.sup_slope:.3f}; "
          f"excess non-increasing: {report.excess_non_increasing}")
    out = _out_dir(args)
    with open(os.path.join(out, "convergence.json"), "w") as fh:
        json.dump({"records": [vars(r) for r in report.records],
                   "sup_slope": report.sup_slope,
                   "excess_non_increasing": report.excess_non_increasing},
                  fh, indent=2, default=float)
        fh.write("\n")
    if args.check:
        band = conv.get("slope_band", [-0.65, -0.35])
        ok = band[0] <= report.sup_slope <= band[1] and report.excess_non_increasing
        print("CHECK PASS" if ok else f"CHECK FAIL: slope {report.sup_slope:.3f} "
                                      f"vs band {band} / excess monotononicity")
        if not ok:
            return EXIT_CHECK
    return EXIT_OK


def cmd_study_distcheck(args) -> int:
    raw = _load_config(args.config)
    cfg = _experiment_config(raw, args)
    dist = dict(raw.get("distcheck", {}))
    model = cfg.resolve_model()
    report = harness.run_distribution_checks(
        model, J=int(dist.get("j", 2)), seed=cfg.seed,
        reps_moments=int(dist.get("reps_moments", 2000)),
        reps_ks=int(dist.get("reps_ks", 5000)),
        j1=cfg.j1, cutoff=cfg.cutoff,
    )
    for row in report.rows:
        ks = "-" if row.ks_gamma is None else f"{row.ks_gamma:.3f}"
        status = "ok" if (row.weights_positive and row.laplacian_bound_ok
                          and row.mean_ok and row.ks_ok is not False) else "FAIL"
        print(f"h={row.h:.4f} n_h={row.n_h}: weights>0 {row.weights_positive}, "
              f"bound {row.laplacian_bound_ok}, mean {row.mean_ok}, KS {ks} [{status}]")
    if args.check and not report.all_ok:
        return EXIT_CHECK
    return EXIT_OK


def cmd_study_realdata(args) -> int:
    raw = _load_config(args.config)
    rd = dict(raw.get("realdata", {}))
    if args.train_file:
        rd["train_file"] = args.train_file
    if args.test_file:
        rd["test_file"] = args.test_file
    for key in ("train_file", "test_file"):
        if key not in rd:
            raise ValidationError(f"realdata study needs {key} (flag or config)")
    report = harness.run_real_data_study(
        rd["train_file"], rd["test_file"],
        j_sub=int(rd.get("j_sub", 4)), d=int(rd.get("d", 10)),
        seed=args.seed if args.seed is not None else int(rd.get("seed", 0)),
        j1=int(rd.get("j1", 6)), cutoff=rd.get("cutoff"),
        nu_min=rd.get("nu_min", 0.35), theta_fixed=rd.get("theta_fixed"),
        with_parametric=bool(rd.get("with_parametric", True)),
    )
    out = _out_dir(args)
    with open(os.path.join(out, "realdata.json"), "w") as fh:
        json.dump({"summary": report.summary, "metadata": report.metadata},
                  fh, indent=2, default=float)
        fh.write("\n")
    for name, stats in report.summary.items():
        print(f"{name}: mean {stats['mean']:.4f} std {stats['std']:.4f}")
    return EXIT_OK


def cmd_ingest_check(args) -> int:
    sites, fields, meta = harness.ingest_grid_csv(args.file)
    print(f"{args.file}: {len(sites)} sites, {len(fields)} day(s); "
          f"x in [{meta['x_offset']:.6g}, {meta['x_offset'] + meta['x_scale']:.6g}], "
          f"y in [{meta['y_offset']:.6g}, {meta['y_offset'] + meta['y_scale']:.6g}]")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gridkrig",
                                description="Nonparametric simple kriging toolkit")
    p.add_argument("--config", help="TOML or JSON configuration file")
    p.add_argument("--seed", type=int, default=None, help="master seed (overrides config)")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--jobs", type=int, default=None, help="parallel replication workers")
    p.add_argument("--check", action="store_true",
                   help="verify configured thresholds; exit 4 on breach")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="simulate one field on a dyadic grid")
    sp.add_argument("--grid-scale", type=int, default=3)
    sp.set_defaults(fn=cmd_simulate)

    sp = sub.add_parser("estimate", help="covariance estimation diagnostics")
    sp.set_defaults(fn=cmd_estimate)

    sp = sub.add_parser("krige", help="one prediction surface")
    sp.add_argument("--empirical", action="store_true",
                    help="use the plug-in predictor instead of the true covariance")
    sp.set_defaults(fn=cmd_krige)

    st = sub.add_parser("study", help="replication-style experiments")
    st_sub = st.add_subparsers(dest="study_kind", required=True)
    st_sub.add_parser("replicate").set_defaults(fn=cmd_study_replicate)
    st_sub.add_parser("map").set_defaults(fn=cmd_study_map)
    st_sub.add_parser("converge").set_defaults(fn=cmd_study_converge)
    st_sub.add_parser("distcheck").set_defaults(fn=cmd_study_distcheck)
    rd = st_sub.add_parser("realdata")
    rd.add_argument("--train-file", default=None)
    rd.add_argument("--test-file", default=None)
    rd.set_defaults(fn=cmd_study_realdata)

    sp = sub.add_parser("ingest-check", help="validate an ingestion CSV")
    sp.add_argument("file")
    sp.set_defaults(fn=cmd_ingest_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
