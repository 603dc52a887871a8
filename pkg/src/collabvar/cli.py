"""Command-line driver: ``collabvar {simulate,fit,protocol,attack,bench}``.

Settings come from built-in defaults, then an optional YAML config file
(``--config``; a previous run's ``manifest.json`` also works), then flags.
Every run writes ``manifest.json`` atomically into its output directory,
which defaults to ``$COLLABVAR_OUTPUT_DIR`` or ``./collabvar-out``.

Exit codes: 0 success, 2 config error, 3 numerical failure,
4 attack inconclusive.
"""
from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import yaml

from collabvar import __version__
from collabvar.errors import (CollabVarError, ConfigError, IngestionError, InvalidLagError,
                              InvalidRegimeError)

OUTPUT_ENV = "COLLABVAR_OUTPUT_DIR"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_INCONCLUSIVE = 0, 2, 3, 4


class AttackInconclusive(Exception):
    pass


# ------------------------------------------------------------------ schema

def _lags(v):
    if isinstance(v, str):
        v = [int(x) for x in v.replace(",", " ").split()]
    elif isinstance(v, int):
        v = list(range(1, v + 1))
    v = [int(x) for x in v]
    if not v or any(x < 1 for x in v) or sorted(set(v)) != v:
        raise ValueError("must be strictly increasing positive integers")
    return v


def _noise(v):
    if isinstance(v, str):
        v = [v]
    out = []
    for item in v or []:
        if isinstance(item, str):
            fam, _, b = item.partition(":")
            item = (fam, float(b))
        fam, b = item
        if fam not in ("laplace", "gaussian", "uniform") or float(b) < 0:
            raise ValueError(f"bad noise setting {item!r}")
        out.append([str(fam), float(b)])
    return out


def _pos_int(v):
    v = int(v)
    if v < 1:
        raise ValueError("must be a positive integer")
    return v


def _nonneg(v):
    v = float(v)
    if v < 0:
        raise ValueError("must be non-negative")
    return v


def _pos(v):
    v = float(v)
    if v <= 0:
        raise ValueError("must be positive")
    return v


def _choice(*options):
    def check(v):
        if v not in options:
            raise ValueError(f"must be one of {', '.join(options)}")
        return v
    return check


def _opt(conv):
    return lambda v: None if v is None else conv(v)


COMMON = {"seed": (int, 0)}

SCHEMAS = {
    "simulate": {
        "scenario": (_choice("var2", "var10", "random"), "var2"),
        "T": (_pos_int, 20_000),
        "n": (_pos_int, 2),
        "lags": (_lags, [1, 2]),
        "burn_in": (int, 500),
    },
    "fit": {
        "data": (str, None),
        "lags": (_lags, [1, 2]),
        "estimator": (_choice("admm_distributed", "admm_central", "ls"), "admm_distributed"),
        "lam": (_nonneg, 0.0),
        "rho": (_pos, 1.0),
        "max_iter": (_pos_int, 1000),
        "tol": (_pos, 1e-6),
        "transcript": (bool, False),
    },
    "protocol": {
        "demo": (_choice("ac", "commodity", "inverse", "karr"), "ac"),
        "m": (_pos_int, 4),
        "k": (_pos_int, 2),
        "s": (_pos_int, 2),
        "g": (_opt(int), None),
    },
    "attack": {
        "mode": (_choice("predict", "grid", "reconstruct"), "predict"),
        "attacker": (_choice("central", "owner"), "owner"),
        "T": (_pos_int, 30),
        "n": (_pos_int, 2),
        "p": (_pos_int, 1),
        "k": (_opt(_pos_int), None),
        "noise": (_choice("none", "coefficients", "intermediate"), "none"),
        "noise_b": (_nonneg, 0.1),
        "lam": (_nonneg, 0.1),
        "starts": (_pos_int, 20),
        "grid_T": (lambda v: [int(x) for x in v], list(range(500, 5001, 500))),
        "grid_n": (lambda v: [int(x) for x in v], list(range(2, 21))),
        "grid_p": (lambda v: [int(x) for x in v], list(range(1, 9))),
    },
    "bench": {
        "scenario": (_choice("var2", "var10", "random2", "random10", "solar"), "var2"),
        "data": (_opt(str), None),
        "replications": (_pos_int, 100),
        "T": (_pos_int, 20_000),
        "noise": (_noise, []),
        "lam": (_opt(_nonneg), None),
        "rho": (_pos, 1.0),
        "max_iter": (_pos_int, 50),
        "test_fraction": (float, 0.2),
        "workers": (_pos_int, 1),
        "plots": (bool, True),
    },
}


def resolve_config(command, file_cfg: dict, flags: dict) -> dict:
    """Merge defaults, file values and flags; collect every schema violation."""
    schema = {**COMMON, **SCHEMAS[command]}
    problems = []
    if not isinstance(file_cfg, dict):
        raise ConfigError(["config file must hold a key-value mapping"])
    for key in file_cfg:
        if key not in schema:
            problems.append(f"{key}: unknown setting for '{command}'")
    merged = {}
    for key, (conv, default) in schema.items():
        raw = default
        if key in file_cfg:
            raw = file_cfg[key]
        if flags.get(key) is not None:
            raw = flags[key]
        try:
            merged[key] = conv(raw) if raw is not None else None
        except (TypeError, ValueError) as exc:
            problems.append(f"{key}: {exc} (got {raw!r})")
    if command == "fit" and not merged.get("data"):
        problems.append("data: a panel CSV is required")
    if command == "bench":
        if merged.get("scenario") == "solar" and not merged.get("data"):
            problems.append("data: the solar scenario needs a CSV path")
        tf = merged.get("test_fraction")
        if tf is not None and not 0 < tf < 1:
            problems.append("test_fraction: must lie in (0, 1)")
    if command == "protocol" and merged.get("demo") == "ac" and merged.get("m") is not None:
        if merged["m"] % 2:
            problems.append("m: the two-party product needs an even inner dimension")
    if problems:
        raise ConfigError(problems)
    return merged


def load_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        data = yaml.safe_load(Path(path).read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError([f"config: cannot read {path}: {exc}"]) from exc
    if isinstance(data, dict) and "config" in data and "subcommand" in data:
        data = data["config"]  # a manifest from an earlier run
    return data


# ---------------------------------------------------------------- commands

class Run:
    def __init__(self, out: Path):
        self.out = out
        self.outputs = []

    def path(self, name) -> Path:
        p = self.out / name
        self.outputs.append(name)
        return p


def cmd_simulate(cfg, run: Run):
    from collabvar.io import write_coefficients, write_panel
    from collabvar.var_core import (fixed_var2_2, generate_stationary_coefficients,
                                    simulate_var, sparse_var10_3)

    if cfg["scenario"] == "var2":
        model = fixed_var2_2()
    elif cfg["scenario"] == "var10":
        model = sparse_var10_3()
    else:
        model = generate_stationary_coefficients(cfg["n"], len(cfg["lags"]), seed=cfg["seed"])
    panel = simulate_var(model, cfg["T"], burn_in=cfg["burn_in"], seed=cfg["seed"])
    write_panel(panel, run.path("panel.csv"))
    write_coefficients(model, run.path("coefficients.csv"))
    print(f"simulated {panel.T} x {panel.n} panel ({cfg['scenario']})")


def cmd_fit(cfg, run: Run):
    from collabvar.estimators import (AdmmConfig, fit_lasso_admm_central,
                                      fit_lasso_admm_distributed, fit_ls, parties_from_embedding)
    from collabvar.io import read_panel, write_coefficients, write_table
    from collabvar.plotting import line_chart
    from collabvar.var_core import VarModel, assemble_var_coefficients, build_lag_embedding

    panel = read_panel(cfg["data"])
    emb = build_lag_embedding(panel, cfg["lags"])
    admm = AdmmConfig(rho=cfg["rho"], lam=cfg["lam"], max_iter=cfg["max_iter"],
                      tol_primal=cfg["tol"], tol_dual=cfg["tol"])
    history = None
    if cfg["estimator"] == "ls":
        model = VarModel(fit_ls(emb.Z, emb.Y), emb.lag_spec)
    elif cfg["estimator"] == "admm_central":
        B, res = fit_lasso_admm_central(emb.Z, emb.Y, admm)
        model = VarModel(B, emb.lag_spec)
        history = (res.primal_residuals, res.dual_residuals, res.converged)
    else:
        res = fit_lasso_admm_distributed(parties_from_embedding(emb, list(panel.owners)),
                                         emb.Y, admm)
        model = assemble_var_coefficients(res.blocks, emb.lag_spec)
        history = (res.primal_residuals, res.dual_residuals, res.converged)
        if cfg["transcript"]:
            res.transcript.to_jsonl(run.path("transcript.jsonl"))
    write_coefficients(model, run.path("coefficients.csv"))
    if history is not None:
        primal, dual, converged = history
        rows = [{"iteration": i + 1, "primal": a, "dual": b}
                for i, (a, b) in enumerate(zip(primal, dual))]
        write_table(rows, run.path("residuals.csv"))
        line_chart(range(1, len(primal) + 1), {"primal": primal, "dual": dual},
                   run.path("residuals.svg"), xlabel="iteration", ylabel="residual", logy=True)
        if not converged:
            print(f"warning: ADMM stopped after {len(primal)} iterations without converging",
                  file=sys.stderr)
    print(f"fitted {cfg['estimator']} on {panel.T} rows, {len(cfg['lags'])} lags")


def cmd_protocol(cfg, run: Run):
    from collabvar.io import write_matrix, write_table
    from collabvar.protocols import (ac_commodity, ac_two_party, karr_multiply,
                                     nlie_optimal_g, sum_inverse)

    rng = np.random.default_rng(cfg["seed"])
    m, k, s = cfg["m"], cfg["k"], cfg["s"]
    if cfg["demo"] in ("ac", "commodity"):
        A, C = rng.standard_normal((k, m)), rng.standard_normal((m, s))
        fn = ac_two_party if cfg["demo"] == "ac" else ac_commodity
        shares, tr = fn(A, C, rng)
        err = float(np.max(np.abs(shares.combine() - A @ C)))
        write_matrix(shares.V_a, run.path("share_a.csv"))
        write_matrix(shares.V_c, run.path("share_c.csv"))
        print(f"max |V_a + V_c - AC| = {err:.3g}")
    elif cfg["demo"] == "inverse":
        A, C = rng.standard_normal((m, m)), rng.standard_normal((m, m))
        variant = "two_party" if m % 2 == 0 else "commodity"
        shares, tr = sum_inverse(A, C, rng, variant=variant)
        err = float(np.max(np.abs(shares.combine() - np.linalg.inv(A + C))))
        write_matrix(shares.V_a, run.path("share_a.csv"))
        write_matrix(shares.V_c, run.path("share_c.csv"))
        print(f"{variant} variant: max |shares - (A+C)^-1| = {err:.3g}")
    else:
        A, C = rng.standard_normal((m, k)), rng.standard_normal((m, s))
        bal = nlie_optimal_g(m, k, s)
        res, tr = karr_multiply(A, C, cfg["g"])
        g = res.W.shape[1]
        err = float(np.max(np.abs(res.product - A.T @ C)))
        print(f"g* = {bal.g_star}")
        print(f"NLIE owner1 = {bal.nlie_owner1}, NLIE owner2 = {bal.nlie_owner2}")
        print(f"used g = {g}; max |product - A'C| = {err:.3g}")
        write_table([{"m": m, "k": k, "s": s, "g_star": str(bal.g_star),
                      "nlie_owner1": str(bal.nlie_owner1), "nlie_owner2": str(bal.nlie_owner2),
                      "g_used": g, "max_error": err}], run.path("nlie.csv"))
    tr.to_jsonl(run.path("transcript.jsonl"))


def cmd_attack(cfg, run: Run):
    from collabvar import adversary as adv
    from collabvar.io import write_table
    from collabvar.plotting import breach_grid_chart

    if cfg["mode"] == "predict":
        pred = adv.predict_breach(cfg["attacker"], cfg["T"], cfg["n"], cfg["p"])
        k = pred.k_breach
        print(f"k={k if math.isfinite(k) else 'inf'}")
        write_table([{"T": pred.T, "n": pred.n, "p": pred.p, "attacker": pred.attacker,
                      "k": k, "equations": pred.equations_at_k,
                      "unknowns": pred.unknowns_at_k}], run.path("prediction.csv"))
        return
    if cfg["mode"] == "grid":
        rows = adv.breach_grid(cfg["grid_T"], cfg["grid_n"], cfg["grid_p"])
        write_table(rows, run.path("breach_grid.csv"))
        for att in (adv.CENTRAL_NODE, adv.OWNER):
            breach_grid_chart(rows, run.path(f"breach_grid_{att}.svg"), attacker=att)
        print(f"wrote {len(rows)} grid rows")
        return
    report = _reconstruct(cfg)
    write_table([report.to_row()], run.path("attack_report.csv"))
    print(report.summary())
    if not report.solved:
        raise AttackInconclusive(report.status)


def _reconstruct(cfg):
    from collabvar import adversary as adv
    from collabvar.estimators import AdmmConfig, fit_lasso_admm_distributed, parties_from_embedding
    from collabvar.privacy import NoiseSpec
    from collabvar.var_core import build_lag_embedding, generate_stationary_coefficients, simulate_var

    n, p, T = cfg["n"], cfg["p"], cfg["T"]
    rng = np.random.default_rng(cfg["seed"])
    model = generate_stationary_coefficients(n, p, seed=int(rng.integers(2**32)))
    panel = simulate_var(model, T + p, seed=int(rng.integers(2**32)))
    emb = build_lag_embedding(panel, p)
    attacker = "central" if cfg["attacker"] == "central" else "owner"
    pred = adv.predict_breach(attacker, T, n, p)
    k = cfg["k"] or (pred.k_breach if math.isfinite(pred.k_breach) else 1)
    noise = {}
    if cfg["noise"] == "coefficients":
        noise["coef_noise"] = NoiseSpec("laplace", cfg["noise_b"])
    elif cfg["noise"] == "intermediate":
        noise["intermediate_noise"] = NoiseSpec("laplace", cfg["noise_b"])
    res = fit_lasso_admm_distributed(
        parties_from_embedding(emb, list(panel.owners)), emb.Y,
        AdmmConfig(lam=cfg["lam"], max_iter=int(k), tol_primal=1e-300, tol_dual=1e-300),
        seed=int(rng.integers(2**32)), **noise)
    values = np.asarray(panel.values)
    if attacker == "central":
        return adv.attack_central_node(res.transcript, panel.owners[-1], p, k=int(k),
                                       known_target=emb.Y[:, -1], truth=values[:, -1])
    truth = {o: values[:, j] for j, o in enumerate(panel.owners) if j}
    return adv.attack_admm_transcript(res.transcript, panel.owners[0], values[:, 0], p,
                                      k=int(k), mode=cfg["noise"], truth=truth,
                                      n_starts=cfg["starts"], seed=cfg["seed"])


def cmd_bench(cfg, run: Run):
    from collabvar import bench
    from collabvar.estimators import AdmmConfig
    from collabvar.io import write_table
    from collabvar.plotting import boxplot

    admm = AdmmConfig(rho=cfg["rho"], max_iter=cfg["max_iter"])
    scen = cfg["scenario"]
    common = dict(replications=cfg["replications"], T=cfg["T"], admm=admm, lam=cfg["lam"],
                  test_fraction=cfg["test_fraction"], seed=cfg["seed"],
                  workers=cfg["workers"], noise_grid=tuple(map(tuple, cfg["noise"])))
    coefs = None
    if scen in ("var2", "var10"):
        lags = (1, 2) if scen == "var2" else (1, 2, 3)
        ec = bench.ExperimentConfig(scenario=scen, model="fixed", lags=lags,
                                    n=2 if scen == "var2" else 10, **common)
        metrics, coefs, lam = bench.run_synthetic(ec)
    elif scen in ("random2", "random10"):
        n, lags = (2, (1, 2)) if scen == "random2" else (10, (1, 2, 3))
        ec = bench.ExperimentConfig(scenario=scen, model="generated", n=n, lags=lags, **common)
        metrics, lam = bench.run_random_coefficients(ec)
    else:
        ec = bench.ExperimentConfig(scenario="solar", lags=bench.SOLAR_LAGS, **common)
        if not ec.noise_grid:
            ec = replace(ec, noise_grid=(("laplace", 0.2),))
        metrics, lam = bench.run_solar(cfg["data"], ec)
    write_table(metrics, run.path("metrics.csv"))
    summary = bench.summarize(metrics, by=("scenario", "noise"), value="improvement_mae")
    write_table(summary, run.path("summary.csv"))
    if coefs is not None:
        write_table(coefs, run.path("coefficient_errors.csv"))
        write_table(bench.summarize(coefs, by=("scenario", "noise")),
                    run.path("coefficient_summary.csv"))
    if cfg["plots"]:
        df = bench.to_frame(metrics)
        groups = {k: g["improvement_mae"].to_numpy() for k, g in df.groupby("noise", sort=False)}
        boxplot(groups, run.path("improvement_mae.svg"), title=scen,
                ylabel="MAE improvement over AR (%)")
    print(f"{scen}: lambda={lam:g}, {len(metrics)} metric rows")
    print(summary.to_string(index=False))


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "protocol": cmd_protocol,
            "attack": cmd_attack, "bench": cmd_bench}


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="collabvar", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"collabvar {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def base(name, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        p.add_argument("--config", help="YAML config file (or a previous manifest.json)")
        p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or ./collabvar-out)")
        p.add_argument("--seed", type=int, help="random seed (default 0)")
        return p

    p = base("simulate", "simulate a VAR panel")
    p.add_argument("--scenario", help="var2 | var10 | random")
    p.add_argument("--T", type=int, help="number of rows")
    p.add_argument("--n", type=int, help="series count for random models")
    p.add_argument("--lags", help="lags, e.g. '1,2'")
    p.add_argument("--burn-in", dest="burn_in", type=int, help="discarded warm-up rows")

    p = base("fit", "fit a VAR on a panel CSV")
    p.add_argument("--data", help="panel CSV")
    p.add_argument("--lags", help="lags, e.g. '1,2,24'")
    p.add_argument("--estimator", help="admm_distributed | admm_central | ls")
    p.add_argument("--lam", type=float, help="L1 penalty")
    p.add_argument("--rho", type=float, help="ADMM penalty")
    p.add_argument("--max-iter", dest="max_iter", type=int, help="ADMM iteration cap")
    p.add_argument("--tol", type=float, help="primal and dual tolerance")
    p.add_argument("--transcript", action="store_true", default=None,
                   help="write the message transcript as JSON lines")

    p = base("protocol", "run a secure product protocol demo")
    p.add_argument("--demo", help="ac | commodity | inverse | karr")
    p.add_argument("--m", type=int, help="rows / inner dimension")
    p.add_argument("--k", type=int, help="columns of the first owner")
    p.add_argument("--s", type=int, help="columns of the second owner")
    p.add_argument("--g", type=int, help="projection rank for karr (default balanced)")

    p = base("attack", "breach predictions and reconstruction attacks")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--predict", dest="mode", action="store_const", const="predict",
                      help="closed-form iterations to breach")
    mode.add_argument("--grid", dest="mode", action="store_const", const="grid",
                      help="long-format grid over T, n, p")
    mode.add_argument("--reconstruct", dest="mode", action="store_const", const="reconstruct",
                      help="simulate a small run and attack its transcript")
    p.add_argument("--attacker", help="central | owner")
    p.add_argument("--T", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--p", type=int)
    p.add_argument("--k", type=int, help="iterations observed (default: predicted)")
    p.add_argument("--noise", help="none | coefficients | intermediate")
    p.add_argument("--noise-b", dest="noise_b", type=float, help="Laplace scale of the noise")
    p.add_argument("--lam", type=float, help="L1 penalty of the attacked run")
    p.add_argument("--starts", type=int, help="solver multi-starts")

    p = base("bench", "Monte Carlo benchmarks against the AR baseline")
    p.add_argument("--scenario", help="var2 | var10 | random2 | random10 | solar")
    p.add_argument("--data", help="solar CSV (timestamp column + one column per plant)")
    p.add_argument("--replications", type=int)
    p.add_argument("--T", type=int)
    p.add_argument("--noise", action="append", help="family:b, repeatable")
    p.add_argument("--lam", type=float, help="fixed L1 penalty (default: grid search)")
    p.add_argument("--rho", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--test-fraction", dest="test_fraction", type=float)
    p.add_argument("--workers", type=int)
    p.add_argument("--no-plots", dest="plots", action="store_false", default=None)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "out")}
    started = datetime.now(timezone.utc).isoformat()
    try:
        cfg = resolve_config(args.command, load_config_file(args.config), flags)
    except ConfigError as exc:
        print("configuration error:", file=sys.stderr)
        for prob in exc.problems:
            print(f"  {prob}", file=sys.stderr)
        return EXIT_CONFIG

    out = Path(args.out or os.environ.get(OUTPUT_ENV) or "collabvar-out")
    out.mkdir(parents=True, exist_ok=True)
    run = Run(out)
    code, message = EXIT_OK, ""
    try:
        COMMANDS[args.command](cfg, run)
    except AttackInconclusive as exc:
        code, message = EXIT_INCONCLUSIVE, f"attack inconclusive: {exc}"
    except (ConfigError, IngestionError, InvalidLagError, InvalidRegimeError,
            FileNotFoundError) as exc:
        code, message = EXIT_CONFIG, f"input error: {exc}"
    except (np.linalg.LinAlgError, FloatingPointError, CollabVarError) as exc:
        code, message = EXIT_NUMERIC, f"numerical failure: {exc}"
    if message:
        print(message, file=sys.stderr)

    from collabvar.io import atomic_write_json

    manifest = {
        "subcommand": args.command,
        "config_path": args.config,
        "config": cfg,
        "seed": cfg.get("seed"),
        "output_dir": str(out),
        "version": __version__,
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "exit_code": code,
        "outputs": run.outputs + ["manifest.json"],
    }
    atomic_write_json(manifest, out / "manifest.json")
    return code


if __name__ == "__main__":
    sys.exit(main())
