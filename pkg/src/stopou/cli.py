"""``stopou`` command-line runner.

Exit codes: 0 success, 1 validation failure, 2 configuration error,
3 numerical or conditioning error. Settings resolve as flags > STOPOU_*
environment variables > ``--config`` file > defaults.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import acceptance, estimators, gradient
from ._backend import backend_name
from .config import ENV_KEYS, RunConfig
from .domain import validate_domain
from .errors import BandwidthError, StabilityError, StopOUError
from .matrixcalc import check_hypothesis1
from .pathlaw import sample_X
from .pde import Mesh2D, evaluate, solve_dirichlet_2d

STREAM_SAMPLE = 30
ESTIMATORS = ("stopped_direct", "stopped_cm", "unstopped_direct", "unstopped_cm", "weight_mean")


class ValidationFailure(Exception):
    """A check ran cleanly but its outcome is negative (exit 1)."""


def _value(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple, np.ndarray)):
        return " ".join(_value(e) for e in np.asarray(v).ravel().tolist())
    return str(v)


def render(command: str, rows: list, cfg: RunConfig, fmt: str, notes=None) -> str:
    """CSV with a ``#`` header block (version, config hash, seed, full config) or JSON."""
    meta = {"version": __version__, "command": command, "config_hash": cfg.hash(), "seed": cfg.seed,
            "config": dict(cfg.hashed_items())}
    if notes:
        meta["notes"] = notes
    if fmt == "json":
        clean = [{k: (_value(v) if isinstance(v, np.ndarray) else v) for k, v in r.items()} for r in rows]
        return json.dumps({"meta": meta, "rows": clean}, indent=2, sort_keys=True, default=_value) + "\n"
    buf = io.StringIO()
    buf.write(f"# stopou {__version__}\n# command: {command}\n# config_hash: {meta['config_hash']}\n# seed: {cfg.seed}\n")
    for k, v in cfg.hashed_items():
        buf.write(f"# config: {k} = {v}\n")
    for k, v in (notes or {}).items():
        buf.write(f"# {k}: {_value(v)}\n")
    if rows:
        w = csv.writer(buf, lineterminator="\n")
        keys = list(rows[0].keys())
        w.writerow(keys)
        for r in rows:
            w.writerow([_value(r[k]) for k in keys])
    return buf.getvalue()


def emit(command: str, rows: list, cfg: RunConfig, notes=None, stem: str | None = None) -> None:
    text = render(command, rows, cfg, cfg.out_format, notes)
    if cfg.out_dir:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / f"{stem or command}.{cfg.out_format}"
        path.write_text(text)
        print(f"wrote {path}", file=sys.stderr)
    else:
        sys.stdout.write(text)


def _problem(cfg: RunConfig, need_domain=True):
    model = cfg.model()
    d = model.dim
    rep = check_hypothesis1(model, [cfg.T / 4, cfg.T / 2, cfg.T])
    if not rep.kalman_rank_ok:
        raise ValidationFailure("model fails the Kalman rank condition")
    domain = None
    if need_domain:
        domain = cfg.domain(d)
        validate_domain(domain, d)
    return model, domain, d


def cmd_check(args, cfg):
    model = cfg.model()
    times = [cfg.T / 4, cfg.T / 2, cfg.T]
    rep = check_hypothesis1(model, times, strict=False)
    rows = [{"key": k, "value": v} for k, v in rep.as_rows()]
    dom_ok, dom_msg = True, "ok"
    try:
        validate_domain(cfg.domain(model.dim), model.dim)
    except StopOUError as exc:
        dom_ok, dom_msg = False, str(exc)
    rows += [{"key": "domain_ok", "value": dom_ok}, {"key": "domain_message", "value": dom_msg},
             {"key": "backend", "value": backend_name()}]
    emit("check", rows, cfg)
    return 0 if (rep.kalman_rank_ok and rep.consistent and dom_ok) else 1


def cmd_sample(args, cfg):
    model = cfg.model()
    x = cfg.x(model.dim)
    batch = sample_X(model, x, cfg.grid(), cfg.seed, STREAM_SAMPLE, cfg.m, sampler=args.sampler, workers=cfg.threads)
    if args.binary:
        if not cfg.out_dir:
            raise ValidationFailure("--binary needs --out")
        path = Path(cfg.out_dir)
        path.mkdir(parents=True, exist_ok=True)
        batch.to_binary(path / "paths.bin")
        print(f"wrote {path / 'paths.bin'}", file=sys.stderr)
        return 0
    m, N, d = batch.values.shape
    rows = []
    for i in range(m):
        for j in range(N):
            row = {"path_id": i, "j": j + 1, "t": float(batch.grid.points[j])}
            row.update({f"x_{k + 1}": float(batch.values[i, j, k]) for k in range(d)})
            rows.append(row)
    emit("sample", rows, cfg, {"sampler": args.sampler})
    return 0


def _result_row(name, res, x=None, cfg=None, stopped=False, gridded=False):
    row = {"estimator": name}
    if x is not None:
        row.update({f"x_{k + 1}": float(v) for k, v in enumerate(x)})
        row.update({"T": cfg.T, "r": cfg.r if stopped else "", "n": cfg.n if gridded else ""})
    row.update({"mean": res.mean, "stderr": res.stderr, "m": res.m, "seed": res.seed, "result_hash": res.config_hash})
    for k in sorted(res.info):
        if np.isscalar(res.info[k]):
            row[k] = res.info[k]
    return row


def cmd_estimate(args, cfg):
    stopped = args.estimator.startswith("stopped")
    model, domain, d = _problem(cfg, need_domain=stopped)
    x, phi, w = cfg.x(d), cfg.phi(d), cfg.threads
    if args.estimator == "stopped_direct":
        res = estimators.stopped_direct(model, domain, phi, x, cfg.T, cfg.grid(), cfg.m, cfg.seed, w)
    elif args.estimator == "stopped_cm":
        res = estimators.stopped_cm(model, domain, phi, x, cfg.T, cfg.grid(), cfg.m, cfg.seed, w)
    elif args.estimator == "unstopped_direct":
        res = estimators.unstopped_direct(model, phi, x, cfg.T, cfg.m, cfg.seed, w)
    elif args.estimator == "unstopped_cm":
        res = estimators.unstopped_cm(model, phi, x, cfg.T, cfg.m, cfg.seed, w)
    else:
        res = estimators.cm_weight_mean(model, x, cfg.T, cfg.grid(), cfg.m, cfg.seed, w)
    gridded = stopped or args.estimator == "weight_mean"
    emit("estimate", [_result_row(args.estimator, res, x, cfg, stopped, gridded)], cfg)
    return 0


def _floats(text):
    return [float(t) for t in text.replace(",", " ").split()]


def cmd_lambda(args, cfg):
    model, domain, d = _problem(cfg)
    x, grid = cfg.x(d), cfg.grid()
    s_vals = _floats(args.s) if args.s else np.linspace(0.0, 2.0 * domain.r, 21)[1:]
    gam = estimators.gamma_samples(model, domain, x, grid, cfg.m, cfg.seed, cfg.threads)
    pts = estimators.lambda_cdf(model, domain, x, grid, cfg.m, cfg.seed, s_vals, gammas=gam)
    rows = [{"kind": "cdf", "s": s, "value": p, "stderr": se} for s, p, se in pts]
    dens = estimators.lambda_density(model, domain, x, grid, cfg.m, cfg.seed, eps=args.eps, gammas=gam)
    rows.append({"kind": "density", "s": domain.r, "value": dens.mean, "stderr": dens.stderr})
    chk = estimators.ehrhard_check(pts, cfg.m)
    notes = {"ehrhard_max_violation_in_se": chk["max_concavity_violation_in_se"], "monotone": chk["monotone"]}
    emit("lambda", rows, cfg, notes)
    return 0


def _grad_row(route, total, se, **extra):
    return {"route": route, "value": total, "stderr": se, **extra}


def cmd_gradient(args, cfg):
    model, domain, d = _problem(cfg)
    x, y, phi, grid, w = cfg.x(d), cfg.y(d), cfg.phi(d), cfg.grid(), cfg.threads
    gc = cfg.grad_config()
    res = gradient.grad_main(model, domain, phi, x, y, cfg.T, grid, cfg.m, cfg.seed, cfg=gc, workers=w)
    rows = [_grad_row("grad_main", res.total, res.total_stderr, interior=res.interior.mean, boundary=res.boundary.mean,
                      variant=gc.weight_variant, sign=gc.boundary_sign, method=gc.boundary_method,
                      shell_count=res.shell_count)]
    if args.fd:
        fd = gradient.fd_oracle(model, domain, phi, x, y, cfg.T, grid, cfg.m, cfg.seed, delta=gc.fd_step, workers=w)
        rows.append(_grad_row("fd_oracle", fd.mean, fd.stderr, interior="", boundary="", variant="", sign="",
                              method="central", shell_count=""))
    if args.discrete:
        full = gradient.grad_discrete_full(model, domain, phi, x, y, cfg.T, grid, cfg.m, cfg.seed, workers=w)
        rows.append(_grad_row("grad_discrete_full", full.total, full.total_stderr, interior=full.interior.mean,
                              boundary=full.boundary.mean, variant="", sign="", method="grid_inverse", shell_count=""))
    if args.variants:
        for r in gradient.variant_table(model, domain, phi, x, y, cfg.T, grid, cfg.m, cfg.seed,
                                        eps=gc.shell_eps, workers=w):
            rows.append(_grad_row("variant", r["total"], r["stderr"], interior=r["interior"], boundary=r["boundary"],
                                  variant=r["variant"], sign=r["sign"], method="shell", shell_count=r["shell_count"]))
    emit("gradient", rows, cfg)
    return 0


def cmd_pde(args, cfg):
    model, domain, d = _problem(cfg)
    phi = cfg.phi(d)
    nodes = int(cfg.get("pde.nodes"))
    dt = float(cfg.get("pde.dt")) if cfg.get("pde.dt") else None
    mesh = Mesh2D.for_domain(domain, nodes, dt=dt)
    sol = solve_dirichlet_2d(model, domain, phi, cfg.T, mesh)
    notes = {"steps": sol["steps"], "dt": sol["dt"], "u_at_x": float(evaluate(sol, cfg.x(d))[0])}
    x1, x2 = sol["axes"]
    rows = [{"xi_1": float(a), "xi_2": float(b), "u": float(sol["u"][i, j])}
            for i, a in enumerate(x1) for j, b in enumerate(x2)]
    emit("pde", rows, cfg, notes)
    return 0


def cmd_validate(args, cfg):
    only = set(args.only.split(",")) if args.only else None
    timings = []

    def progress(r):
        timings.append({"criterion": r.criterion, "name": r.name, "wall_s": round(r.wall_s, 3)})
        print(f"[{r.status():>14}] criterion {r.criterion}: {r.name} (stat={r.statistic:.4g}, tol={r.tolerance:.4g})",
              file=sys.stderr, flush=True)

    rows = acceptance.run_suite(quick=args.quick, workers=cfg.threads, only=only, progress=progress)
    table = [{"criterion": r.criterion, "name": r.name, "status": r.status(), "statistic": r.statistic,
              "tolerance": r.tolerance, "detail": r.detail} for r in rows]
    emit("validate", table, cfg, {"mode": "quick" if args.quick else "full"})
    # wall-clock times vary run to run, so they stay out of the result file
    if cfg.out_dir:
        Path(cfg.out_dir, "validate_timings.json").write_text(json.dumps(timings, indent=2) + "\n")
    return 0 if acceptance.suite_ok(rows) else 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat 'section.key = value' config file")
    common.add_argument("--seed", type=int, help="master seed (run.seed)")
    common.add_argument("--threads", type=int, help="worker threads (run.threads)")
    common.add_argument("--out", help="output directory (out.dir); stdout when omitted")
    common.add_argument("--format", choices=("csv", "json"), help="output format (out.format)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key, e.g. --set run.n=8")

    env = ", ".join(f"{k} ({v})" for k, v in ENV_KEYS.items())
    p = argparse.ArgumentParser(prog="stopou", description=__doc__.splitlines()[0],
                                epilog=f"environment overrides: {env}; precedence flags > env > config file")
    p.add_argument("--version", action="version", version=f"stopou {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("check", parents=[common], help="Kalman rank / det Q_t consistency and domain checks")
    s = sub.add_parser("sample", parents=[common], help="sample X(t_j, x) on the dyadic grid")
    s.add_argument("--sampler", choices=("ar1", "joint"), default="ar1")
    s.add_argument("--binary", action="store_true", help="write paths.bin instead of CSV")
    s = sub.add_parser("estimate", parents=[common], help="semigroup estimators")
    s.add_argument("--estimator", choices=ESTIMATORS, default="stopped_direct")
    s = sub.add_parser("lambda", parents=[common], help="CDF and density of the running gauge maximum")
    s.add_argument("--s", help="comma or space separated s values")
    s.add_argument("--eps", type=float, help="density bandwidth (default r/50)")
    s = sub.add_parser("gradient", parents=[common], help="gradient of the stopped semigroup")
    s.add_argument("--fd", action="store_true", help="also run the finite-difference oracle")
    s.add_argument("--discrete", action="store_true", help="also run the exact discrete-gradient route")
    s.add_argument("--variants", action="store_true", help="also emit the weight/sign variant table")
    sub.add_parser("pde", parents=[common], help="finite-difference solve of the stopped Kolmogorov equation (d=2)")
    s = sub.add_parser("validate", parents=[common], help="run the acceptance suite")
    s.add_argument("--quick", action="store_true", help="reduced sample sizes; skips the gradient variant study")
    s.add_argument("--only", help="comma separated criterion ids")
    return p


def _overrides(args) -> dict:
    out = {"run.seed": args.seed, "run.threads": args.threads, "out.dir": args.out, "out.format": args.format}
    for item in args.set:
        if "=" not in item:
            raise argparse.ArgumentTypeError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


COMMANDS = {"check": cmd_check, "sample": cmd_sample, "estimate": cmd_estimate, "lambda": cmd_lambda,
            "gradient": cmd_gradient, "pde": cmd_pde, "validate": cmd_validate}


def run(subcommand: str, config: RunConfig, *options: str) -> int:
    """Execute one subcommand with an already resolved configuration.

    ``options`` are subcommand flags such as ``"--estimator", "stopped_cm"``.
    Returns the exit code; artifacts go to ``config.out_dir`` or stdout.
    """
    args = build_parser().parse_args([subcommand, *options])
    return _guarded(lambda: COMMANDS[subcommand](args, config))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return _guarded(lambda: COMMANDS[args.command](args, RunConfig.load(args.config, overrides=_overrides(args))))


def _guarded(call) -> int:
    try:
        return call()
    except argparse.ArgumentTypeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValidationFailure as exc:
        print(f"validation failure: {exc}", file=sys.stderr)
        return 1
    except StabilityError as exc:
        print(f"error: {exc} (suggested dt {exc.suggested_dt:.3e})", file=sys.stderr)
        return exc.exit_code
    except BandwidthError as exc:
        print(f"error: {exc} (suggested eps {exc.suggested_eps:.3e})", file=sys.stderr)
        return exc.exit_code
    except StopOUError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
