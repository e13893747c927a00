"""Command-line orchestration: run / constants / shadow / bubble-fit.

Configuration is flat key-value text (``key = value`` per line, ``#``
comments); all physical inputs go through the closed-form expression grammar
of :mod:`crflow.expressions`.  Outputs are deterministic: identical config
and seed produce byte-identical CSV and JSON (floats are written with
shortest round-trip decimal formatting).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bubbles, expressions, flow, shadow
from .manifold import build_model
from .quadrature import compute_constants

FLOW_CSV_COLUMNS = [
    "t", "lambda", "energy", "dissipation", "volume", "F2", "F4",
    "min_R_minus_lambda_f", "gamma_proxy", "min_u", "max_u",
    "alpha_fit", "eps_fit", "a_fit_x", "a_fit_y", "a_fit_s",
    "fit_residual", "zeta",
]

SHADOW_CSV_COLUMNS = ["t", "eps", "a_x", "a_y", "a_s", "f_a", "zeta"]


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return repr(float(x))


def write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row.get(c)) for c in columns) + "\n")


def write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    """Everything one flow run needs; defaults match the flat 32^3 setup."""

    grid: tuple = (32, 32, 32)
    yamabe_sign: str = "zero"
    r0_expr: str = ""
    f_expr: str = "1.0"
    initial_mode: str = "constant"          # constant | bubble | field-file
    field_file: str = ""
    a0: str = "auto"                        # "auto" (argmax f) or "i,j,k"
    eps0: float = 0.125
    delta: float = 0.0                      # 0 -> default rule
    c_cfl: float = 0.2
    tol_converged: float = 1e-6
    residual_tol: float = 0.0               # 0 -> disabled
    tol_eps: float = 0.0                    # 0 -> no concentration stop
    t_max: float = 10.0
    sample_interval: float = 0.05
    fit_enabled: bool = True
    seed: int = 0
    scenario: str = ""
    constants_file: str = ""

    def validate(self):
        errors = []
        nx, ny, ns = self.grid
        if min(nx, ny, ns) < 4:
            errors.append("grid: need at least 4 nodes per direction")
        if ns % ny != 0:
            errors.append(
                f"grid: N_s={ns} must be a multiple of N_y={ny} "
                "(twisted gluing must stay grid-aligned)"
            )
        for name in ("tol_converged", "t_max", "sample_interval", "c_cfl"):
            if getattr(self, name) <= 0:
                errors.append(f"{name}: must be positive")
        if self.initial_mode not in ("constant", "bubble", "field-file"):
            errors.append(f"initial_mode: unknown mode {self.initial_mode!r}")
        if self.initial_mode == "bubble" and self.eps0 <= 0:
            errors.append("eps0: must be positive for bubble initial data")
        if self.yamabe_sign not in ("zero", "positive"):
            errors.append("yamabe_sign: must be 'zero' or 'positive'")
        if self.yamabe_sign == "positive" and not self.r0_expr:
            errors.append("r0_expr: required in positive mode")
        if errors:
            raise ValueError("invalid config:\n  " + "\n  ".join(errors))


_BOOL = {"true": True, "false": False, "yes": True, "no": False}


def parse_config_text(text: str) -> dict:
    """Flat key-value config: `key = value`, '#' comments, strings unquoted or quoted."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value, got {raw!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        if val.startswith('"') and val.endswith('"') and len(val) >= 2:
            out[key] = val[1:-1]
        elif val.lower() in _BOOL:
            out[key] = _BOOL[val.lower()]
        else:
            try:
                out[key] = int(val)
            except ValueError:
                try:
                    out[key] = float(val)
                except ValueError:
                    out[key] = val
    return out


def parse_grid(text) -> tuple:
    parts = str(text).lower().split("x")
    if len(parts) == 1:
        parts = parts * 3
    if len(parts) != 3:
        raise ValueError(f"grid must look like 32x32x32, got {text!r}")
    return tuple(int(p) for p in parts)


SCENARIOS = {
    # Sign-changing landscape with negative mean: the solvable regime on the
    # flat model.  Verified before running: sup f > 0 and int f dv < 0.
    "main2": {
        "f_expr": "cosy(1) - 0.1",
        "initial_mode": "bubble",
        "eps0": 0.125,
        "a0": "0,0,0",
        "tol_converged": 1e-7,
        "residual_tol": 1e-4,
        "t_max": 12.0,
        "c_cfl": 0.9,
        "sample_interval": 0.05,
    },
    # f == 1 from constraint-normalized constant data: stationary immediately.
    "yamabe": {
        "f_expr": "1.0",
        "initial_mode": "constant",
        "tol_converged": 1e-6,
        "t_max": 1.0,
    },
}


def config_from_args(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        data = parse_config_text(Path(args.config).read_text())
    else:
        data = {}
    if args.scenario:
        preset = SCENARIOS.get(args.scenario)
        if preset is None:
            raise ValueError(f"unknown scenario {args.scenario!r}")
        merged = dict(preset)
        merged.update(data)
        data = merged
        cfg.scenario = args.scenario
    for key, val in data.items():
        if key == "grid":
            cfg.grid = parse_grid(val)
        elif hasattr(cfg, key):
            setattr(cfg, key, type(getattr(cfg, key))(val) if not isinstance(val, str) else val)
        else:
            raise ValueError(f"unknown config key {key!r}")
    if args.grid:
        cfg.grid = parse_grid(args.grid)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# run command
# ---------------------------------------------------------------------------

def _initial_state(cfg: RunConfig, model, f):
    if cfg.initial_mode == "constant":
        u0 = flow.normalize_to_constraint(model, np.ones(model.shape), f)
        return flow.FlowState(model, u0, f), {"mode": "constant"}
    if cfg.initial_mode == "bubble":
        if cfg.a0 == "auto":
            a0 = np.unravel_index(int(np.argmax(f)), model.shape)
        else:
            a0 = tuple(int(p) for p in cfg.a0.split(","))
        delta = cfg.delta if cfg.delta > 0 else None
        state, report = bubbles.initial_data(model, f, a0, cfg.eps0, delta=delta)
        report["mode"] = "bubble"
        report["a0"] = list(a0)
        return state, report
    data = json.loads(Path(cfg.field_file).read_text())
    u0 = np.asarray(data["u"], dtype=float).reshape(model.shape)
    return flow.FlowState(model, flow.normalize_to_constraint(model, u0, f), f), {
        "mode": "field-file", "path": cfg.field_file,
    }


def _sample_rows(result: flow.RunResult, model, f):
    rows = []
    for diag, fit in zip(result.samples, result.fits):
        row = {
            "t": diag.t, "lambda": diag.lam, "energy": diag.energy,
            "dissipation": diag.dissipation, "volume": diag.volume,
            "F2": diag.F2, "F4": diag.F4,
            "min_R_minus_lambda_f": diag.min_R_minus_lambda_f,
            "gamma_proxy": diag.gamma_proxy,
            "min_u": diag.min_u, "max_u": diag.max_u,
        }
        if fit is not None:
            fa = float(f[fit.center])
            row.update({
                "alpha_fit": fit.alpha, "eps_fit": fit.eps,
                "a_fit_x": fit.center_coords[0], "a_fit_y": fit.center_coords[1],
                "a_fit_s": fit.center_coords[2], "fit_residual": fit.residual_norm,
                "zeta": math.log(fit.eps) / fa if fa > 0 else None,
            })
        rows.append(row)
    return rows


def run_scenario(cfg: RunConfig, out_prefix: str) -> dict:
    """Execute a configured run; writes <prefix>.csv and <prefix>.json."""
    nx, ny, ns = cfg.grid
    r0 = None
    model = build_model(nx, ny, ns)
    if cfg.yamabe_sign == "positive":
        r0 = expressions.bind(cfg.r0_expr, model)
        model = build_model(nx, ny, ns, yamabe_sign="positive", r0=r0)
    f = expressions.bind(cfg.f_expr, model)

    if cfg.scenario == "main2":
        sup_f = float(np.max(f))
        int_f = model.integrate(f)
        if sup_f <= 0 or int_f >= 0:
            raise ValueError(
                f"scenario main2 precondition failed: sup f = {sup_f:.4g} (need > 0), "
                f"int f dv = {int_f:.4g} (need < 0)"
            )

    state0, init_report = _initial_state(cfg, model, f)

    fitter = None
    last_fit = [None]
    if cfg.fit_enabled:
        def fitter(st):
            try:
                last_fit[0] = bubbles.fit_bubble(st, init=last_fit[0])
            except Exception:
                last_fit[0] = None
            return last_fit[0]

    result = flow.run(
        state0,
        t_max=cfg.t_max,
        c_cfl=cfg.c_cfl,
        tol_converged=cfg.tol_converged,
        residual_tol=cfg.residual_tol if cfg.residual_tol > 0 else None,
        tol_eps=cfg.tol_eps,
        sample_interval=cfg.sample_interval,
        fitter=fitter,
    )

    write_csv(out_prefix + ".csv", FLOW_CSV_COLUMNS, _sample_rows(result, model, f))

    final = result.final_state
    ident = flow.necessity_identities(final)
    n = model.n
    summary = {
        "classification": result.classification,
        "grid": list(cfg.grid),
        "scenario": cfg.scenario or None,
        "seed": cfg.seed,
        "t_final": final.t,
        "lambda_final": final.lam,
        "energy_final": final.energy(),
        "F2_final": final.fp_norm(2.0),
        "pde_residual_final": result.final_residual,
        "volume_final": model.integrate_wrt(np.ones(model.shape), final.u),
        "necessity_int_f_u_power": ident["int_f_u_power"],
        "necessity_int_f": ident["int_f"],
        "necessity_gradient_side": ident["gradient_side"],
        "lambda0_empirical": result.lambda0_emp,
        "lambda1_empirical": result.lambda1_emp,
        "gamma_proxy": result.gamma_proxy,
        "initial_data": init_report,
        "steps": int(result.step_t.size),
        "provenance": {
            "lambda_final": "flow: int f R dv_theta / int f^2 dv_theta",
            "energy_final": "flow: int R u^{2+2/n} dv",
            "F2_final": "flow: int (R - lambda f)^2 dv_theta",
            "pde_residual_final": "flow: ||L u - lambda f u^{1+2/n}||_inf / ||u||_inf",
            "gamma_proxy": "empirical proxy (running max |lambda|, |lambda'|)",
            "lambda0_empirical": "empirical proxy",
            "lambda1_empirical": "empirical proxy",
        },
    }
    if result.classification == "concentrating" and result.fits and result.fits[-1]:
        fit = result.fits[-1]
        fa = float(f[fit.center])
        summary["lambda_infinity_formula"] = (
            2.0 * (n + 1) / n / compute_constants(n, 1e-6).K_n * fa ** (-n / (n + 1.0))
            if fa > 0 else None
        )
        summary["provenance"]["lambda_infinity_formula"] = (
            "bubbles: (2(n+1)/n) K_n^{-1} f(a_inf)^{-n/(n+1)}"
        )
    write_json(out_prefix + ".json", summary)
    return summary


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_run(args):
    cfg = config_from_args(args)
    summary = run_scenario(cfg, args.out)
    print(f"classification: {summary['classification']}")
    print(f"wrote {args.out}.csv and {args.out}.json")
    return 0


def cmd_constants(args):
    table = compute_constants(n=args.n, tol=args.tol)
    payload = table.as_dict()
    if args.out:
        write_json(args.out, payload)
        print(f"wrote {args.out}")
    else:
        json.dump(payload, sys.stdout, indent=2, sort_keys=True)
        print()
    return 0


def cmd_shadow(args):
    if args.constants:
        data = json.loads(Path(args.constants).read_text())
        ratios = shadow.ShadowRatios(
            n=data["n"], d2_c2=data["ratio_d2_c2"], e2_c2=data["ratio_e2_c2"],
            e3_c3=data["ratio_e3_c3"], e4_c3=data["ratio_e4_c3"],
        )
    else:
        ratios = shadow.ShadowRatios.from_table(compute_constants(1, args.tol))

    maker = shadow.LANDSCAPES.get(args.landscape)
    if maker is None:
        raise SystemExit(f"unknown landscape {args.landscape!r}")
    land = maker()

    def one_run(mass, path):
        state = shadow.ShadowState(
            eps=args.eps0, a=np.array([args.a0x, args.a0y, 0.0]),
            landscape=land, mass=mass, lam=args.lam, ratios=ratios,
        )
        traj = shadow.integrate(state, args.t_final, args.dt,
                                eps_floor=args.eps_floor, eps_ceiling=args.eps_ceiling)
        rows = [
            {"t": t, "eps": e, "a_x": a[0], "a_y": a[1], "a_s": a[2],
             "f_a": fa, "zeta": z}
            for t, e, a, fa, z in zip(traj.t, traj.eps, traj.a, traj.f_a, traj.zeta)
        ]
        write_csv(path, SHADOW_CSV_COLUMNS, rows)
        print(f"wrote {path} ({traj.stop_reason}; note: {traj.caveat})")

    if args.c_star_sweep:
        for k, factor in enumerate((0.25, 0.5, 1.0, 2.0, 4.0)):
            one_run(args.mass * factor, f"{args.out.rsplit('.', 1)[0]}_m{k}.csv")
    else:
        one_run(args.mass, args.out)
    return 0


def cmd_bubble_fit(args):
    data = json.loads(Path(args.snapshot).read_text())
    nx, ny, ns = data["grid"]
    model = build_model(nx, ny, ns, yamabe_sign=data.get("yamabe_sign", "zero"),
                        r0=data.get("r0"))
    f = expressions.bind(data.get("f_expr", "1.0"), model)
    u = np.asarray(data["u"], dtype=float).reshape(model.shape)
    state = flow.FlowState(model, u, f)
    fit = bubbles.fit_bubble(state)
    payload = {
        "alpha": fit.alpha, "eps": fit.eps, "center": list(fit.center),
        "delta": fit.delta, "residual_norm": fit.residual_norm,
        "objective": fit.objective, "center_coords": list(fit.center_coords),
        "membership_defect": fit.membership_defect,
        "ambiguous": fit.ambiguous, "success": fit.success,
    }
    if args.out:
        write_json(args.out, payload)
        print(f"wrote {args.out}")
    else:
        json.dump(payload, sys.stdout, indent=2, sort_keys=True)
        print()
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="crflow", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a flow scenario")
    p_run.add_argument("--config", default="")
    p_run.add_argument("--scenario", default="")
    p_run.add_argument("--grid", default="")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--out", default="run")
    p_run.set_defaults(func=cmd_run)

    p_const = sub.add_parser("constants", help="compute the constants table")
    p_const.add_argument("--n", type=int, default=1)
    p_const.add_argument("--tol", type=float, default=1e-8)
    p_const.add_argument("--out", default="")
    p_const.set_defaults(func=cmd_constants)

    p_sh = sub.add_parser("shadow", help="integrate the reduced bubble dynamics")
    p_sh.add_argument("--landscape", default="peak")
    p_sh.add_argument("--eps0", type=float, default=0.05)
    p_sh.add_argument("--a0x", type=float, default=0.0)
    p_sh.add_argument("--a0y", type=float, default=0.0)
    p_sh.add_argument("--lam", type=float, default=25.0)
    p_sh.add_argument("--mass", type=float, default=1.0)
    p_sh.add_argument("--dt", type=float, default=1e-3)
    p_sh.add_argument("--t-final", type=float, default=5.0)
    p_sh.add_argument("--eps-floor", type=float, default=1e-4)
    p_sh.add_argument("--eps-ceiling", type=float, default=1.0)
    p_sh.add_argument("--constants", default="")
    p_sh.add_argument("--tol", type=float, default=1e-8)
    p_sh.add_argument("--c-star-sweep", action="store_true")
    p_sh.add_argument("--out", default="shadow.csv")
    p_sh.set_defaults(func=cmd_shadow)

    p_fit = sub.add_parser("bubble-fit", help="fit bubble parameters to a snapshot")
    p_fit.add_argument("--snapshot", required=True)
    p_fit.add_argument("--out", default="")
    p_fit.set_defaults(func=cmd_bubble_fit)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
