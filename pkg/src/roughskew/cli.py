"""Command-line experiment driver.

Configuration is a YAML tree merged over :data:`DEFAULTS`; ``--set a.b=v``
and the dedicated flags override file values. Every CSV starts with a
``# config=<json> sha256=<hex>`` comment line and every JSON report carries
the same data under ``"provenance"``, so an artifact can always be traced
back to the settings that produced it. The output directory and worker
count are left out of the provenance record: neither changes the numbers.

Exit codes: 0 success, 2 configuration error, 3 degenerate experiment,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import math
import sys
from pathlib import Path

import numpy as np
import yaml

from . import arbitrage, asymptotics, hedging, smile_lab
from .errors import ContractRefusal, GridError, NumericalError, PriceBandError, QuoteError
from .models import ConstantVol, ForwardVarianceCurve, LocalVol, ModelSpec, RoughBergomi

EXIT_OK, EXIT_CONFIG, EXIT_REFUSED, EXIT_NUMERIC = 0, 2, 3, 4

_MODEL = {
    "kind": "rough_bergomi",  # rough_bergomi | local_vol | constant
    "s0": 1.0,
    "v0": 0.04,
    "H": 0.3,
    "eta": 1.9,
    "rho": -0.9,
    "sigma": 0.2,       # constant vol, and local-vol level
    "lv_slope": 0.5,    # sigma(S) = sigma (1 + lv_slope (1 - S/s0))
}

DEFAULTS = {
    "seed": 0,
    "out": "out",
    "workers": 1,
    "model": dict(_MODEL),
    "smile": {
        "thetas": [2.0**-k for k in range(8, 3, -1)],
        "zs": [-0.5, -0.25, -0.1, 0.0, 0.1, 0.25, 0.5],
        "z_pair": [0.1, -0.1],
        "n_steps": 512,
        "n_paths": 100_000,
        "antithetic": True,
        "control_variate": True,
    },
    "alpha": {
        "law": "rough_bergomi",  # rough_bergomi | gaussian | zero
        "v0": 0.04,
        "H": 0.3,
        "sigma12": -0.02,        # gaussian law only
        "eta": 1.9,
        "rho": -0.9,
        "z_min": -2.0,
        "z_max": 2.0,
        "n_z": 25,
    },
    "hedge": {
        "model": {**_MODEL, "H": 0.4, "eta": 1.0},
        "T": 0.25,
        "gaps": [2.0**-k for k in range(7, 2, -1)],
        "n_paths": 10_000,
        "Z": -0.02,
        "pre_steps": 16,
        "steps_per_unit": 64,
        "max_steps": 2048,
    },
    "arbitrage": {
        "model": {**_MODEL, "kind": "constant"},
        "T": 1.0,
        "H": 0.1,
        "sigma": 0.2,
        "alpha": -0.5,
        "remainder_c": 0.0,
        "remainder_eps": 0.1,
        "n_min": 16,
        "n_max": 512,
        "Z": -0.25,
        "replicas": 200,
        "substeps": 64,
        "pre_steps": 16,
        "H0_asserted": None,
    },
}
# keys that may legitimately be null
NULLABLE = {"arbitrage.H0_asserted"}
# keys excluded from provenance because they do not affect results
NON_SEMANTIC = ("out", "workers")


class ConfigError(Exception):
    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}")
        self.path = path


def _merge(base: dict, over: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(path, "unknown field")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(path, "expected a mapping")
            out[key] = _merge(base[key], val, path + ".")
        else:
            out[key] = val
    return out


def _set_path(over: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = over
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(dotted, "cannot set a field below a scalar")
    node[keys[-1]] = value


def resolve_config(path: str | None = None, sets=(), **flags) -> dict:
    """Defaults, then the YAML file, then ``--set`` overrides, then flags."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from exc
        try:
            loaded = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError("--config", f"invalid YAML: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("--config", "top level must be a mapping")
        cfg = _merge(cfg, loaded)
    over: dict = {}
    for item in sets:
        if "=" not in item:
            raise ConfigError("--set", f"expected key=value, got {item!r}")
        key, raw = item.split("=", 1)
        _set_path(over, key.strip(), yaml.safe_load(raw))
    for key, val in flags.items():
        if val is not None:
            _set_path(over, key, val)
    return _merge(cfg, over)


# validation helpers; each raises ConfigError naming the field path

def _get(cfg: dict, path: str):
    node = cfg
    for k in path.split("."):
        node = node[k]
    if node is None and path not in NULLABLE:
        raise ConfigError(path, "required field is missing")
    return node


def _num(cfg, path, lo=-math.inf, hi=math.inf, lo_open=False, hi_open=False, integer=False):
    v = _get(cfg, path)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(path, f"expected a number, got {v!r}")
    if integer and int(v) != v:
        raise ConfigError(path, f"expected an integer, got {v!r}")
    bad_lo = v <= lo if lo_open else v < lo
    bad_hi = v >= hi if hi_open else v > hi
    if not math.isfinite(v) or bad_lo or bad_hi:
        lb = "(" if lo_open else "["
        rb = ")" if hi_open else "]"
        raise ConfigError(path, f"value {v!r} outside {lb}{lo}, {hi}{rb}")
    return int(v) if integer else float(v)


def _numlist(cfg, path, min_len=1, positive=False):
    v = _get(cfg, path)
    if not isinstance(v, list) or len(v) < min_len:
        raise ConfigError(path, f"expected a list of at least {min_len} numbers")
    out = []
    for i, x in enumerate(v):
        if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
            raise ConfigError(f"{path}[{i}]", f"expected a number, got {x!r}")
        if positive and not x > 0:
            raise ConfigError(f"{path}[{i}]", "must be positive")
        out.append(float(x))
    return out


def _choice(cfg, path, options):
    v = _get(cfg, path)
    if v not in options:
        raise ConfigError(path, f"expected one of {', '.join(options)}, got {v!r}")
    return v


def _bool(cfg, path):
    v = _get(cfg, path)
    if not isinstance(v, bool):
        raise ConfigError(path, f"expected true or false, got {v!r}")
    return v


def _global(cfg):
    seed = _num(cfg, "seed", 0, 2**64 - 1, integer=True)
    workers = _num(cfg, "workers", 1, 1024, integer=True)
    out = _get(cfg, "out")
    if not isinstance(out, str) or not out:
        raise ConfigError("out", "expected a directory path")
    return seed, workers, Path(out)


def build_model(cfg: dict, section: str = "model") -> ModelSpec:
    """ModelSpec from the model mapping at dotted path ``section``."""
    p = section
    kind = _choice(cfg, f"{p}.kind", ("rough_bergomi", "local_vol", "constant"))
    s0 = _num(cfg, f"{p}.s0", 0, lo_open=True)
    if kind == "rough_bergomi":
        v0 = _num(cfg, f"{p}.v0", 0, lo_open=True)
        variant = RoughBergomi(_num(cfg, f"{p}.H", 0, 0.5, lo_open=True),
                               _num(cfg, f"{p}.eta", 0), _num(cfg, f"{p}.rho", -1, 0))
        return ModelSpec(variant, s0, ForwardVarianceCurve.flat(v0))
    sigma = _num(cfg, f"{p}.sigma", 0, lo_open=True)
    if kind == "constant":
        return ModelSpec(ConstantVol(sigma), s0)
    slope = _num(cfg, f"{p}.lv_slope")

    def sigma_fn(s, t, sigma=sigma, slope=slope, s0=s0):
        return sigma * (1.0 + slope * (1.0 - s / s0))

    name = f"sigma*(1+{slope!r}*(1-S/s0)),sigma={sigma!r},s0={s0!r}"
    return ModelSpec(LocalVol(sigma_fn, name), s0)


def provenance(cfg: dict) -> dict:
    semantic = {k: v for k, v in cfg.items() if k not in NON_SEMANTIC}
    blob = json.dumps(semantic, sort_keys=True, separators=(",", ":"))
    return {"config": semantic, "sha256": hashlib.sha256(blob.encode()).hexdigest()}


def _header(prov: dict) -> str:
    blob = json.dumps(prov["config"], sort_keys=True, separators=(",", ":"))
    return f"# config={blob} sha256={prov['sha256']}\n"


def _cell(x):
    if isinstance(x, float):
        return repr(x)
    return x


def write_csv(path: Path, prov: dict, columns, rows) -> None:
    buf = io.StringIO()
    buf.write(_header(prov))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(x) for x in r])
    path.write_text(buf.getvalue(), encoding="utf-8")


def _clean(x):
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.generic):
        x = x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def write_json(path: Path, prov: dict, payload: dict) -> None:
    doc = {"provenance": prov, **_clean(payload)}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
                    encoding="utf-8")


# commands

def cmd_smile(cfg: dict, out: Path, prov: dict, workers: int) -> int:
    seed = cfg["seed"]
    spec = build_model(cfg)
    thetas = _numlist(cfg, "smile.thetas", 1, positive=True)
    zs = _numlist(cfg, "smile.zs", 2)
    z_pair = _numlist(cfg, "smile.z_pair", 2)
    if len(z_pair) != 2 or z_pair[0] == z_pair[1]:
        raise ConfigError("smile.z_pair", "expected two distinct z values")
    for z in z_pair:
        if not any(math.isclose(z, x, abs_tol=1e-12) for x in zs):
            raise ConfigError("smile.z_pair", f"z={z} is not on smile.zs")
    n_steps = _num(cfg, "smile.n_steps", 1, integer=True)
    n_paths = _num(cfg, "smile.n_paths", 2, integer=True)
    anti = _bool(cfg, "smile.antithetic")
    if anti and n_paths % 2:
        raise ConfigError("smile.n_paths", "must be even with antithetic pairing")
    cv = _bool(cfg, "smile.control_variate")
    points = smile_lab.mc_smile(spec, thetas, zs, n_steps, n_paths, seed, anti, cv, workers)
    write_csv(out / "smile.csv", prov, smile_lab.SMILE_COLUMNS, (p.row() for p in points))
    by_theta = sorted({p.theta for p in points})
    cols, table = [], []
    for i, th in enumerate(by_theta):
        cols += [f"k_{i}", f"iv_{i}"]
    for j in range(len(zs)):
        row = []
        for th in by_theta:
            p = [q for q in points if q.theta == th][j]
            row += [p.z * math.sqrt(th), p.iv]
        table.append(row)
    write_csv(out / "smile_plot.csv", prov, cols, table)
    fit = smile_lab.fit_power_law(points, tuple(z_pair))
    sensitivity = []
    pos = sorted(z for z in zs if z > 0)
    for z in pos:
        if any(math.isclose(-z, x, abs_tol=1e-12) for x in zs):
            try:
                f = smile_lab.fit_power_law(points, (z, -z))
                sensitivity.append({"z_pair": [z, -z], "H_hat": f.H_hat, "coeff_hat": f.coeff_hat,
                                    "r2": f.r2})
            except ContractRefusal as exc:
                sensitivity.append({"z_pair": [z, -z], "refused": str(exc)})
    bounds = []
    if any(z < 0 for z in zs) and any(z > 0 for z in zs):
        for th in by_theta:
            b = smile_lab.skew_bound_check(q for q in points if q.theta == th)
            bounds.append({"theta": b.theta, "slope_atm": b.slope_atm, "bound": b.bound, "ok": b.ok})
    write_json(out / "fit.json", prov, {**fit.to_dict(), "z_pair_sensitivity": sensitivity,
                                         "skew_bound": bounds})
    return EXIT_OK


def _alpha_law(cfg):
    law = _choice(cfg, "alpha.law", ("rough_bergomi", "gaussian", "zero"))
    v0 = _num(cfg, "alpha.v0", 0, lo_open=True)
    H = _num(cfg, "alpha.H", 0, 0.5, lo_open=True)
    if law == "rough_bergomi":
        eta, rho = _num(cfg, "alpha.eta", 0), _num(cfg, "alpha.rho", -1, 1)
        return asymptotics.LimitLaw.rough_bergomi(v0, H, eta, rho), asymptotics.sigma12_rough_bergomi(v0, rho, eta, H)
    if law == "gaussian":
        s12 = _num(cfg, "alpha.sigma12")
        return asymptotics.LimitLaw.gaussian(v0, H, s12), s12
    return asymptotics.LimitLaw.custom(v0, H, lambda x: np.zeros_like(x)), 0.0


def cmd_alpha(cfg: dict, out: Path, prov: dict, workers: int) -> int:
    law, s12 = _alpha_law(cfg)
    lo, hi = _num(cfg, "alpha.z_min"), _num(cfg, "alpha.z_max")
    n = _num(cfg, "alpha.n_z", 2, integer=True)
    if not hi > lo:
        raise ConfigError("alpha.z_max", "must exceed alpha.z_min")
    rows = []
    for z in np.linspace(lo, hi, n):
        z = float(z)
        q = asymptotics.alpha_quadrature(law, z)
        c = asymptotics.alpha_gaussian(law.v0, law.H, s12, z)
        rows.append([z, q, c, q - c])
    write_csv(out / "alpha.csv", prov, ("z", "alpha_quadrature", "alpha_closed", "difference"), rows)
    diffs = [abs(r[3]) for r in rows]
    write_json(out / "alpha.json", prov, {
        "law": cfg["alpha"]["law"], "v0": law.v0, "H": law.H, "sigma12": s12,
        "closed_slope": s12 / (2.0 * law.v0 * (law.H + 1.5)),
        "max_abs_difference": max(diffs), "n_z": n,
    })
    return EXIT_OK


def cmd_hedge(cfg: dict, out: Path, prov: dict, workers: int) -> int:
    spec = build_model(cfg, "hedge.model")
    T = _num(cfg, "hedge.T", 0, lo_open=True)
    gaps = _numlist(cfg, "hedge.gaps", 4, positive=True)
    for i, g in enumerate(gaps):
        if not g < T:
            raise ConfigError(f"hedge.gaps[{i}]", "must be smaller than hedge.T")
    n_paths = _num(cfg, "hedge.n_paths", 2, integer=True)
    Z = _num(cfg, "hedge.Z")
    res = hedging.error_scaling(
        spec, gaps, T, n_paths, cfg["seed"], Z,
        _num(cfg, "hedge.pre_steps", 1, integer=True),
        _num(cfg, "hedge.steps_per_unit", 1, integer=True),
        _num(cfg, "hedge.max_steps", 1, integer=True), workers)
    write_csv(out / "hedge_ledger.csv", prov, hedging.LEDGER_COLUMNS,
              ([r[c] for c in hedging.LEDGER_COLUMNS] for r in res.rows))
    write_json(out / "scaling.json", prov, res.to_dict())
    if res.degenerate:
        print(f"contract refusal: {res.reason}", file=sys.stderr)
        return EXIT_REFUSED
    return EXIT_OK


def cmd_arbitrage(cfg: dict, out: Path, prov: dict, workers: int) -> int:
    spec = build_model(cfg, "arbitrage.model")
    H = _num(cfg, "arbitrage.H", 0, 0.5, lo_open=True, hi_open=True)
    c = _num(cfg, "arbitrage.remainder_c")
    rem = arbitrage.power_remainder(c, _num(cfg, "arbitrage.remainder_eps", 0, lo_open=True), H) if c else None
    mkt = arbitrage.SkewMarket(
        _num(cfg, "arbitrage.T", 0, lo_open=True), H,
        _num(cfg, "arbitrage.sigma", 0, lo_open=True),
        _num(cfg, "arbitrage.alpha", hi=0), rem)
    n_min = _num(cfg, "arbitrage.n_min", 1, integer=True)
    n_max = _num(cfg, "arbitrage.n_max", 16, integer=True)
    if not n_max > n_min:
        raise ConfigError("arbitrage.n_max", "must exceed arbitrage.n_min")
    h0 = _get(cfg, "arbitrage.H0_asserted")
    if h0 is not None:
        h0 = _num(cfg, "arbitrage.H0_asserted", 0, 1)
    rep = arbitrage.run_strategy(
        mkt, spec, n_max, _num(cfg, "arbitrage.Z", hi=0, hi_open=True),
        _num(cfg, "arbitrage.replicas", 1, integer=True), cfg["seed"], n_min,
        _num(cfg, "arbitrage.substeps", 1, integer=True),
        _num(cfg, "arbitrage.pre_steps", 1, integer=True), h0, workers)
    write_json(out / "arbitrage.json", prov, rep.to_dict())
    write_csv(out / "blocks.csv", prov, arbitrage.BLOCK_COLUMNS, rep.rows())
    return EXIT_OK


COMMANDS = {"smile": cmd_smile, "alpha": cmd_alpha, "hedge": cmd_hedge, "arbitrage": cmd_arbitrage}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="roughskew", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in [*COMMANDS, "print-config"]:
        p = sub.add_parser(name)
        p.add_argument("--config", metavar="PATH", help="YAML configuration file")
        p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        p.add_argument("--out", metavar="DIR", help="output directory")
        p.add_argument("--workers", type=int, metavar="N", help="worker threads")
        p.add_argument("--model", choices=("rough_bergomi", "local_vol", "constant"),
                       help="shortcut for --set model.kind=... (hedge.model.kind, arbitrage.model.kind "
                            "for those commands)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config field, e.g. --set smile.n_paths=20000")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    model_key = f"{args.command}.model.kind" if args.command in ("hedge", "arbitrage") else "model.kind"
    flags = {"seed": args.seed, "out": args.out, "workers": args.workers, model_key: args.model}
    try:
        cfg = resolve_config(args.config, args.set, **flags)
        seed, workers, out = _global(cfg)
        if args.command == "print-config":
            sys.stdout.write(yaml.safe_dump(cfg, sort_keys=False))
            return EXIT_OK
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out, provenance(cfg), workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ContractRefusal as exc:
        print(f"contract refusal: {exc}", file=sys.stderr)
        return EXIT_REFUSED
    except (NumericalError, PriceBandError, QuoteError, GridError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        # precondition failures raised by the model and experiment constructors
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
