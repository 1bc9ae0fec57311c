"""irisfhe command line.

Exit codes: 0 success, 1 runtime or module error, 2 configuration error.
Errors are printed to stderr as one JSON object {"error", "message"}.
"""
from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import analysis, costmodel, iris_core, pipeline, thfhe_sim
from .emulator import Emulator, load_config
from .errors import ConfigError, IrisFheError
from .poly_design import FoldingSpec, Polynomial, compose_classifier, design_folding_poly, fold_fixture

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def _schema(name: str) -> dict:
    return json.loads(resources.files("irisfhe.data").joinpath(name).read_text())


def load_json(path, schema: str | None = None) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"no such file: {path}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if schema is not None:
        try:
            jsonschema.validate(doc, _schema(schema))
        except jsonschema.ValidationError as exc:
            where = "/".join(map(str, exc.absolute_path)) or "<root>"
            raise ConfigError(f"{path}: {where}: {exc.message}") from exc
    return doc


def demo_path(name: str) -> str:
    return str(resources.files("irisfhe.data").joinpath(name))


def read_templates_any(path) -> list:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"no such file: {path}")
    if p.suffix == ".json":
        return iris_core.templates_from_json(p.read_text())
    return iris_core.read_templates(p)


def write_templates_any(path, templates) -> None:
    p = Path(path)
    if p.suffix == ".json":
        p.write_text(iris_core.templates_to_json(templates))
    else:
        iris_core.write_templates(p, templates)


def _dump(obj, path) -> None:
    text = json.dumps(obj, indent=1, default=_jsonable)
    if path:
        Path(path).write_text(text)


def _jsonable(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _pair(s: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in s.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected 'lo,hi', got {s!r}") from exc
    return lo, hi


def _ints(s: str) -> list[int]:
    try:
        return [int(v) for v in s.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}") from exc


# --- commands ---------------------------------------------------------------------

def cmd_gen_db(a) -> int:
    db = iris_core.synth_db(a.n, a.d, a.mask_density, a.seed)
    write_templates_any(a.out, db)
    print(f"wrote {a.n} templates of length {a.d} to {a.out}")
    return EXIT_OK


def cmd_design_fold(a) -> int:
    f = design_folding_poly(a.alpha, a.mean, a.std, a.p_interval, a.degree)
    f.save(a.out)
    print("coefficients (ascending):", " ".join(f"{c:.6g}" for c in f.x_coeffs()))
    return EXIT_OK


def cmd_design_classifier(a) -> int:
    ch = compose_classifier(a.i0, a.i1, a.target, a.degrees)
    ok = ch.verify()
    Path(a.out).write_text(json.dumps(ch.to_dict(), indent=1))
    print(f"degrees {ch.degrees} eps {['%.3g' % e for e in ch.eps_schedule]} grid-verified={ok}")
    return EXIT_OK if ok else EXIT_RUNTIME


def _resolve(base: Path, p):
    if p is None:
        return None
    q = Path(p)
    return str(q if q.is_absolute() else base / q)


def cmd_run(a) -> int:
    manifest = load_json(a.config, "run_manifest.schema.json")
    base = Path(a.config).resolve().parent
    pcfg = dict(manifest.get("pipeline", {}))
    for key in ("fold_poly", "emulator"):
        if pcfg.get(key):
            pcfg[key] = _resolve(base, pcfg[key])
    cfg = pipeline.PipelineConfig.from_dict(pcfg)
    db_path = a.db or _resolve(base, manifest.get("db"))
    q_path = a.query or _resolve(base, manifest.get("query"))
    if (db_path is None) != (q_path is None):
        raise ConfigError("give both a database and a query file, or neither")
    if db_path is None:
        inst = manifest.get("instance", {})
        gen = pipeline.make_instance(cfg, a.seed if a.seed is not None else inst.get("seed", 0),
                                     **{k: v for k, v in inst.items() if k != "seed"})
        db, queries = gen.db, gen.queries
    else:
        db, queries = read_templates_any(db_path), read_templates_any(q_path)
        if len(queries) != cfg.batch:
            raise ConfigError(f"query file holds {len(queries)} eyes, config batch is {cfg.batch}")
    ev = Emulator(load_config(cfg.emulator), inject=manifest.get("inject", False),
                  seed=manifest.get("seed", 0), trace=True)
    run = pipeline.run_alg1 if a.alg == 1 else pipeline.run_alg2
    res = run(cfg, queries, db, ev)
    rep = dict(res.report)
    rep["config"] = cfg.to_dict()
    rep["levels"] = {"min": rep.get("min_level"), "final": rep["final_level"],
                     "trace_rows": len(ev.trace)}
    if a.trace:
        ev.write_trace(a.trace)
    _dump(rep, a.report)
    print(f"alg {a.alg}: match bits {rep['match_bits']} oracle {rep['oracle_bits']} "
          f"agree={rep['agree']} bts={rep['bts']}")
    return EXIT_OK if rep["agree"] else EXIT_RUNTIME


def cmd_montecarlo(a) -> int:
    f = Polynomial.load(a.poly) if a.poly else fold_fixture()
    spec = FoldingSpec(k=a.k, N_f=tuple(a.n_f), P_f=tuple(a.p_f))
    r = analysis.montecarlo_fold(f, spec=spec, trials=a.trials, seed=a.seed, workers=a.workers)
    if a.out:
        r.write_json(a.out)
    if a.hist:
        r.write_histogram_csv(a.hist)
    print(f"trials {r.trials}: negative sums outside N_f {r.neg_outside_Nf}, "
          f"positive sums outside P_f {r.pos_outside_Pf} "
          f"(p1 {r.p1:.3g}, p2 {r.p2:.3g})")
    return EXIT_OK


def cmd_thfhe(a) -> int:
    p = thfhe_sim.ThFheParams(n=a.n, t=a.t, log_N=a.logN, lam=a.lam, log_Be=a.log_be)
    tr = thfhe_sim.round_trips(p, a.trials, a.seed)
    if a.out:
        Path(a.out).write_text(tr.to_json())
    print(f"gap {tr.gap_bits} bits, Delta/B_e {tr.delta_over_Be_bits} bits, "
          f"{tr.trials - tr.failures}/{tr.trials} round trips correct")
    return EXIT_OK if tr.failures == 0 and tr.gap_ok else EXIT_RUNTIME


def cmd_cost(a) -> int:
    doc = load_json(a.config, "cost_config.schema.json") if a.config else {}
    r = costmodel.cost_report(costmodel.CostConfig.from_dict(doc))
    if a.out:
        costmodel.write_report(r, a.out)
    print(costmodel.format_report(r))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="irisfhe", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("gen-db", help="synthesize random iris templates")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--d", type=int, required=True)
    s.add_argument("--mask-density", type=float, default=0.9)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help=".json for text, anything else for binary")
    s.set_defaults(func=cmd_gen_db)

    s = sub.add_parser("design-fold", help="weighted least-squares folding polynomial")
    s.add_argument("--alpha", type=float, default=1e3)
    s.add_argument("--mean", type=float, default=0.008)
    s.add_argument("--std", type=float, default=0.06)
    s.add_argument("--p-interval", type=_pair, default=(0.3, 1.0))
    s.add_argument("--degree", type=int, default=7)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_design_fold)

    s = sub.add_parser("design-classifier", help="composed Remez classification chain")
    s.add_argument("--i0", type=_pair, required=True)
    s.add_argument("--i1", type=_pair, required=True)
    s.add_argument("--degrees", type=_ints, required=True)
    s.add_argument("--target", type=float, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_design_classifier)

    s = sub.add_parser("run", help="emulated pipeline run with oracle comparison")
    s.add_argument("--config", default=demo_path("demo_run.json"), help="run manifest (JSON)")
    s.add_argument("--db")
    s.add_argument("--query")
    s.add_argument("--alg", type=int, choices=(1, 2), default=2)
    s.add_argument("--seed", type=int, default=None, help="instance seed override")
    s.add_argument("--report")
    s.add_argument("--trace", help="CSV trace of every emulated operation")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("montecarlo-fold", help="folding failure counts")
    s.add_argument("--poly", help="polynomial JSON; default is the packaged fixture")
    s.add_argument("--k", type=int, default=16)
    s.add_argument("--trials", type=int, default=10**6)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n-f", type=_pair, default=(-0.13, 0.33))
    s.add_argument("--p-f", type=_pair, default=(0.4, 3.8))
    s.add_argument("--workers", type=int, default=None,
                   help=f"worker processes (default ${analysis.WORKERS_ENV} or CPU count)")
    s.add_argument("--out")
    s.add_argument("--hist", help="histogram CSV")
    s.set_defaults(func=cmd_montecarlo)

    s = sub.add_parser("thfhe-demo", help="threshold decryption round trips")
    s.add_argument("--n", type=int, default=3)
    s.add_argument("--t", type=int, default=2)
    s.add_argument("--logN", type=int, default=4)
    s.add_argument("--lambda", dest="lam", type=int, default=128)
    s.add_argument("--log-be", type=int, default=4)
    s.add_argument("--trials", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_thfhe)

    s = sub.add_parser("cost-report", help="database, memory and traffic sizes")
    s.add_argument("--config")
    s.add_argument("--out")
    s.set_defaults(func=cmd_cost)
    return ap


def _fail(code: int, exc: BaseException) -> int:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc)
    except (IrisFheError, ValueError, OSError, RuntimeError) as exc:
        return _fail(EXIT_RUNTIME, exc)


if __name__ == "__main__":
    sys.exit(main())
