"""Command-line driver.

    genmdp gen-mdp --S 4 --A 2 --mixing 0.2 --seed 3 --out mdp.json
    genmdp plan-finite --fixture M2 --H 2 --mode classical --eps 0.05 --scale 0.015625 --out runs/
    genmdp online-infinite --fixture M2 --T 4096 --mode quantum --seeds 5 --out runs/
    genmdp fit runs/online_infinite_seed0.csv --column cum_inpath --window 256 4096

Exit codes: 0 ok, 2 hypothesis violation, 3 budget overflow in strict mode.
Every run writes manifest.json next to its outputs.
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__, online
from . import plan_finite as pf
from . import plan_infinite as pinf
from .bench import ExperimentConfig, SlopeFit, build_instance, fit_loglog_slope, generate_random_mdp
from .mdp_core import ConvergenceError, FiniteMdp, ergodicity_coefficient, exact_backward_induction, \
    exact_gain_bias_optimal
from .oracles import BudgetOverflow, HypothesisViolation, QuantumEmulationConfig, QueryLedger, as_model

EXIT_HYPOTHESIS = 2
EXIT_OVERFLOW = 3

FINITE_PLANNERS = {"classical": pf.classical_backward_induction,
                   "quantum_modern": pf.quantum_modern_backward_induction,
                   "quantum_simple": pf.quantum_simple_backward_induction}


def git_describe(path=None) -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=path or os.getcwd(),
                             capture_output=True, text=True, timeout=10)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() or "unknown"


def write_manifest(out_dir, command, cfg: ExperimentConfig, argv, extra=None):
    doc = {"command": command, "config": cfg.to_dict(), "config_hash": cfg.digest(),
           "seeds": cfg.seeds, "git_describe": git_describe(os.path.dirname(os.path.abspath(__file__))),
           "version": __version__, "argv": list(argv), "numpy": np.__version__}
    doc.update(extra or {})
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(doc, fh, indent=1)
    return doc


def _common(p, modes=None, default_mode=None):
    p.add_argument("--config", help="JSON ExperimentConfig; command-line flags override it")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--fixture", choices=["M2", "riverswim6", "compactD1"])
    g.add_argument("--instance", help="path to an MDP or compact spec JSON")
    p.add_argument("--net-n", type=int, help="net resolution for compact instances")
    if modes:
        p.add_argument("--mode", choices=modes, default=None, help=f"default {default_mode}")
    p.add_argument("--eps", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--seed", type=int, help="first seed")
    p.add_argument("--seeds", type=int, help="number of consecutive seeds")
    p.add_argument("--noise", choices=["exact", "uniform", "signed_worst"])
    p.add_argument("--scale", type=float, help="constant-scale multiplier on classical sample sizes")
    p.add_argument("--budget-const", type=float, help="c_budget: phase budget is c_budget * tau")
    p.add_argument("--strict", action="store_true", help="abort (exit 3) on budget overflow")
    p.add_argument("--workers", type=int, default=1, help="threads to fan seeds over")
    p.add_argument("--out", help="output directory")


def build_parser():
    ap = argparse.ArgumentParser(prog="genmdp", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-mdp", help="write a random mixing MDP or a fixture as JSON")
    p.add_argument("--S", type=int, default=4)
    p.add_argument("--A", type=int, default=2)
    p.add_argument("--mixing", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fixture", choices=["M2", "riverswim6", "compactD1"])
    p.add_argument("--out", default="mdp.json", help="output file")

    p = sub.add_parser("plan-finite", help="one finite-horizon planner run per seed")
    _common(p, list(FINITE_PLANNERS), "classical")
    p.add_argument("--H", type=int)
    p.add_argument("--tau", type=float, help="give the planning phase a budget of c_budget * tau")

    p = sub.add_parser("plan-infinite", help="one average-reward value iteration run per seed")
    _common(p, ["classical", "quantum"], "classical")
    p.add_argument("--nu", type=float, help="contraction coefficient (default: computed)")
    p.add_argument("--Lambda", type=float, help="bias span bound (default: computed)")
    p.add_argument("--tau", type=float)

    p = sub.add_parser("online-finite", help="episodic online loop, CSV trace per seed")
    _common(p, list(online.FINITE_MODES), "classical")
    p.add_argument("--H", type=int)
    p.add_argument("--K", type=int, help="number of episodes")

    p = sub.add_parser("online-infinite", help="doubling-episode online loop, CSV trace per seed")
    _common(p, list(online.INFINITE_MODES), "classical")
    p.add_argument("--T", type=int, help="number of steps")
    p.add_argument("--nu", type=float)
    p.add_argument("--Lambda", type=float)

    p = sub.add_parser("oracle", help="exact solvers: V*, pi*, g*, h*, nu")
    _common(p)
    p.add_argument("--H", type=int)

    p = sub.add_parser("fit", help="log-log slope of one column of trace CSVs")
    p.add_argument("traces", nargs="+")
    p.add_argument("--column", default="cum_inpath")
    p.add_argument("--window", type=float, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--rms", action="store_true", help="fit the RMS over traces instead of the mean")
    p.add_argument("--out", help="write the fit as JSON")
    return ap


def config_from_args(args) -> ExperimentConfig:
    base = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            base = json.load(fh)
    cfg = ExperimentConfig.from_dict(base).to_dict()
    if args.fixture:
        cfg["instance"] = {"fixture": args.fixture}
    elif args.instance:
        cfg["instance"] = {"path": args.instance}
    if args.net_n is not None:
        inst = cfg["instance"]
        if inst.get("fixture") == "compactD1":
            cfg["instance"] = inst = {"compact": {"D": 1, "A": 2, "beta": 1.0, "seed": 0}}
        if "compact" not in inst:
            raise ValueError("--net-n applies to compact instances only")
        inst["compact"]["n"] = args.net_n
    for flag, key in [("mode", "mode"), ("eps", "eps"), ("delta", "delta"), ("noise", "noise_mode"),
                      ("scale", "scale"), ("budget_const", "c_budget"), ("out", "out"), ("H", "H"),
                      ("K", "K"), ("T", "T"), ("tau", "tau"), ("nu", "nu"), ("Lambda", "Lambda")]:
        v = getattr(args, flag, None)
        if v is not None:
            cfg[key] = v
    if args.strict:
        cfg["strict"] = True
    if args.seed is not None or args.seeds is not None:
        first = args.seed if args.seed is not None else cfg["seeds"][0]
        cfg["seeds"] = list(range(first, first + (args.seeds or 1)))
    return ExperimentConfig.from_dict(cfg)


def _env(cfg: ExperimentConfig):
    env, net = build_instance(cfg.instance)
    if not isinstance(env, FiniteMdp) and net is None:
        raise ValueError("compact instances need a net resolution (--net-n or instance.compact.n)")
    return env, net


def _fan(fn, seeds, workers):
    if workers <= 1:
        return [fn(s) for s in seeds]
    with ThreadPoolExecutor(workers) as ex:
        return list(ex.map(fn, seeds))


def _dump(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, default=lambda x: x.tolist() if hasattr(x, "tolist") else str(x))


def cmd_gen_mdp(args, argv):
    if args.fixture:
        from .bench import fixture
        env = fixture(args.fixture)
    else:
        env = generate_random_mdp(args.S, args.A, args.mixing, args.seed)
    d = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(d, exist_ok=True)
    with open(args.out, "w") as fh:
        fh.write(env.to_json())
    inst = {"fixture": args.fixture} if args.fixture else \
        {"random": {"S": args.S, "A": args.A, "mixing": args.mixing, "seed": args.seed}}
    cfg = ExperimentConfig(instance=inst, seeds=[args.seed], out=d)
    write_manifest(d, "gen-mdp", cfg, argv, {"file": os.path.basename(args.out)})
    return 0


def cmd_plan_finite(cfg: ExperimentConfig, workers):
    env, net = _env(cfg)
    if cfg.eps is None:
        raise ValueError("plan-finite needs --eps")
    mode = cfg.mode if cfg.mode in FINITE_PLANNERS else "classical"
    qcfg = QuantumEmulationConfig(cfg.noise_mode)

    def run(seed):
        ledger = QueryLedger(cfg.c_budget, cfg.strict)
        ledger.open_phase("plan", cfg.tau)
        kw = {"scale": cfg.scale} if mode == "classical" else {"cfg": qcfg}
        out = FINITE_PLANNERS[mode](env, cfg.H, cfg.eps, cfg.delta, net=net, ledger=ledger, seed=seed, **kw)
        doc = out.to_dict()
        doc["seed"] = seed
        _dump(os.path.join(cfg.out, f"plan_finite_seed{seed}.json"), doc)
        return out.queries

    return {"queries": _fan(run, cfg.seeds, workers)}


def cmd_plan_infinite(cfg: ExperimentConfig, workers):
    env, net = _env(cfg)
    if cfg.eps is None:
        raise ValueError("plan-infinite needs --eps")
    fin = as_model(env, net).finite
    nu = ergodicity_coefficient(fin).nu if cfg.nu is None else cfg.nu
    Lam = exact_gain_bias_optimal(fin).span_h if cfg.Lambda is None else cfg.Lambda
    vcfg = pinf.VIConfig(eps=cfg.eps, nu=nu, Lambda=Lam, delta=cfg.delta, scale=cfg.scale,
                         holder=getattr(env, "holder", pinf.HolderParams(0.0, 1.0)))
    qcfg = QuantumEmulationConfig(cfg.noise_mode)

    def run(seed):
        ledger = QueryLedger(cfg.c_budget, cfg.strict)
        ledger.open_phase("plan", cfg.tau)
        if cfg.mode == "quantum":
            out = pinf.quantum_value_iteration(env, vcfg, net=net, ledger=ledger, qcfg=qcfg, seed=seed)
        else:
            out = pinf.classical_value_iteration(env, vcfg, net=net, ledger=ledger, seed=seed)
        doc = out.to_dict()
        doc.update(seed=seed, nu=nu, Lambda=Lam)
        _dump(os.path.join(cfg.out, f"plan_infinite_seed{seed}.json"), doc)
        return out.queries

    return {"queries": _fan(run, cfg.seeds, workers), "nu": nu, "Lambda": Lam}


def _check_online_hypothesis(env, net, cfg, horizon):
    model = as_model(env, net)
    if model.slack > 1 / (16 * horizon) and cfg.mode in ("classical", "quantum_modern"):
        raise HypothesisViolation(f"discretization slack {model.slack:.4g} exceeds 1/(16H)")


def cmd_online_finite(cfg: ExperimentConfig, workers):
    env, net = _env(cfg)
    if cfg.K is None:
        raise ValueError("online-finite needs --K")
    _check_online_hypothesis(env, net, cfg, cfg.H)
    qcfg = QuantumEmulationConfig(cfg.noise_mode)

    def run(seed):
        ledger = QueryLedger(cfg.c_budget, cfg.strict)
        trace, logs = online.run_online_finite(env, cfg.H, cfg.K, cfg.mode, cfg.delta, seed, net=net,
                                               scale=cfg.scale, c_budget=cfg.c_budget, qcfg=qcfg,
                                               strict=cfg.strict, ledger=ledger)
        stem = os.path.join(cfg.out, f"online_finite_seed{seed}")
        trace.to_csv(stem + ".csv")
        online.write_sidecar(stem + ".json", logs, ledger, {"seed": seed})
        return float(trace.cum_finiteH[-1])

    return {"final_regret": _fan(run, cfg.seeds, workers)}


def cmd_online_infinite(cfg: ExperimentConfig, workers):
    env, net = _env(cfg)
    if cfg.T is None:
        raise ValueError("online-infinite needs --T")
    qcfg = QuantumEmulationConfig(cfg.noise_mode)
    mode = cfg.mode if cfg.mode in online.INFINITE_MODES else "classical"

    def run(seed):
        ledger = QueryLedger(cfg.c_budget, cfg.strict)
        trace, logs = online.run_online_infinite(env, cfg.T, mode, cfg.delta, cfg.Lambda, cfg.nu, seed,
                                                 net=net, scale=cfg.scale, c_budget=cfg.c_budget, qcfg=qcfg,
                                                 strict=cfg.strict, ledger=ledger)
        stem = os.path.join(cfg.out, f"online_infinite_seed{seed}")
        trace.to_csv(stem + ".csv")
        online.write_sidecar(stem + ".json", logs, ledger, {"seed": seed})
        return float(trace.cum_inpath[-1])

    return {"final_inpath": _fan(run, cfg.seeds, workers)}


def cmd_oracle(cfg: ExperimentConfig, workers):
    env, net = _env(cfg)
    fin = as_model(env, net).finite
    doc = {"S": fin.num_states, "A": fin.num_actions, "nu": ergodicity_coefficient(fin).nu}
    opt = exact_gain_bias_optimal(fin)
    doc.update(g_star=opt.gain, h_star=opt.h.tolist(), rule_star=opt.rule.tolist(), span_h=opt.span_h)
    if cfg.H:
        V, pi = exact_backward_induction(fin, cfg.H)
        doc.update(H=cfg.H, V_star=V.tolist(), pi_star=pi.tolist())
    _dump(os.path.join(cfg.out, "oracle.json"), doc)
    print(json.dumps({k: doc[k] for k in ("g_star", "nu", "span_h")}))
    return doc


def cmd_fit(args):
    import csv

    cols = []
    t = None
    for path in args.traces:
        with open(path) as fh:
            rows = list(csv.DictReader(fh))
        if args.column not in rows[0]:
            raise ValueError(f"column {args.column!r} not in {path}")
        cols.append([float(r[args.column]) if r[args.column] != "" else np.nan for r in rows])
        t = np.array([float(r["t"]) for r in rows])
    n = min(len(c) for c in cols)
    Y = np.array([c[:n] for c in cols])
    y = np.sqrt(np.mean(Y**2, axis=0)) if args.rms else Y.mean(axis=0)
    fit: SlopeFit = fit_loglog_slope(y, tuple(args.window) if args.window else None, t[:n])
    doc = {"exponent": fit.exponent, "intercept": fit.intercept, "window": fit.window,
           "residual": fit.residual, "points": fit.points, "traces": len(cols), "column": args.column}
    print(json.dumps(doc))
    if args.out:
        _dump(args.out, doc)
    return 0


COMMANDS = {"plan-finite": cmd_plan_finite, "plan-infinite": cmd_plan_infinite,
            "online-finite": cmd_online_finite, "online-infinite": cmd_online_infinite,
            "oracle": cmd_oracle}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    try:
        if args.command == "gen-mdp":
            return cmd_gen_mdp(args, argv)
        if args.command == "fit":
            return cmd_fit(args)
        cfg = config_from_args(args)
        os.makedirs(cfg.out, exist_ok=True)
        write_manifest(cfg.out, args.command, cfg, argv, {"status": "started"})
        result = COMMANDS[args.command](cfg, args.workers)
        write_manifest(cfg.out, args.command, cfg, argv, {"status": "ok", "result": result})
        return 0
    except HypothesisViolation as err:
        print(f"hypothesis violation: {err}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    except BudgetOverflow as err:
        print(f"budget overflow: {err}", file=sys.stderr)
        return EXIT_OVERFLOW
    except (ValueError, ConvergenceError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
