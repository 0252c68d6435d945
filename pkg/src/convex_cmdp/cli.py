"""Command line entry point: ``convex-cmdp {run,sweep,oracle,ratefit,validate}``.

Relative output directories are resolved against ``$CONVEX_CMDP_OUT`` when
it is set, otherwise against the working directory.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from pathlib import Path

from .bench import build_instance, load_config, output_root, rate_fit, run_experiment, solve_oracle
from .mdp import InvalidMdpError, load_mdp


def _out_dir(cfg, override=None):
    if override is not None:
        return Path(override)
    return output_root() / cfg.get("output_dir", "runs/" + cfg.get("name", "experiment"))


def cmd_run(args):
    cfg = load_config(args.config)
    summary = run_experiment(cfg, _out_dir(cfg, args.out), base_dir=Path(args.config).parent)
    print(json.dumps({k: summary[k] for k in ("avg_gap", "avg_violation", "tail_gap", "F_star")}))


def cmd_sweep(args):
    cfg = load_config(args.config)
    root = _out_dir(cfg, args.out)
    summaries = []
    for T in (int(float(x)) for x in args.T.split(",")):
        c = copy.deepcopy(cfg)
        c["solver"]["T"] = T
        s = run_experiment(c, root / f"T_{T}", base_dir=Path(args.config).parent)
        summaries.append(s)
        print(json.dumps({"T": T, "avg_gap": s["avg_gap"], "avg_violation": s["avg_violation"]}))
    if len(summaries) >= 4:
        fit = rate_fit(summaries)
        (root / "ratefit.json").write_text(json.dumps(fit, indent=1))
        print(json.dumps(fit))


def cmd_oracle(args):
    cfg = load_config(args.config)
    inst = build_instance(cfg, Path(args.config).parent)
    cfg.setdefault("oracle", {})
    if cfg["oracle"].get("method") == "none":
        cfg["oracle"]["method"] = "fw"
    sol = solve_oracle(cfg, inst)
    out = _out_dir(cfg, args.out)
    out.mkdir(parents=True, exist_ok=True)
    sol.save(out / "oracle.json")
    print(json.dumps({"F_star": sol.F_star, "mu_star": sol.mu_star,
                      "duality_gap": sol.duality_gap, "certified": sol.certified}))


def cmd_ratefit(args):
    paths = sorted(Path(args.dir).glob("*/summary.json"))
    summaries = [json.loads(p.read_text()) for p in paths]
    print(json.dumps(rate_fit(summaries)))


def cmd_validate(args):
    mdp = load_mdp(args.mdp)
    print(f"ok: {mdp.n_states} states, {mdp.n_actions} actions, gamma={mdp.gamma}")


def build_parser():
    p = argparse.ArgumentParser(prog="convex-cmdp", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one experiment config")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (overrides the config)")
    r.set_defaults(func=cmd_run)
    s = sub.add_parser("sweep", help="run a config over several horizons T and fit the rate")
    s.add_argument("config")
    s.add_argument("--T", required=True, help="comma-separated horizons, e.g. 100,1000,10000,100000")
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)
    o = sub.add_parser("oracle", help="solve the convex program over occupancy measures")
    o.add_argument("config")
    o.add_argument("--out")
    o.set_defaults(func=cmd_oracle)
    f = sub.add_parser("ratefit", help="fit the convergence rate from a sweep directory")
    f.add_argument("dir")
    f.set_defaults(func=cmd_ratefit)
    v = sub.add_parser("validate", help="check an MDP JSON file")
    v.add_argument("mdp")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (InvalidMdpError, ValueError, RuntimeError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
