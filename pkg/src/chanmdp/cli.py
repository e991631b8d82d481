"""Command-line front end.

Every command reads an optional JSON config (scenario keys plus optional
``filter``, ``sweep`` and ``mharp`` sections), writes its artifacts to
``--out-dir`` and records them in ``<command>.manifest.json``.
"""

import argparse
import csv
import hashlib
import json
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import errors
from .controllers import MHARP_PRESETS, MdpController, MharpConfig
from .filters import FilterSpec, channel_responses, design_with_fallback, measure, save_coefficients
from .model import describe, factored_size, save_model
from .sim import (
    ManualFactory, MdpFactory, MharpFactory, ScenarioConfig, iid_family, manual_factories,
    run_simulation, seq_family, sweep, trace_csv,
)
from .solver import read_policy, value_iteration, write_policy

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4

DEFAULT_R1 = [round(0.1 * i, 1) for i in range(1, 10)]


def load_config(path):
    if path is None:
        return {}
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise errors.ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise errors.ConfigError("config root must be a JSON object")
    return data


def config_hash(raw, args):
    payload = {"config": raw, "seed": args.seed, "no_transition_states": args.no_transition_states,
               "actions": args.actions}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def scenario_from(raw, args):
    sc = ScenarioConfig.from_dict(raw)
    kw = {}
    if args.seed is not None:
        kw["seed"] = int(args.seed)
    if args.no_transition_states:
        kw["with_transitions"] = False
    if args.actions is not None:
        kw["n_actions"] = int(args.actions)
    return replace(sc, **kw) if kw else sc


def write_csv(path, header, rows, schema):
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(f"# schema: {schema} columns={','.join(header)}\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            values = [r[h] for h in header] if isinstance(r, dict) else r
            w.writerow([_fmt(v) for v in values])
    return path


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


class Run:
    def __init__(self, command, args, raw):
        self.command = command
        self.out = Path(args.out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest = {
            "command": command,
            "config_hash": config_hash(raw, args),
            "config": raw,
            "started": datetime.now(timezone.utc).isoformat(),
            "artifacts": {},
        }

    def path(self, key, name):
        p = self.out / name
        self.manifest["artifacts"][key] = str(p)
        return p

    def finish(self, **extra):
        self.manifest.update(extra)
        self.manifest["finished"] = datetime.now(timezone.utc).isoformat()
        p = self.out / f"{self.command}.manifest.json"
        p.write_text(json.dumps(self.manifest, indent=2, default=str), encoding="utf-8")
        return p


def cmd_design_filter(args, raw):
    run = Run("design-filter", args, raw)
    spec = FilterSpec.from_dict(raw.get("filter", {}))
    h = design_with_fallback(spec)
    save_coefficients(h, run.path("coefficients", "prototype_coefficients.txt"))
    freqs, mags = channel_responses(h, spec.num_channels, 1024)
    header = ["freq"] + [f"ch{m}" for m in range(spec.num_channels)]
    rows = [[f] + list(mags[i]) for i, f in enumerate(freqs)]
    write_csv(run.path("response_csv", "channel_response.csv"), header, rows,
              "chanmdp-response/1")
    from .plotting import response_plot
    response_plot(freqs, mags, run.path("response_svg", "channel_response.svg"))
    atten, ripple = measure(h)
    run.finish(filter={"method": h.spec.method, "num_taps": len(h),
                       "stopband_atten_db": atten, "passband_ripple_db": ripple})
    print(f"designed {len(h)}-tap {h.spec.method} prototype: {atten:.2f} dB stopband, "
          f"{ripple:.3f} dB ripple")
    return EXIT_OK


def cmd_build_model(args, raw):
    run = Run("build-model", args, raw)
    sc = scenario_from(raw, args)
    model = sc.build_model()
    save_model(model, run.path("model", "model.fmdp"))
    run.manifest["artifacts"]["model_json"] = str(run.out / "model.json")
    info = describe(model)
    run.finish(model=info)
    print(f"|S|={info['n_states']} factored={info['factored_stm_elements']} "
          f"dense={info['dense_stm_elements']}")
    return EXIT_OK


def _solve(run, sc):
    model = sc.build_model()
    dense, fact = factored_size(model)
    run.manifest["stm_elements"] = {"dense": dense, "factored": fact}
    run.manifest["model"] = describe(model)
    try:
        policy, V, stats = value_iteration(model, sc.solver)
    except errors.NonConvergenceError as exc:
        run.finish(solver={"converged": False, "final_residual": exc.residual,
                           "iterations": exc.iterations})
        raise
    run.manifest["solver"] = stats.as_dict()
    return model, policy, stats


def cmd_solve(args, raw):
    run = Run("solve", args, raw)
    sc = scenario_from(raw, args)
    model, policy, stats = _solve(run, sc)
    p = write_policy(policy, run.path("policy", "policy.mpol"))
    run.finish(policy_bytes=p.stat().st_size)
    print(f"solved |S|={model.n_states} in {stats.iterations} iterations "
          f"({stats.wall_time_s:.2f} s); factored STM elements "
          f"{run.manifest['stm_elements']['factored']}")
    return EXIT_OK


CONTROLLERS = ["mdp", "dftfb", "dftfb_sleep", "dcm_sleep", "combo2", "combo3", "combo4",
               "combo5", "combo6", "mharp_power", "mharp_success"]


def _controller(name, sc, policy_path=None):
    if name == "mdp":
        if policy_path:
            model = sc.build_model()
            pol = read_policy(policy_path, model.n_actions)
            return MdpController(pol, model.space, model.actions)
        return MdpFactory()(sc)
    if name.startswith("combo"):
        return ManualFactory("combo", int(name[5:]))(sc)
    if name == "mharp_power":
        return MharpFactory("power_optimized")(sc)
    if name == "mharp_success":
        return MharpFactory("success_optimized")(sc)
    return ManualFactory(name)(sc)


def cmd_simulate(args, raw):
    run = Run("simulate", args, raw)
    sc = scenario_from(raw, args)
    ctl = _controller(args.controller, sc, args.policy)
    m = run_simulation(ctl, sc, record_trace=True, fidelity=args.fidelity)
    row = {"controller": ctl.name, "scenario": sc.label or sc.use_case, **m.as_row()}
    write_csv(run.path("metrics", "metrics.csv"), list(row), [row], "chanmdp-metrics/1")
    run.path("trace", "trace.csv").write_text(trace_csv(m), encoding="utf-8")
    run.finish(metrics=m.as_row())
    print(f"{ctl.name}: success {m.success_rate:.4f}, avg power {m.avg_power * 1e3:.3f} mW, "
          f"savings {m.normalized_power_savings:.4f}")
    return EXIT_OK


def _mharp_factories(raw):
    presets = dict(MHARP_PRESETS)
    presets.update({k: tuple(v) for k, v in raw.get("mharp", {}).items()})
    return [MharpFactory(t, MharpConfig(*presets[t], tuning=t)) for t in
            ("power_optimized", "success_optimized")]


def compare_factories(raw, r1_values):
    mdp = [MdpFactory((r, 1.0 - r)) for r in r1_values]
    return manual_factories() + mdp + _mharp_factories(raw)


def cmd_compare(args, raw):
    run = Run("compare", args, raw)
    sc = scenario_from(raw, args)
    cfg = raw.get("sweep", {})
    family = cfg.get("family", "base")
    r1_values = cfg.get("r1", DEFAULT_R1)
    if family == "base":
        scenarios = [replace(sc, label=sc.label or sc.use_case)]
    elif family == "IID":
        scenarios = iid_family(sc, cfg.get("betas"))
    elif family == "SEQ":
        scenarios = seq_family(sc, cfg.get("dwells"))
    elif family == "both":
        scenarios = iid_family(sc, cfg.get("betas")) + seq_family(sc, cfg.get("dwells"))
    else:
        raise errors.ConfigError(f"unknown sweep family {family!r}")
    factories = compare_factories(raw, r1_values)
    rows = sweep(factories, scenarios, n_jobs=int(cfg.get("n_jobs", 1)))
    header = list(rows[0])
    write_csv(run.path("metrics", "compare.csv"), header, rows, "chanmdp-compare/1")
    from .plotting import pareto_plot
    for i, s in enumerate(scenarios):
        label = s.label or s.use_case
        sub = [r for r in rows if r["scenario"] == label]
        safe = label.replace("=", "_").replace(".", "p")
        pareto_plot(sub, run.path(f"pareto_{i}", f"pareto_{safe}.svg"), title=label)
    run.finish(rows=len(rows), scenarios=len(scenarios))
    print(f"{len(rows)} rows over {len(scenarios)} scenario(s)")
    return EXIT_OK


def transition_study(sc, delays=(1, 2, 3, 4, 5), repeats=3):
    """Solve and simulate with and without transition states for each delay."""
    rows = []
    for d in delays:
        s = replace(sc, transition_time_frames=float(d))
        for modeled in (True, False):
            model = s.build_model(modeled)
            best = None
            for _ in range(repeats):
                policy, _, stats = value_iteration(model, s.solver)
                best = stats.wall_time_s if best is None else min(best, stats.wall_time_s)
            m = run_simulation(MdpController(policy, model.space, model.actions), s)
            rows.append({"delay_frames": d, "modeled": modeled, "success_rate": m.success_rate,
                         "normalized_power_savings": m.normalized_power_savings,
                         "avg_power_w": m.avg_power, "solve_wall_time_s": best,
                         "iterations": stats.iterations})
    return rows


def cmd_transition_study(args, raw):
    run = Run("transition-study", args, raw)
    sc = scenario_from(raw, args)
    rows = transition_study(sc)
    write_csv(run.path("metrics", "transition_study.csv"), list(rows[0]), rows,
              "chanmdp-transition/1")
    delays = sorted({r["delay_frames"] for r in rows})
    series = {
        "transition-aware": [r["success_rate"] for r in rows if r["modeled"]],
        "transition-unaware": [r["success_rate"] for r in rows if not r["modeled"]],
    }
    from .plotting import series_plot
    series_plot(delays, series, run.path("plot", "transition_study.svg"),
                "reconfiguration delay (frames)", "success rate")
    run.finish(rows=len(rows))
    for r in rows:
        print(f"delay {r['delay_frames']} {'aware  ' if r['modeled'] else 'unaware'} "
              f"success {r['success_rate']:.4f} solve {r['solve_wall_time_s']:.3f} s")
    return EXIT_OK


COMMANDS = {
    "design-filter": cmd_design_filter,
    "build-model": cmd_build_model,
    "solve": cmd_solve,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
    "transition-study": cmd_transition_study,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--out-dir", default="out", help="artifact directory")
    common.add_argument("--no-transition-states", action="store_true",
                        help="model reconfigurations as instantaneous")
    common.add_argument("--actions", type=int, choices=(11, 13), help="action set size")
    p = argparse.ArgumentParser(prog="chanmdp", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "simulate":
            sp.add_argument("--controller", choices=CONTROLLERS, default="mdp")
            sp.add_argument("--policy", help="policy file for the mdp controller")
            sp.add_argument("--fidelity", choices=("abstract", "full"), default="abstract")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        raw = load_config(args.config)
        return COMMANDS[args.command](args, raw)
    except errors.NonConvergenceError as exc:
        print(f"error: {exc} (residual {exc.residual:.3g})", file=sys.stderr)
        return EXIT_SOLVER
    except (errors.EncodingError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (errors.ChanMdpError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
