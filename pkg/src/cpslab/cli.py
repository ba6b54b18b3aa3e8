"""Batch experiment runner.

Reads an explicit JSON config (documented in the README), executes the
pipeline stages and writes deterministic artifacts. Nothing that changes
results has a silent default: the seed, the spread sequence and the
payoff boundary data must be spelled out. Worker count is a performance
knob only; results are bit-identical for any value.

Exit codes: 0 success, 1 validation error, 2 numerical failure,
3 invariant violation.
"""

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .cfs_check import TubeQuery, interior_hull_audit, mark_positivity, tube_probability
from .cps import (build_cps_1d, build_cps_multi, verify_sandwich, write_cps_csv,
                  write_cps_summary)
from .errors import CpsLabError, InvariantViolation, NumericalError, ValidationError
from .facelift import PayoffCurve, squeeze_report, write_squeeze_csv
from .models import model_from_config
from .paths import SamplePath, TimeGrid, read_paths_csv, write_paths_csv
from .skeleton import extract_ladder, read_skeletons_csv, write_skeletons_csv
from .walk import ConstantSchedule, integrability_schedule

STAGES = ("simulate", "ladder", "cps", "facelift", "audit")


def parallel_map(fn, items, workers):
    """Order-preserving map; results depend only on the items."""
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _get(cfg, path, required=True, default=None):
    node = cfg
    for part in path.split("."):
        if not isinstance(node, dict) or part not in node:
            if required:
                raise ValidationError(f"config field {path!r} is required")
            return default
        node = node[part]
    return node


def load_config(path, seed_override=None):
    if not os.path.exists(path):
        raise ValidationError(f"config file {path!r} does not exist")
    with open(path) as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config file {path!r} is not valid JSON: {exc}")
    _get(cfg, "model.kind")
    _get(cfg, "grid.horizon")
    _get(cfg, "grid.steps")
    _get(cfg, "n_paths")
    if seed_override is not None:
        cfg["seed"] = int(seed_override)
    if "seed" not in cfg:
        raise ValidationError("config field 'seed' is required; no implicit randomness")
    eps = _get(cfg, "eps")
    eps_seq = [float(e) for e in (eps if isinstance(eps, list) else [eps])]
    if any(e <= 0 for e in eps_seq):
        raise ValidationError("config field 'eps': spreads must be > 0")
    if any(b >= a for a, b in zip(eps_seq, eps_seq[1:])):
        raise ValidationError("config field 'eps': sequence must be strictly decreasing")
    cfg["_eps_seq"] = eps_seq
    payoff = cfg.get("payoff")
    if payoff is not None:
        base = os.path.dirname(os.path.abspath(path))
        payoff_path = payoff if os.path.isabs(payoff) else os.path.join(base, payoff)
        if not os.path.exists(payoff_path):
            raise ValidationError(f"config field 'payoff': file {payoff!r} does not exist")
        cfg["_payoff_path"] = payoff_path
    return cfg


def _grid(cfg):
    return TimeGrid.uniform(float(_get(cfg, "grid.horizon")), int(_get(cfg, "grid.steps")))


def _schedule(cfg, x0, eps):
    sched = cfg.get("schedule", {"kind": "integrability"})
    kind = sched.get("kind")
    if kind == "constant":
        if "alpha" not in sched:
            raise ValidationError("config field 'schedule.alpha' is required for a constant schedule")
        return ConstantSchedule(float(sched["alpha"]))
    if kind == "integrability":
        return integrability_schedule(lambda x: x, x0, eps,
                                      base_alpha=float(sched.get("base_alpha", 0.5)))
    raise ValidationError(f"config field 'schedule.kind': unknown kind {kind!r}")


def _need(out_dir, name):
    path = os.path.join(out_dir, name)
    if not os.path.exists(path):
        raise ValidationError(f"missing upstream artifact {path!r}; run the producing stage first")
    return path


def stage_simulate(cfg, out_dir, workers):
    model = model_from_config(_get(cfg, "model"))
    grid = _grid(cfg)
    n_paths = int(_get(cfg, "n_paths"))
    paths = model.sample(grid, n_paths, int(cfg["seed"]))
    out_cfg = cfg.get("output", {})
    if out_cfg.get("paths_csv", True):
        if out_cfg.get("long_format", True):
            write_paths_csv(paths, os.path.join(out_dir, "paths.csv"), long_format=True)
        else:
            write_paths_csv(paths, os.path.join(out_dir, "paths"), long_format=False)
    return paths


def stage_ladder(cfg, out_dir, workers):
    paths = read_paths_csv(_need(out_dir, "paths.csv"))
    eps = cfg["_eps_seq"][0]
    mode = cfg.get("mode", "multiplicative")
    skels = parallel_map(lambda p: extract_ladder(p, eps, mode=mode), paths, workers)
    write_skeletons_csv(skels, os.path.join(out_dir, "skeletons.csv"),
                        os.path.join(out_dir, "skeletons.json"))
    return skels


def stage_cps(cfg, out_dir, workers):
    paths = read_paths_csv(_need(out_dir, "paths.csv"))
    skels = read_skeletons_csv(_need(out_dir, "skeletons.csv"),
                               _need(out_dir, "skeletons.json"))
    grid_times = paths[0].grid.times
    for sk in skels:
        idx = np.searchsorted(grid_times, sk.times)
        idx = np.clip(idx, 0, len(grid_times) - 1)
        if not np.allclose(grid_times[idx], sk.times, rtol=0, atol=0):
            raise ValidationError("skeleton stop times do not sit on the paths grid")
        sk.grid_indices = idx
    eps = skels[0].eps
    if skels[0].d == 1:
        schedule = _schedule(cfg, float(skels[0].anchor0[0]), eps)
        cps_list, cert = build_cps_1d(skels, schedule)
    else:
        cps_list, cert = build_cps_multi(
            skels, diagnostics_path=os.path.join(out_dir, "esscher_diagnostics.jsonl"))
    report = verify_sandwich(cps_list, paths, eps)
    write_cps_csv(cps_list, paths, os.path.join(out_dir, "cps.csv"))
    write_cps_summary(report, cert, os.path.join(out_dir, "cps_summary.json"))
    if not report.passed:
        raise InvariantViolation(
            f"sandwich audit failed: {report.violations[:3]} (see cps_summary.json)")
    return cps_list, cert, report


def stage_facelift(cfg, out_dir, workers):
    if "_payoff_path" not in cfg:
        raise ValidationError("config field 'payoff' is required for the facelift stage")
    curve = PayoffCurve.from_file(cfg["_payoff_path"])
    fl = cfg.get("facelift", {})
    if "delta" not in fl:
        raise ValidationError("config field 'facelift.delta' is required")
    s0 = np.atleast_1d(np.asarray(_get(cfg, "model.s0"), dtype=float))
    if len(s0) != 1:
        raise ValidationError("the facelift stage prices claims on one asset")
    report = squeeze_report(curve, float(s0[0]), cfg["_eps_seq"],
                            delta=float(fl["delta"]),
                            n_paths=int(fl.get("n_paths", 10_000)),
                            seed=int(cfg["seed"]))
    write_squeeze_csv(report, os.path.join(out_dir, "squeeze.csv"))
    if not report.passed:
        raise InvariantViolation("squeeze bracket failed: " + "; ".join(report.failures))
    return report


def stage_audit(cfg, out_dir, workers):
    model = model_from_config(_get(cfg, "model"))
    grid = _grid(cfg)
    eps = cfg["_eps_seq"][0]
    audit_cfg = cfg.get("audit", {})
    seed = int(cfg["seed"])
    payload = {}
    if model.d == 1:
        paths = read_paths_csv(_need(out_dir, "paths.csv"))
        table = mark_positivity(paths, eps, n_stops=int(audit_cfg.get("n_stops", 3)),
                                min_count=int(audit_cfg.get("min_count", 200)))
        table.to_csv(os.path.join(out_dir, "marks.csv"))
        payload["mark_positivity"] = {
            "passed": table.passed,
            "flagged": [{"stop": s, "level": l, "missing": m} for s, l, m in table.flagged],
        }
        if hasattr(model, "extend"):
            cut = float(audit_cfg.get("cut_fraction", 0.5))
            n_obs = max(2, int(round(cut * grid.n_steps)) + 1)
            prefix_paths = model.sample(grid, 1, seed)
            prefix = SamplePath(TimeGrid(grid.times[:n_obs]),
                                prefix_paths[0].values[:n_obs], path_id=0)
            s_v = float(prefix.values[-1, 0])
            s0 = float(np.atleast_1d(_get(cfg, "model.s0"))[0])
            eta = float(audit_cfg.get("tube_eta_frac", 0.1)) * s0
            query = TubeQuery(target=lambda t: np.full_like(t, s_v), eta=eta,
                              n_samples=int(audit_cfg.get("tube_samples", 2000)))
            est = tube_probability(model, prefix, grid, query, seed=seed + 1)
            payload["tube"] = {"estimate": est.estimate, "stderr": est.stderr,
                               "hits": est.hits,
                               "lower_confidence_99": est.lower_confidence(0.99)}
    else:
        skels = read_skeletons_csv(_need(out_dir, "skeletons.csv"),
                                   _need(out_dir, "skeletons.json"))
        report = interior_hull_audit(skels)
        report.to_json(os.path.join(out_dir, "hull_audit.json"))
        payload["interior_hull"] = {"passed": report.passed}
    with open(os.path.join(out_dir, "audit.json"), "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return payload


def write_manifest(cfg, out_dir):
    public = {k: v for k, v in cfg.items() if not k.startswith("_")}
    blob = json.dumps(public, sort_keys=True).encode()
    manifest = {
        "config_sha256": hashlib.sha256(blob).hexdigest(),
        "seed": int(cfg["seed"]),
        "cpslab": __version__,
        "python": ".".join(map(str, sys.version_info[:3])),
        "numpy": np.__version__,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")


def run_all(cfg, out_dir, workers):
    stage_simulate(cfg, out_dir, workers)
    stage_ladder(cfg, out_dir, workers)
    stage_cps(cfg, out_dir, workers)
    if "_payoff_path" in cfg:
        stage_facelift(cfg, out_dir, workers)
    stage_audit(cfg, out_dir, workers)
    write_manifest(cfg, out_dir)


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="cpslab",
        description="Consistent price systems and face-lifting experiments")
    parser.add_argument("command", choices=("run",) + STAGES)
    parser.add_argument("--config", required=True, help="JSON experiment config")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--workers", type=int, default=1, help="worker count (results unchanged)")
    parser.add_argument("--out", default="cpslab_out", help="artifact directory")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config, seed_override=args.seed)
        os.makedirs(args.out, exist_ok=True)
        if args.command == "run":
            run_all(cfg, args.out, args.workers)
        else:
            stage = {"simulate": stage_simulate, "ladder": stage_ladder,
                     "cps": stage_cps, "facelift": stage_facelift,
                     "audit": stage_audit}[args.command]
            stage(cfg, args.out, args.workers)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (InvariantViolation, CpsLabError) as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
