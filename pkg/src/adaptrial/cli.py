"""Command line interface.

Subcommands:

* ``simulate``: Monte Carlo operating characteristics for a config.
* ``interim``: one interim analysis of a patient-level CSV dataset.
* ``ssr``: sample size reassessment for explicitly given interim results.
* ``power-tables``: a grid of simulate runs over the scenario's effect knob.

Exit codes: 0 success, 2 configuration or dataset schema problem,
3 estimation failure, 4 too many failed replications.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from copy import deepcopy
from dataclasses import fields

from . import __version__
from .adaptive import observed_theta, reassess_sample_size
from .config import load_raw, parse_config, resolve
from .errors import (
    AdaptrialError,
    BadConfig,
    EstimationError,
    FailureBudgetExceeded,
    InconsistentIndicators,
    InvalidFraction,
    MissingColumn,
    NonPositiveTheta,
    TriggerUnreachable,
)
from .estimator import InterimSnapshot, PatientRecord, estimate_effect, reduce_for_method
from .monitoring import (
    assess_futility,
    blinded_information_fraction,
    conditional_power,
)
from .simulate import RepResult, run_monte_carlo

_MISSING = {"", "na", "nan", "none", "null", "."}


def _atomic_write(path: str, text: str) -> None:
    """Write via a temp file and rename, so readers never see partial output."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_dataset(path: str) -> list[PatientRecord]:
    if not os.path.exists(path):
        raise BadConfig(f"dataset not found: {path}")
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise BadConfig(f"dataset {path} has no header row")
        names = [n.strip() for n in reader.fieldnames]
        if "arm" not in names or "y" not in names:
            raise BadConfig(f"dataset {path} must have 'arm' and 'y' columns")
        z_names = [n for n in names if n not in ("id", "arm", "x", "y", "arrival")]
        records = []
        for i, row in enumerate(reader):
            rid = (row.get("id") or f"row{i + 1}").strip()

            def cell(name, required):
                v = (row.get(name) or "").strip()
                if v.lower() in _MISSING:
                    if required:
                        raise InconsistentIndicators(
                            f"record '{rid}': column '{name}' is missing"
                        )
                    return None
                try:
                    return float(v)
                except ValueError:
                    raise BadConfig(
                        f"record '{rid}': column '{name}' is not numeric: '{v}'"
                    ) from None

            arm_v = cell("arm", True)
            if arm_v not in (0.0, 1.0):
                raise BadConfig(f"record '{rid}': arm must be 0 or 1, got {arm_v}")
            records.append(PatientRecord(
                id=rid,
                arm=int(arm_v),
                z={zn: cell(zn, True) for zn in z_names},
                x=cell("x", False) if "x" in names else None,
                y=cell("y", False),
                arrival_time=cell("arrival", True) if "arrival" in names else None,
            ))
    if not records:
        raise BadConfig(f"dataset {path} has no data rows")
    return records


def _json_ready(value):
    if isinstance(value, float):
        return None if math.isnan(value) else value
    if isinstance(value, dict):
        return {k: _json_ready(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_ready(v) for v in value]
    return value


def cmd_interim(args) -> int:
    scenario, _run, resolved = parse_config(args.config, for_simulation=False)
    records = _read_dataset(args.dataset)
    snapshot = InterimSnapshot.from_records(
        records, lag_x=scenario.lag_x_days, lag_y=scenario.lag_y_days,
    )
    method = args.method or scenario.method
    snap, models = reduce_for_method(snapshot, method, scenario.working)
    effect = estimate_effect(snap, models)
    n_planned = scenario.n_total
    state = assess_futility(effect, snap, n_planned, scenario.boundary)

    try:
        t_blinded = blinded_information_fraction(
            snap, scenario.working.h1, scenario.working.f1, n_planned,
        )
    except EstimationError:
        t_blinded = None

    if state.z_t > 0.0:
        t_cp = min(state.t, 1.0 - 1e-9)
        cp_observed = conditional_power(
            state.z_t, t_cp, observed_theta(state.z_t, t_cp), scenario.alpha,
        )
    else:
        cp_observed = None

    ssr_block = None
    if scenario.ssr_enabled and state.decision == "continue":
        theta = None
        if scenario.theta_mode == "observed":
            theta = observed_theta(state.z_t, state.t)
        res = reassess_sample_size(
            state.z_t, scenario.w, n_planned, effect.n_recruited,
            scenario.combination_plan, cap_multiplier=scenario.cap_multiplier,
            allow_decrease=scenario.allow_decrease, theta=theta,
        )
        ssr_block = {
            "w": scenario.w,
            "theta_mode": scenario.theta_mode,
            "n_new": res.n_new,
            "n_second_stage": res.n_second_stage,
            "capped": res.capped,
            "rationale": res.rationale,
        }

    report = {
        "method": method,
        "n_planned": n_planned,
        "n_recruited": effect.n_recruited,
        "mu1": effect.mu1,
        "mu0": effect.mu0,
        "diff": effect.diff,
        "s2": effect.s2,
        "pi_hat": effect.pi_hat,
        "pi_x_hat": effect.pi_x_hat,
        "pi_y_hat": effect.pi_y_hat,
        "t_unblinded": state.t,
        "t_blinded": t_blinded,
        "z_t": state.z_t,
        "b_t": state.b_t,
        "theta_design": state.theta,
        "cp_design": state.cp,
        "cp_observed": cp_observed,
        "futility_threshold": state.threshold,
        "decision": state.decision,
        "ssr": ssr_block,
        "config": resolved,
    }
    text = json.dumps(_json_ready(report), indent=2, sort_keys=False) + "\n"
    if args.out:
        _atomic_write(args.out, text)
    sys.stdout.write(text)
    return 0


def _effective_threads(args_threads, run_threads: int) -> int:
    if args_threads is not None:
        return max(1, args_threads)
    env = os.environ.get("ADAPTRIAL_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise BadConfig(f"ADAPTRIAL_THREADS must be an integer, got '{env}'") from None
    return max(1, run_threads)


def _summary_text(oc, scenario) -> str:
    rows = [
        ("replications", f"{oc.reps}", ""),
        ("failed replications", f"{oc.failures}", ""),
        ("stop for futility", f"{oc.stop_futility_rate:8.4f}", f"+/- {oc.stop_futility_se:.4f}"),
        ("reject, no interim", f"{oc.reject_rate_no_interim:8.4f}", ""),
        ("reject, futility gate", f"{oc.reject_rate_no_ssr:8.4f}", ""),
        ("reject, reassessed", f"{oc.reject_rate_ssr:8.4f}", f"+/- {oc.reject_se:.4f}"),
        ("power loss from gate", f"{oc.power_loss:8.4f}", ""),
        ("mean information fraction", f"{oc.mean_t:8.4f}", ""),
        ("mean days to interim", f"{oc.mean_days_to_interim:8.1f}", ""),
        ("mean pct recruited", f"{oc.mean_pct_recruited:8.1f}", ""),
        ("mean final sample size", f"{oc.mean_sample_size:8.1f}", f"sd {oc.sd_sample_size:.1f}"),
        ("sample size quantiles", " ".join(f"{q:.0f}" for q in oc.sample_size_quantiles), ""),
        ("switch up | down rate", f"{oc.switch_up_rate:.4f} | {oc.switch_down_rate:.4f}", ""),
    ]
    width = max(len(r[0]) for r in rows)
    lines = [f"method={scenario.method} n_total={scenario.n_total} "
             f"trigger={scenario.trigger_kind}"]
    for name, value, extra in rows:
        lines.append(f"  {name:<{width}}  {value}  {extra}".rstrip())
    return "\n".join(lines) + "\n"


def _reps_csv(results: list[RepResult]) -> str:
    buf = io.StringIO()
    names = [f.name for f in fields(RepResult)]
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(names)
    for r in results:
        writer.writerow([getattr(r, n) for n in names])
    return buf.getvalue()


def _plotdata_csv(oc, scenario) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([
        "method", "trigger_kind", "trigger_value", "mean_t", "stop_futility_rate",
        "mean_pct_recruited", "mean_days_to_interim", "reject_rate_no_ssr",
        "reject_rate_ssr",
    ])
    trig_value = (scenario.trigger_day if scenario.trigger_kind == "fixed_day"
                  else scenario.trigger_target)
    writer.writerow([
        scenario.method, scenario.trigger_kind, trig_value, f"{oc.mean_t:.6f}",
        f"{oc.stop_futility_rate:.6f}", f"{oc.mean_pct_recruited:.4f}",
        f"{oc.mean_days_to_interim:.2f}", f"{oc.reject_rate_no_ssr:.6f}",
        f"{oc.reject_rate_ssr:.6f}",
    ])
    return buf.getvalue()


def cmd_simulate(args) -> int:
    scenario, run, resolved = parse_config(args.config)
    if args.method:
        scenario.method = args.method
        resolved["interim"]["method"] = args.method
    seed = args.seed if args.seed is not None else run.seed
    reps = args.reps if args.reps is not None else run.reps
    threads = _effective_threads(args.threads, run.threads)
    # the echo omits threads: results are thread-invariant by construction
    resolved["run"] = {"seed": seed, "reps": reps}

    try:
        oc, results = run_monte_carlo(scenario, reps, seed, threads)
    except FailureBudgetExceeded as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 4

    sys.stdout.write(_summary_text(oc, scenario))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        summary = {"operating_characteristics": oc.to_dict(), "config": resolved}
        _atomic_write(os.path.join(args.out, "summary.json"),
                      json.dumps(_json_ready(summary), indent=2) + "\n")
        _atomic_write(os.path.join(args.out, "reps.csv"), _reps_csv(results))
        _atomic_write(os.path.join(args.out, "plotdata.csv"), _plotdata_csv(oc, scenario))
    return 0


def cmd_ssr(args) -> int:
    scenario, _run, _resolved = parse_config(args.config, for_simulation=False)
    t = args.t if args.t is not None else scenario.w
    mode = args.theta_mode or scenario.theta_mode
    theta = observed_theta(args.z_t, t) if mode == "observed" else None
    res = reassess_sample_size(
        args.z_t, t, scenario.n_total, args.n_recruited,
        scenario.combination_plan, cap_multiplier=scenario.cap_multiplier,
        allow_decrease=scenario.allow_decrease, theta=theta,
    )
    report = {
        "z_t": args.z_t,
        "t": t,
        "theta_mode": mode,
        "n_planned": scenario.n_total,
        "n_recruited": args.n_recruited,
        "cap_multiplier": scenario.cap_multiplier,
        "allow_decrease": scenario.allow_decrease,
        "n_new": res.n_new,
        "n_second_stage": res.n_second_stage,
        "capped": res.capped,
        "rationale": res.rationale,
    }
    text = json.dumps(_json_ready(report), indent=2) + "\n"
    if args.out:
        _atomic_write(args.out, text)
    sys.stdout.write(text)
    return 0


def cmd_power_tables(args) -> int:
    raw = deepcopy(load_raw(args.config))
    if "scenario" not in raw or "preset" not in raw.get("scenario", {}):
        raise BadConfig("power-tables needs a [scenario] preset config")
    pt = raw.get("power_tables", {})
    c_values = pt.get("c_values", [raw["scenario"].get("c", 0.0)])
    methods = pt.get("methods", ["proposal", "standard"])
    reps = args.reps if args.reps is not None else int(pt.get("reps", raw.get("run", {}).get("reps", 100)))
    threads = _effective_threads(args.threads, int(raw.get("run", {}).get("threads", 1)))
    seed = args.seed if args.seed is not None else int(raw.get("run", {}).get("seed", 1))

    rows = []
    for c in c_values:
        for method in methods:
            cell = deepcopy(raw)
            cell.pop("power_tables", None)
            cell["scenario"]["c"] = float(c)
            cell.setdefault("interim", {})["method"] = method
            scenario, _run, _res = resolve(cell)
            oc, _results = run_monte_carlo(scenario, reps, seed, threads)
            rows.append({
                "c": float(c),
                "method": method,
                "reps": oc.reps,
                "stop_futility_rate": oc.stop_futility_rate,
                "reject_rate_no_ssr": oc.reject_rate_no_ssr,
                "reject_rate_ssr": oc.reject_rate_ssr,
                "mean_t": oc.mean_t,
                "mean_pct_recruited": oc.mean_pct_recruited,
                "mean_days_to_interim": oc.mean_days_to_interim,
                "mean_sample_size": oc.mean_sample_size,
            })

    header = (f"{'c':>5} {'method':<10} {'stop':>7} {'rej(gate)':>9} "
              f"{'rej(ssr)':>9} {'mean t':>7} {'%rec':>6} {'days':>8}")
    lines = [header]
    for r in rows:
        lines.append(
            f"{r['c']:>5.2f} {r['method']:<10} {r['stop_futility_rate']:>7.4f} "
            f"{r['reject_rate_no_ssr']:>9.4f} {r['reject_rate_ssr']:>9.4f} "
            f"{r['mean_t']:>7.4f} {r['mean_pct_recruited']:>6.1f} "
            f"{r['mean_days_to_interim']:>8.1f}"
        )
    sys.stdout.write("\n".join(lines) + "\n")
    if args.out:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
        _atomic_write(args.out, buf.getvalue())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adaptrial",
        description="Covariate and short-term endpoint adjusted interim monitoring",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Monte Carlo operating characteristics")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="directory for summary.json, reps.csv, plotdata.csv")
    p.add_argument("--reps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--method", choices=["proposal", "standard", "x_only"])
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("interim", help="interim analysis of a CSV dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="file for the JSON report")
    p.add_argument("--method", choices=["proposal", "standard", "x_only"])
    p.set_defaults(func=cmd_interim)

    p = sub.add_parser("ssr", help="sample size reassessment from interim statistics")
    p.add_argument("--config", required=True)
    p.add_argument("--z-t", dest="z_t", type=float, required=True)
    p.add_argument("--t", type=float, help="combination weight (default: config value)")
    p.add_argument("--n-recruited", dest="n_recruited", type=int, required=True)
    p.add_argument("--theta-mode", dest="theta_mode", choices=["design", "observed"])
    p.add_argument("--out", help="file for the JSON report")
    p.set_defaults(func=cmd_ssr)

    p = sub.add_parser("power-tables", help="grid of simulate runs over the effect knob")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="file for the CSV table")
    p.add_argument("--reps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_power_tables)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (BadConfig, InconsistentIndicators, MissingColumn) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    except (EstimationError, InvalidFraction, NonPositiveTheta, TriggerUnreachable) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 3
    except FailureBudgetExceeded as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 4
    except AdaptrialError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 3


if __name__ == "__main__":
    sys.exit(main())
