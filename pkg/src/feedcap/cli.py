"""``feedcap`` command line: validate, filter, dinfo, capacity, mixing, simulate, verify.

Exit codes: 0 success, 1 validation or flag failure, 2 numerical
non-convergence, 3 enumeration cap exceeded. Errors are written to stderr as
a JSON object. Every JSON report carries a ``manifest`` with the resolved
parameters, the spec's content hash, seed, tool version and wall time.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import CapExceeded, FeedcapError, NotConverged, SpecError
from .kernels import MarkovChannelSpec, load_spec

SCHEMA = 1
SIG_DIGITS = 12


def _round(x):
    if isinstance(x, dict):
        return {k: _round(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_round(v) for v in x]
    if isinstance(x, np.ndarray):
        return _round(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if not math.isfinite(x):
            return None
        return float(f"{x:.{SIG_DIGITS}g}")
    return x


def dumps(obj):
    return json.dumps(_round(obj), indent=2, sort_keys=True) + "\n"


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(f"{v:.{SIG_DIGITS}g}")) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


class Run:
    def __init__(self, args):
        self.args = args
        self.t0 = time.perf_counter()
        self.spec_hash = None

    def manifest(self):
        params = {k: v for k, v in vars(self.args).items() if k not in ("func",) and not callable(v)}
        return {"subcommand": self.args.command, "params": params, "spec_sha256": self.spec_hash,
                "seed": getattr(self.args, "seed", None), "version": __version__,
                "wall_time_s": time.perf_counter() - self.t0}

    def emit(self, report):
        report = dict(report)
        report["schema_version"] = SCHEMA
        report["manifest"] = self.manifest()
        text = dumps(report)
        out = getattr(self.args, "output", None)
        if out:
            Path(out).write_text(text, encoding="utf-8")
        else:
            sys.stdout.write(text)


def _load(run, path):
    spec = load_spec(path)
    run.spec_hash = spec.content_hash()
    return spec


def _load_input(path, spec, horizon=None):
    from .codefunctions import InputDistribution, iid_input

    data = json.loads(Path(path).read_text(encoding="utf-8"))
    nA, nB = spec.A.size, spec.B.size
    if "iid" in data:
        return iid_input(data["iid"], int(horizon or data["horizon"]), nB)
    law = InputDistribution.from_dict(data, nA, nB)
    if horizon is None or horizon == law.horizon:
        return law
    if horizon > law.horizon:
        raise SpecError(f"input law has horizon {law.horizon}; cannot extend to {horizon}")
    # the first T kernels of a causal law form a law of horizon T
    return InputDistribution(law.nA, law.nB, horizon, law.steps[:horizon], law.pattern)


# -- subcommands ---------------------------------------------------------------

def cmd_validate(run):
    from .filtering import check_structure

    spec = _load(run, run.args.spec)
    report = {"ok": True, "kind": "markov" if isinstance(spec, MarkovChannelSpec) else "general",
              "name": spec.name}
    if isinstance(spec, MarkovChannelSpec):
        report["shape"] = {"S": spec.S.size, "A": spec.A.size, "B": spec.B.size}
        checks = {}
        for flag in sorted(spec.flags):
            res = check_structure(spec, flag)
            checks[flag] = {"ok": res.ok, "sampled": res.sampled, "checked": res.n_checked, "note": res.note}
        report["flags"] = checks
    run.emit(report)
    return 0


def cmd_filter(run):
    from .filtering import run_filter

    spec = _load(run, run.args.spec)
    text = Path(run.args.history).read_text(encoding="utf-8")
    pairs = [(int(r[0]), int(r[1])) for r in csv.reader(io.StringIO(text)) if r and r[0].strip().lstrip("-").isdigit()]
    trace = run_filter(spec, pairs)
    nS, nB = spec.S.size, spec.B.size
    if run.args.format == "json":
        run.emit({"history": pairs, "beliefs": trace.beliefs, "predictives": trace.predictives})
        return 0
    header = ["t", "a", "b"] + [f"r_b{k}" for k in range(nB)] + [f"pi_s{k}" for k in range(nS)] + \
             [f"pi_next_s{k}" for k in range(nS)]
    rows = [[t + 1, a, b, *trace.predictives[t], *trace.beliefs[t], *trace.beliefs[t + 1]]
            for t, (a, b) in enumerate(pairs)]
    sys.stdout.write(_csv_text(header, rows))
    return 0


def cmd_dinfo(run):
    from .directed_info import (
        directed_information,
        joint_measure,
        mutual_information_ab,
        reverse_directed_information,
    )

    spec = _load(run, run.args.spec)
    inp = _load_input(run.args.input, spec, run.args.T)
    j = joint_measure(spec, inp)
    di, per = directed_information(j, return_parts=True)
    rev = reverse_directed_information(j)
    report = {"value_bits": di, "per_step": per, "per_use_bits": di / inp.horizon,
              "reverse_bits": rev, "mutual_bits": mutual_information_ab(j),
              "feedback_free": inp.is_feedback_free(), "horizon": inp.horizon}
    if run.args.format == "csv":
        sys.stdout.write(_csv_text(["t", "increment_bits"], [[t + 1, v] for t, v in enumerate(per)]))
        return 0
    run.emit(report)
    return 0


def _capacity_finite(run, spec):
    from .directed_info import directed_information, finite_horizon_capacity, joint_measure

    a = run.args
    if a.T is None:
        raise SpecError("--mode finite needs -T")
    res = finite_horizon_capacity(spec, a.T, a.feedback, starts=a.starts, seed=a.seed, threads=a.threads)
    cert_path = a.certificate or None
    if cert_path:
        Path(cert_path).write_text(json.dumps(res.input.to_dict()) + "\n", encoding="utf-8")
    _, per = directed_information(joint_measure(spec, res.input), return_parts=True)
    run.emit({"value_bits": res.value, "per_step": per, "pattern": res.pattern, "horizon": res.horizon,
              "certificate_path": cert_path, "evaluations": res.evaluations,
              "starts": [{"start": s.start, "value_bits": s.value, "sweeps": s.sweeps} for s in res.starts],
              "spread": res.spread})
    return 0


def _capacity_acoe(run, spec):
    from .mdp import acoe_capacity

    a = run.args
    res = acoe_capacity(spec, case=a.case, grid=a.grid, action_grid=a.action_grid, eps=a.eps,
                        max_iters=a.max_iters, refine=not a.no_refine, meta_grid=a.meta_grid,
                        experimental=a.experimental)
    policy_path = a.policy_out or None
    if policy_path:
        res.rule.save(policy_path)
    st = res.stationary
    run.emit({
        "V_star_bits": res.solution.V_star, "case": res.instance.case,
        "grid": {"m": a.grid, "k": a.action_grid, "meta": res.instance.space.meta_grid},
        "iterations": res.solution.iterations, "span": res.solution.span,
        "acoe_residual": res.solution.residual, "alpha_mixing": res.mixing.alpha,
        "mixing_condition_holds": res.mixing.holds, "mixing_note": res.mixing.note,
        "stationary": None if st is None else {"distribution": st.distribution, "iterations": st.iterations,
                                               "average_cost_bits": st.average_cost},
        "discretization": res.instance.diagnostics(), "policy_path": policy_path,
    })
    return 0


def cmd_capacity(run):
    spec = _load(run, run.args.spec)
    if run.args.mode == "finite" or (run.args.mode is None and run.args.T is not None):
        return _capacity_finite(run, spec)
    if not isinstance(spec, MarkovChannelSpec):
        raise SpecError("--mode acoe needs a Markov channel spec")
    return _capacity_acoe(run, spec)


def cmd_mixing(run):
    from .mdp import build_instance, check_mixing

    spec = _load(run, run.args.spec)
    a = run.args
    inst = build_instance(spec, a.case, a.grid, a.action_grid, a.meta_grid, a.experimental)
    rep = check_mixing(inst)
    run.emit({"alpha": rep.alpha, "condition_holds": rep.holds, "distinct_rows": rep.n_rows, "note": rep.note,
              "case": inst.case})
    return 0


def cmd_simulate(run):
    from .coding import density_chains, sample_code, simulate
    from .mdp import PolicyRule

    spec = _load(run, run.args.spec)
    a = run.args
    if bool(a.policy) == bool(a.input):
        raise SpecError("give exactly one of --policy or --input")
    if a.policy:
        rule = PolicyRule.load(a.policy)
        if a.T is None:
            raise SpecError("--policy needs -T")
        code = sample_code(rule, a.M, a.T, a.seed, channel=spec)
    else:
        rule = _load_input(a.input, spec, a.T)
        code = sample_code(rule, a.M, rule.horizon, a.seed)
    report = simulate(spec, code, a.trials, a.seed)
    out = report.to_dict()
    out.update({"M": a.M, "T": code.T})
    if a.density:
        if not a.policy:
            raise SpecError("--density needs --policy")
        horizons = tuple(int(h) for h in a.horizons.split(","))
        dens = density_chains(spec, rule, a.chains, max(horizons), a.seed, horizons)
        out["density"] = dens.to_dict()
        if a.density_csv:
            header = ["chain"] + [f"T{h}" for h in dens.horizons]
            rows = [[c, *dens.values[c]] for c in range(len(dens.values))]
            Path(a.density_csv).write_text(_csv_text(header, rows), encoding="utf-8")
    run.emit(out)
    return 0


def cmd_verify(run):
    from .verify import identity_suite

    spec = _load(run, run.args.spec)
    inp = _load_input(run.args.input, spec, run.args.horizon)
    checks = identity_suite(spec, inp, seed=run.args.seed)
    ok = all(c.ok for c in checks)
    run.emit({"ok": ok, "checks": {c.name: c.to_dict() for c in checks}})
    return 0 if ok else 1


# -- parser -----------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="feedcap", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--threads", type=int, default=1, help="cap on worker threads")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("spec")
        sp.add_argument("-o", "--output", help="write the JSON report here instead of stdout")
        sp.add_argument("--format", choices=("json", "csv"), default="json")
        sp.set_defaults(func=func)
        return sp

    add("validate", cmd_validate, "parse a spec and check its structure flags")
    sp = add("filter", cmd_filter, "run the state filter along an (a, b) history")
    sp.add_argument("--history", required=True, help="CSV of a,b pairs")
    sp.set_defaults(format="csv")
    sp = add("dinfo", cmd_dinfo, "directed information of an input law")
    sp.add_argument("--input", required=True)
    sp.add_argument("-T", type=int, default=None)

    def mdp_args(sp):
        sp.add_argument("--case", default="auto",
                        choices=("auto", "state_io", "state_in", "state_out", "csi", "belief_out", "general"))
        sp.add_argument("--grid", type=int, default=16)
        sp.add_argument("--action-grid", type=int, default=32)
        sp.add_argument("--meta-grid", type=int, default=4)
        sp.add_argument("--experimental", action="store_true")

    sp = add("capacity", cmd_capacity, "finite-horizon or average-cost capacity")
    sp.add_argument("--mode", choices=("finite", "acoe"), help="default: finite when -T is given, else acoe")
    sp.add_argument("-T", type=int, default=None)
    sp.add_argument("--feedback", default="full", help="full, none or delay:k")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--starts", type=int, default=16)
    sp.add_argument("--certificate", default=None, help="write the maximizing input law here")
    mdp_args(sp)
    sp.add_argument("--eps", type=float, default=1e-9)
    sp.add_argument("--max-iters", type=int, default=10**5)
    sp.add_argument("--no-refine", action="store_true")
    sp.add_argument("--policy-out", default=None, help="write the exported policy rule here")
    sp = add("mixing", cmd_mixing, "mixing coefficient of the discretized MDP")
    mdp_args(sp)
    sp = add("simulate", cmd_simulate, "Monte-Carlo coding with ML decoding")
    sp.add_argument("--policy")
    sp.add_argument("--input")
    sp.add_argument("-M", type=int, default=2)
    sp.add_argument("-T", type=int, default=None)
    sp.add_argument("--trials", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--density", action="store_true")
    sp.add_argument("--chains", type=int, default=200)
    sp.add_argument("--horizons", default="250,500,1000,2000")
    sp.add_argument("--density-csv", default=None)
    sp = add("verify", cmd_verify, "run the identity suite on a spec and input law")
    sp.add_argument("--input", required=True)
    sp.add_argument("--horizon", type=int, default=None)
    sp.add_argument("--seed", type=int, default=0)
    return p


EXIT_CODES = ((CapExceeded, 3), (NotConverged, 2), (FeedcapError, 1))


def main(argv=None):
    args = build_parser().parse_args(argv)
    run = Run(args)
    try:
        return args.func(run)
    except FeedcapError as exc:
        code = next(c for cls, c in EXIT_CODES if isinstance(exc, cls))
        err = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
        if isinstance(exc, CapExceeded):
            err.update({"what": exc.what, "size": exc.size, "cap": exc.cap})
        if hasattr(exc, "flag"):
            err["flag"] = exc.flag
            err["counterexample"] = getattr(exc, "counterexample", None)
        sys.stderr.write(dumps(err))
        return code
    except (OSError, ValueError) as exc:
        sys.stderr.write(dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": 1}))
        return 1


if __name__ == "__main__":
    sys.exit(main())
