"""Command-line front end: ``run``, ``sweep``, ``audit`` and ``duality``.

Exit codes: 0 success, 1 a failed audit, 2 invalid input, 3 the reaction
integrator hit its step-size floor.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from contextlib import nullcontext
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from . import diagnostics as dg
from . import io
from .duality import closeness_check, estimate_Kmq
from .grid import Grid
from .kernels import (FragmentationRates, KernelSet, PowerLawCoagulation,
                      PowerLawDaughterDistribution, audit_kernel_constants)
from .oracle import HomogeneousState, constant_kernel_exact, ode_reference
from .reaction import TruncatedState, TruncationMode
from .report import AuditReport
from .scenario import ScenarioConfig, ScenarioError
from .solver import StepperConfig, StiffnessError, run, simulate

log = logging.getLogger("coagfrag")

EXIT_OK, EXIT_AUDIT, EXIT_INVALID, EXIT_STIFF = 0, 1, 2, 3


def _threads(k: int | None):
    if k is None:
        return nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=k)


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_levels(text: str | None, n: int) -> list[int]:
    if not text:
        return [n, 2 * n, 4 * n]
    try:
        levels = sorted({int(v) for v in text.replace(" ", "").split(",") if v})
    except ValueError:
        raise ScenarioError("--levels", f"expected comma-separated integers, got {text!r}") from None
    if len(levels) < 3 or levels[0] < 2:
        raise ScenarioError("--levels", "need at least three truncation sizes >= 2")
    return levels


# -- run ----------------------------------------------------------------------

def cmd_run(args) -> int:
    cfg = ScenarioConfig.load(args.scenario)
    if not cfg.to_dict()["outputs"]["snapshot_times"]:
        # without explicit snapshots the final profile is written
        cfg = cfg.with_overrides(outputs={"snapshot_times": [cfg.T]})
    out = _out_dir(args.out)
    res = run(cfg)
    files = [io.write_moments_csv(out / "moments.csv", res).name]
    for t, c in sorted(res.snapshots.items()):
        files.append(io.write_profile_csv(out / io.profile_name(t), res.grid, c).name)
    io.write_json(out / "run_meta.json", io.run_meta(
        "run", cfg.to_dict(), stats=res.stats.to_dict(), initial_mass=res.initial_mass,
        outputs=files))
    print(f"run: {len(res.times)} samples, final mass {res.total_mass[-1]:.12g}, "
          f"{res.stats.accepted} reaction steps -> {out}")
    return EXIT_OK


# -- sweep ----------------------------------------------------------------------

def sweep_runs(cfg: ScenarioConfig, levels: Sequence[int], mode: TruncationMode,
               keep_states: bool):
    return [run(cfg.with_overrides(truncation={"n": n, "mode": mode.value}), keep_states=keep_states)
            for n in levels]


def cmd_sweep(args) -> int:
    cfg = ScenarioConfig.load(args.scenario)
    levels = _parse_levels(args.levels, cfg.n)
    out = _out_dir(args.out)
    params = cfg.audit_params
    delta = float(params.get("delta", 0.05))

    full = sweep_runs(cfg, levels, TruncationMode.FULL_LOSS, keep_states=False)
    cons = sweep_runs(cfg, levels, TruncationMode.CONSERVATIVE, keep_states=True)
    files = []
    for r in full + cons:
        name = f"moments_{r.mode.value}_n{r.n}.csv"
        io.write_moments_csv(out / name, r)
        files.append(name)

    gel = dg.gel_report(full, delta)
    gel_d = gel.to_dict()
    gel_d["tail_fraction_conservative"] = {str(r.n): float(r.series["tail_fraction"][-1]) for r in cons}
    io.write_json(out / "gel_report.json", gel_d)
    files.append("gel_report.json")

    ks = cfg.kernels()
    ps = params.get("p", [2.0])
    ps = ps if isinstance(ps, list) else [ps]
    k = float(params.get("k", 2.0))
    stab = {
        "mass_lp": [dg_stab.to_dict() for dg_stab in (_stability(cons, p) for p in ps)],
        "refinement": [dg.refinement_convergence(a, b, k).to_dict()
                       for a, b in zip(cons[:-1], cons[1:]) if b.n == 2 * a.n],
        "conservation_drift": {str(r.n): dg.conservation_drift(r) for r in cons},
    }
    if isinstance(ks.fragmentation, FragmentationRates):
        gamma = ks.fragmentation.gamma
        stab["weighted_moment_integral"] = {
            str(r.n): dg.weighted_moment_integral(r, k, gamma, 1) for r in full}
    io.write_json(out / "stability.json", stab)
    files.append("stability.json")
    io.write_json(out / "run_meta.json", io.run_meta("sweep", cfg.to_dict(), levels=levels,
                                                     outputs=files))
    print(f"sweep: levels {levels}, verdict {gel.verdict}, gel time {gel.gel_time} -> {out}")
    return EXIT_OK


def _stability(runs, p):
    from .duality import mass_lp_stability
    return mass_lp_stability(runs, float(p))


# -- audit ----------------------------------------------------------------------

def closed_form_audit(n: int = 256, times=(0.5, 1.0, 2.0), i_max: int = 20,
                      tol: float = 1e-8) -> AuditReport:
    """Constant kernel against the exact solution, through the oracle and the solver."""
    ks = KernelSet(PowerLawCoagulation(0.5, 0.0, 0.0), FragmentationRates(0.0, 1.0),
                   PowerLawDaughterDistribution(0.0))
    i = np.arange(1, i_max + 1)
    rep = AuditReport()
    tr = ode_reference(ks, TruncationMode.CONSERVATIVE, HomogeneousState.monodisperse(n),
                       max(times), 1e-10, list(times))
    g = Grid(1, 1.0, 1)
    s0 = TruncatedState.uniform(g, np.r_[1.0, np.zeros(n - 1)])
    res = simulate(s0, ks, 1.0, TruncationMode.CONSERVATIVE, max(times),
                   StepperConfig(rtol=1e-10, atol=1e-14, dt_max=0.25), sample_times=list(times))
    for t in times:
        exact = constant_kernel_exact(i, t)
        e_or = float(np.max(np.abs(tr.at(t)[:i_max] - exact)))
        k = int(np.argmin(np.abs(res.times - t)))
        e_so = float(np.max(np.abs(res.states[k][:i_max, 0] - exact)))
        rep.add("closed_form_oracle", e_or, e_or <= tol, t=t, n=n, tolerance=tol)
        rep.add("closed_form_solver", e_so, e_so <= tol, t=t, n=n, tolerance=tol)
    return rep


def run_audit(cfg: ScenarioConfig, rep: AuditReport) -> None:
    """Audits that need a trajectory of the scenario itself."""
    ks = cfg.kernels()
    params = cfg.audit_params
    l = float(params.get("l", 2.0))
    res = run(cfg, keep_states=True)
    clamp_ok = res.stats.clamped_mass <= 1e-8 * res.initial_mass
    rep.add("clamped_mass", res.stats.clamped_mass, clamp_ok, initial_mass=res.initial_mass)
    if res.mode is TruncationMode.CONSERVATIVE:
        drift = dg.conservation_drift(res)
        rep.add("mass_conservation", drift, drift <= 1e-8, tolerance=1e-8)
    else:
        rep.add("mass_nonincreasing", 0.0, dg.mass_is_nonincreasing(res))
    rep.add("nonnegative_states", float(min(c.min() for c in res.states)),
            all(c.min() >= 0 for c in res.states))

    coag, frag = ks.coagulation, ks.fragmentation
    if not (isinstance(coag, PowerLawCoagulation) and isinstance(frag, FragmentationRates)):
        rep.add("moment_audits_skipped", 0.0, True, reason="tabulated kernels")
        return
    a, b, g = coag.alpha, coag.beta, frag.gamma
    if dg.interpolation_admissible(a, b, g, l):
        worst = {}
        for k in range(len(res.times)):
            for r in dg.interpolation_audit(res.state_at(k), a, b, g, l):
                if r.check not in worst or r.margin < worst[r.check].margin:
                    worst[r.check] = r
        rep.records.extend(worst.values())
    else:
        rep.add("interpolation_skipped", 0.0, True, reason="exponents outside the admissible range", l=l)
    if len(res.times) >= 3:
        diss = dg.dissipation_audit(res, l, a, b, g, coag.C_Q, frag.C_F)
        rep.extend(diss)

    ini = cfg.to_dict()["initial"]
    uniform = ini["density"] == "uniform" and not ini["params"].get("noise")
    if uniform and cfg.to_dict()["time"]["scheme"] == "explicit" and cfg.T > 0:
        c0 = res.states[0].reshape(res.n, -1)[:, 0]
        tr = ode_reference(ks, res.mode, HomogeneousState(res.n, c0), cfg.T, 1e-10,
                           list(res.times))
        rho1 = float(np.sum(np.arange(1, res.n + 1) * c0))
        worst = 0.0
        for k, t in enumerate(res.times):
            pde = res.states[k].reshape(res.n, -1)
            worst = max(worst, float(np.max(np.abs(pde - tr.at(t)[:, None]))) / rho1)
        rep.add("homogeneous_consistency", worst, worst <= 1e-8, tolerance=1e-8)


def cmd_audit(args) -> int:
    if args.run:
        meta_path = Path(args.run) / "run_meta.json"
        try:
            meta = json.loads(meta_path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ScenarioError("--run", f"cannot read {meta_path}: {exc}") from None
        if "scenario" not in meta:
            raise ScenarioError("--run", "run_meta.json has no scenario")
        cfg = ScenarioConfig.from_dict(meta["scenario"])
    elif args.scenario:
        cfg = ScenarioConfig.load(args.scenario)
    else:
        raise ScenarioError("--scenario", "give a scenario file or --run directory")
    out = _out_dir(args.out)
    params = cfg.audit_params
    ks = cfg.kernels()
    rep = audit_kernel_constants(ks, cfg.n, i_max=int(params.get("i_max", 2000)))
    rng = np.random.default_rng(cfg.seed)
    e1 = dg.sample_elem1(rng, int(params.get("elem1_samples", 10_000)))
    rep.add("bound_elem1", e1.worst_ratio, e1.violations == 0, samples=e1.samples)
    e2 = dg.sample_elem2(rng, int(params.get("elem2_trials", 1_000)))
    rep.add("bound_elem2", e2.worst_ratio, e2.violations == 0, samples=e2.samples)
    if params.get("closed_form", True):
        rep.extend(closed_form_audit())
    structural = all(r.passed for r in rep.records
                     if r.check.startswith(("coag_", "frag_", "daughter_")))
    if structural and cfg.T > 0:
        run_audit(cfg, rep)
    elif not structural:
        rep.add("run_audits_skipped", 0.0, False, reason="kernel tables failed validation")
    (out / "audit.json").write_text(rep.to_json(indent=2) + "\n")
    io.write_json(out / "run_meta.json", io.run_meta("audit", cfg.to_dict(),
                                                     outputs=["audit.json"]))
    fails = rep.failures()
    print(f"audit: {len(rep)} checks, {len(fails)} failed -> {out / 'audit.json'}")
    for r in fails:
        print(f"  FAIL {r.check} margin={r.margin:.3e} {r.params}")
    return EXIT_OK if not fails else EXIT_AUDIT


# -- duality --------------------------------------------------------------------

def cmd_duality(args) -> int:
    if args.trials < 1:
        raise ScenarioError("--trials", "must be at least 1")
    m, q = args.m, args.q
    closeness = None
    if args.a is not None or args.b is not None:
        if args.a is None or args.b is None or args.p is None:
            raise ScenarioError("--a/--b/--p", "closeness check needs a, b and p")
        if not (0 < args.a <= args.b) or not args.p > 1:
            raise ScenarioError("--a/--b/--p", "need 0 < a <= b and p > 1")
        m, q = 0.5 * (args.a + args.b), args.p / (args.p - 1)
    if not m > 0 or not q > 1:
        raise ScenarioError("--m/--q", "need m > 0 and q > 1")
    cells = [args.cells] * args.dim
    grid = Grid(args.dim, tuple([1.0] * args.dim), tuple(cells))
    est = estimate_Kmq(m, q, args.trials, args.seed, grid, args.T, args.steps)
    out = _out_dir(args.out)
    d = est.to_dict()
    if args.a is not None:
        closeness = closeness_check(args.a, args.b, args.p, est.estimate)
        d["closeness"] = closeness.to_dict()
    io.write_json(out / "kmq.json", d)
    io.write_json(out / "run_meta.json", io.run_meta("duality", None, params=vars_clean(args),
                                                     outputs=["kmq.json"]))
    msg = f"duality: K_(m={m:g}, q={q:g}) >= {est.estimate:.10g} over {args.trials} probes"
    if closeness is not None:
        msg += f"; closeness {'pass' if closeness.passed else 'fail'} (advisory)"
    print(msg)
    return EXIT_OK


def vars_clean(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


# -- entry point ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coagfrag", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"coagfrag {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scenario_required=True):
        sp.add_argument("--scenario", required=scenario_required, help="scenario JSON file")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--threads", type=int, default=None, help="cap on BLAS/FFT threads")

    sp = sub.add_parser("run", help="integrate one scenario")
    common(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="refinement study over truncation sizes")
    common(sp)
    sp.add_argument("--levels", default=None, help="comma-separated sizes (default n,2n,4n)")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("audit", help="kernel, bound, oracle and moment audits")
    common(sp, scenario_required=False)
    sp.add_argument("--run", default=None, help="directory of a previous run")
    sp.set_defaults(func=cmd_audit)

    sp = sub.add_parser("duality", help="maximal-regularity ratio estimates")
    sp.add_argument("--out", default="out", help="output directory")
    sp.add_argument("--threads", type=int, default=None, help="cap on BLAS/FFT threads")
    sp.add_argument("--m", type=float, default=1.0, help="diffusion coefficient")
    sp.add_argument("--q", type=float, default=2.0, help="time-space exponent, > 1")
    sp.add_argument("--trials", type=int, default=100, help="number of random forcings")
    sp.add_argument("--seed", type=int, default=0, help="root seed for the forcings")
    sp.add_argument("--dim", type=int, choices=(1, 2), default=1, help="spatial dimension")
    sp.add_argument("--cells", type=int, default=64, help="cells per axis")
    sp.add_argument("--T", type=float, default=1.0, help="time horizon")
    sp.add_argument("--steps", type=int, default=256, help="backward-Euler steps")
    sp.add_argument("--a", type=float, default=None, help="lower diffusion bound")
    sp.add_argument("--b", type=float, default=None, help="upper diffusion bound")
    sp.add_argument("--p", type=float, default=None, help="integrability exponent")
    sp.set_defaults(func=cmd_duality)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return EXIT_INVALID
    try:
        with _threads(args.threads):
            return args.func(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except StiffnessError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print("stiffness payload: " + json.dumps(exc.payload, default=float), file=sys.stderr)
        return EXIT_STIFF


if __name__ == "__main__":
    sys.exit(main())
