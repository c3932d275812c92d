"""Command-line entry points: ``ncsym <verb> --config FILE``.

Exit codes: 0 ok, 1 check failed, 2 config error, 3 certificate or precision
failure, 4 unrealizable, 5 cap exceeded, 6 infeasible scenario.
"""
from __future__ import annotations

import argparse
import configparser
from dataclasses import dataclass, field
import json
from pathlib import Path
import sys
from typing import Optional

import numpy as np

from .abstraction import (AbstractionContext, SymbolicModel, build_abstraction, check_precision,
                          make_budget, model_cache_key)
from .cache import content_hash
from .dynamics import (LyapunovCertificate, PlantModel, PowerLaw, gamma_from_diameter, get_plant,
                       quadratic_bounds, validate_certificate, PLANTS)
from .errors import (CapExceeded, ConfigError, InfeasibleScenario, InvalidParameter,
                     NcsymError, SpecTooLarge, StateBudgetExceeded, UnsupportedCertificate)
from .ncs_timing import NcsParameters, derive_timing
from .netsim import (DropoutModel, LoopSetup, SimulationScenario, measure_tracking, run_simulation,
                     write_index, write_trace_csv)
from .specs import SpecAutomaton, extend_spec, parse_spec, validate_spec
from .synthesis import (AbstractOracle, Controller, SynthesisConfig, check_theorem_conditions,
                        synthesize, synthesize_on_the_fly, verify_closed_loop)

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_CERT, EXIT_UNREALIZABLE, EXIT_CAP, EXIT_INFEASIBLE = range(7)

NETWORK_KEYS = ("tau", "mu_x", "mu_u", "B_max", "delta_ctrl_min", "delta_ctrl_max",
                "delta_req_max", "delta_delay_min", "delta_delay_max")


# -- configuration -----------------------------------------------------------------

@dataclass
class SimulationSection:
    seeds: range = range(0, 1)
    horizon: float = 6.0
    x0: Optional[np.ndarray] = None
    dropout: DropoutModel = field(default_factory=DropoutModel)
    shared_channel: bool = False
    degenerate: bool = False
    request_wait_fraction: float = 0.5
    loops: list = field(default_factory=list)


@dataclass
class ProjectConfig:
    path: Path
    name: str
    plant: PlantModel
    cert: LyapunovCertificate
    params: NcsParameters
    epsilon: float
    theta: float
    mode: str = "on-the-fly"
    cap: int = 20_000_000
    state_cap: int = 50_000_000
    allow_uncertified: bool = False
    cert_samples: int = 100_000
    spec_path: Optional[Path] = None
    spec: Optional[SpecAutomaton] = None
    sim: SimulationSection = field(default_factory=SimulationSection)

    def synthesis_config(self) -> SynthesisConfig:
        return SynthesisConfig(self.epsilon, self.theta, self.params.mu_x, self.mode, self.cap)


def _floats(text: str, what: str) -> list:
    try:
        return [float(t) for t in text.replace(";", ",").split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"{what}: expected comma-separated numbers, got {text!r}") from None


def _matrix(text: str, what: str) -> np.ndarray:
    rows = [_floats(r, what) for r in text.split(";") if r.strip()]
    if not rows or len({len(r) for r in rows}) != 1:
        raise ConfigError(f"{what}: rows must have equal length")
    return np.array(rows)


def parse_seeds(text: str) -> range:
    """``7`` or ``A..B`` (inclusive)."""
    text = text.strip()
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            a, b = int(a), int(b)
        else:
            a = b = int(text)
    except ValueError:
        raise ConfigError(f"bad seed range {text!r}; use N or A..B") from None
    if b < a:
        raise ConfigError(f"empty seed range {text!r}")
    return range(a, b + 1)


def _power_law(sec, key: str, default: PowerLaw) -> PowerLaw:
    raw = sec.get(key, "auto").strip()
    if raw == "auto":
        return default
    vals = _floats(raw, f"certificate.{key}")
    if len(vals) != 2:
        raise ConfigError(f"certificate.{key}: expected 'coeff, power'")
    try:
        return PowerLaw(*vals)
    except ValueError as exc:
        raise ConfigError(f"certificate.{key}: {exc}") from None


def _simulation_section(cp: configparser.ConfigParser, base: Path) -> SimulationSection:
    sim = SimulationSection()
    if not cp.has_section("simulation"):
        return sim
    s = cp["simulation"]
    try:
        sim.seeds = parse_seeds(s.get("seeds", "0"))
        sim.horizon = s.getfloat("horizon", 6.0)
        if "x0" in s:
            sim.x0 = np.array(_floats(s["x0"], "simulation.x0"))
        sim.dropout = DropoutModel(s.getfloat("dropout_probability", 0.0),
                                   s.getint("dropout_max_consecutive", 0),
                                   s.getfloat("dropout_timeout", 0.0))
        sim.shared_channel = s.getboolean("shared_channel", False)
        sim.degenerate = s.getboolean("degenerate", False)
        sim.request_wait_fraction = s.getfloat("request_wait_fraction", 0.5)
    except ValueError as exc:
        raise ConfigError(f"simulation: {exc}") from None
    for item in s.get("loops", "").split(","):
        if item.strip():
            lp = (base / item.strip()).resolve()
            if not lp.is_file():
                raise ConfigError(f"loop config {lp} not found")
            sim.loops.append(lp)
    if sim.horizon <= 0:
        raise ConfigError("simulation.horizon must be positive")
    if not 0 <= sim.request_wait_fraction <= 1:
        raise ConfigError("simulation.request_wait_fraction must lie in [0, 1]")
    return sim


def load_config(path) -> ProjectConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    base = path.parent
    if not cp.has_section("plant") and cp.has_section("simulation") and "loops" in cp["simulation"]:
        # scenario-only file: loops come from their own configs
        sim = _simulation_section(cp, base)
        if not sim.loops:
            raise ConfigError(f"{path}: simulation.loops is empty")
        cfg = load_config(sim.loops[0])
        cfg.path, cfg.name, cfg.sim = path.resolve(), path.stem, sim
        return cfg
    for sec in ("plant", "certificate", "network"):
        if not cp.has_section(sec):
            raise ConfigError(f"{path}: missing [{sec}] section")

    pl = cp["plant"]
    pname = pl.get("name", "").strip()
    if pname not in PLANTS:
        raise ConfigError(f"plant.name must be one of {sorted(PLANTS)}, got {pname!r}")
    try:
        kwargs = {k: pl.getfloat(k) for k in pl if k != "name"}
        plant = PLANTS[pname](**kwargs) if kwargs else get_plant(pname)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"plant parameters: {exc}") from None

    cs = cp["certificate"]
    if "p" not in cs or "lambda" not in cs:
        raise ConfigError("certificate needs P and lambda")
    P = _matrix(cs["p"], "certificate.P")
    if P.shape != (plant.state_dim, plant.state_dim):
        raise ConfigError(f"certificate.P must be {plant.state_dim}x{plant.state_dim}")
    lo, hi = quadratic_bounds(P) if np.all(np.linalg.eigvalsh((P + P.T) / 2) > 0) else (None, None)
    try:
        cert = LyapunovCertificate(P, cs.getfloat("lambda"), _power_law(cs, "alpha_lower", lo),
                                   _power_law(cs, "alpha_upper", hi))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"certificate: {exc}") from None
    g = cs.get("gamma", "auto").strip()
    cert = cert.with_gamma(gamma_from_diameter(plant, cert) if g == "auto" else float(g))

    net = cp["network"]
    missing = [k for k in NETWORK_KEYS if k.lower() not in net]
    if missing:
        raise ConfigError(f"network section misses {', '.join(missing)}")
    try:
        vals = {k: net.getfloat(k) for k in NETWORK_KEYS}
        params = NcsParameters(**vals, header_bits=net.getint("header_bits", 0))
    except ValueError as exc:
        raise ConfigError(f"network: {exc}") from None

    syn = cp["synthesis"] if cp.has_section("synthesis") else {}
    try:
        eps = float(syn.get("epsilon", "nan"))
        th_raw = str(syn.get("theta", "auto")).strip()
        theta = 0.9 * eps if th_raw.startswith("auto") else float(th_raw)
        mode = str(syn.get("mode", "on-the-fly")).strip()
        cap = int(float(syn.get("cap", 20_000_000)))
        state_cap = int(float(syn.get("state_cap", 50_000_000)))
        allow = str(syn.get("allow_uncertified", "no")).strip().lower() in ("1", "yes", "true", "on")
        cert_samples = int(float(syn.get("cert_samples", 100_000)))
    except ValueError as exc:
        raise ConfigError(f"synthesis: {exc}") from None
    if mode not in ("full", "on-the-fly"):
        raise ConfigError(f"synthesis.mode must be 'full' or 'on-the-fly', got {mode!r}")

    spec_path = spec = None
    if cp.has_section("spec") and "file" in cp["spec"]:
        spec_path = (base / cp["spec"]["file"].strip()).resolve()
        if not spec_path.is_file():
            raise ConfigError(f"spec file {spec_path} not found")
        try:
            spec = parse_spec(spec_path.read_text(), plant.state_dim, spec_path.stem)
        except ValueError as exc:
            raise ConfigError(f"{spec_path}: {exc}") from None

    sim = _simulation_section(cp, base)
    if sim.x0 is not None and len(sim.x0) != plant.state_dim:
        raise ConfigError("simulation.x0 has the wrong dimension")

    return ProjectConfig(path.resolve(), path.stem, plant, cert, params, eps, theta, mode, cap,
                         state_cap, allow, cert_samples, spec_path, spec, sim)


def _need_epsilon(cfg: ProjectConfig) -> None:
    if not cfg.epsilon > 0:
        raise ConfigError("synthesis.epsilon must be set to a positive number")


def _need_spec(cfg: ProjectConfig) -> None:
    if cfg.spec is None:
        raise ConfigError("[spec] file is required for this command")
    rep = validate_spec(cfg.spec)
    if not rep.valid:
        raise ConfigError(f"spec {cfg.spec_path}: unreachable {rep.unreachable}, blocking {rep.blocking}")


# -- pipeline pieces ------------------------------------------------------------------

def get_model(cfg: ProjectConfig, cache: Optional[Path]) -> SymbolicModel:
    _need_epsilon(cfg)
    key = model_cache_key(cfg.plant, cfg.params, 64)
    file = cache / f"model-{key}.ncsa" if cache else None
    if file is not None and file.is_file():
        return SymbolicModel.load(file, cfg.plant)
    budget = make_budget(cfg.cert, cfg.params, cfg.plant.state_box, cfg.epsilon, cfg.theta)
    model = build_abstraction(cfg.plant, cfg.cert, cfg.params, budget, cap=cfg.state_cap,
                              allow_uncertified=cfg.allow_uncertified)
    if file is not None:
        cache.mkdir(parents=True, exist_ok=True)
        model.save(file)
    return model


def controller_key(cfg: ProjectConfig) -> str:
    return content_hash(model_cache_key(cfg.plant, cfg.params, 64), cfg.spec_path.read_text(),
                        cfg.epsilon, cfg.theta, cfg.mode)


def get_controller(cfg: ProjectConfig, cache: Optional[Path]):
    """Returns (controller, context, extended spec, model or None)."""
    _need_epsilon(cfg)
    _need_spec(cfg)
    _check_precision_gate(cfg)
    ctx = AbstractionContext(cfg.plant, cfg.params, cap=cfg.state_cap)
    Qe = extend_spec(cfg.spec, ctx.n_min, ctx.n_max)
    file = cache / f"ctrl-{controller_key(cfg)}.ncsc" if cache else None
    if file is not None and file.is_file():
        return Controller.load(file, AbstractOracle(ctx), Qe), ctx, Qe, None
    model = None
    if cfg.mode == "full":
        model = get_model(cfg, cache)
        ctx = model.ctx
        ctrl = synthesize(model, Qe, cfg.synthesis_config())
    else:
        ctrl = synthesize_on_the_fly(ctx, Qe, cfg.synthesis_config())
    if file is not None:
        cache.mkdir(parents=True, exist_ok=True)
        ctrl.save(file)
    return ctrl, ctx, Qe, model


def _check_precision_gate(cfg: ProjectConfig) -> None:
    chk = check_precision(cfg.cert, cfg.params.tau, cfg.params.mu_x, cfg.epsilon,
                          cfg.plant.state_box)
    if not chk.approved and not cfg.allow_uncertified:
        raise InvalidParameter(f"mu_x={cfg.params.mu_x} exceeds the precision bound "
                               f"{chk.binding_bound:.4g} at epsilon={cfg.epsilon}")


# -- commands --------------------------------------------------------------------------

class Reporter:
    def __init__(self, as_json: bool, out: Optional[Path], name: str):
        self.as_json, self.out, self.name = as_json, out, name
        self.data, self.lines = {}, []

    def line(self, text: str) -> None:
        self.lines.append(text)

    def put(self, **kw) -> None:
        self.data.update(kw)

    def flush(self) -> None:
        body = json.dumps(self.data, indent=2, sort_keys=True, default=_json_default) \
            if self.as_json else "\n".join(self.lines)
        print(body)
        if self.out is not None:
            self.out.mkdir(parents=True, exist_ok=True)
            suffix = "json" if self.as_json else "txt"
            (self.out / f"{self.name}.{suffix}").write_text(body + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def cmd_check_cert(cfg: ProjectConfig, args, rep: Reporter) -> int:
    seed = args.seed if args.seed is not None else 0
    r = validate_certificate(cfg.plant, cfg.cert, cfg.cert_samples, seed)
    gamma = gamma_from_diameter(cfg.plant, cfg.cert)
    rep.line(r.summary())
    rep.line(f"gamma slope from the state-box diameter: {gamma:.6g}")
    rep.put(passed=r.passed and r.bounds_ok, worst_margin=r.worst_margin, samples=r.sample_count,
            seed=seed, gamma=gamma, counterexample=r.violation)
    if cfg.epsilon > 0:
        chk = check_precision(cfg.cert, cfg.params.tau, cfg.params.mu_x, cfg.epsilon,
                              cfg.plant.state_box)
        rep.line(f"precision at epsilon={cfg.epsilon}: bound {chk.binding_bound:.4g}, "
                 f"mu_x={cfg.params.mu_x:.4g} -> {'approved' if chk.approved else 'not approved'}")
        rep.put(precision_bound=chk.binding_bound, precision_approved=chk.approved)
    return EXIT_OK if r.passed and r.bounds_ok else EXIT_CERT


def cmd_timing(cfg: ProjectConfig, args, rep: Reporter) -> int:
    try:
        t = derive_timing(cfg.params, cfg.plant.state_box, cfg.plant.input_box)
    except InvalidParameter as exc:
        raise ConfigError(str(exc)) from None
    rep.line(f"state lattice: {t.state_count} points, {t.state_bits} bits; "
             f"input lattice: {t.input_count} points, {t.input_bits} bits")
    rep.line(f"send times: sc {t.delta_send_sc:.6g} s, ca {t.delta_send_ca:.6g} s")
    rep.line(f"delay bounds: [{t.delta_min:.6g}, {t.delta_max:.6g}] s")
    rep.line(f"hold lengths: N in [{t.n_min};{t.n_max}]")
    rep.put(**{k: getattr(t, k) for k in t.__dataclass_fields__})
    return EXIT_OK


def cmd_abstract(cfg: ProjectConfig, args, rep: Reporter) -> int:
    _check_precision_gate(cfg)
    model = get_model(cfg, args.cache)
    for k, v in model.stats.items():
        rep.line(f"{k}: {v}")
    rep.put(**model.stats)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        model.save(args.out / "model.ncsa")
    return EXIT_OK


def cmd_synthesize(cfg: ProjectConfig, args, rep: Reporter) -> int:
    ctrl, ctx, Qe, _ = get_controller(cfg, args.cache)
    th = check_theorem_conditions(cfg.synthesis_config(), cfg.cert, cfg.params.tau,
                                  cfg.plant.state_box)
    rep.lines.extend(th.lines())
    rep.line(f"N in [{ctx.n_min};{ctx.n_max}], extended spec: {len(Qe)} states")
    rep.line(("REALIZABLE" if ctrl.realizable else "UNREALIZABLE") +
             " " + ", ".join(f"{k}={v}" for k, v in ctrl.stats.items()))
    rep.put(realizable=ctrl.realizable, stats=ctrl.stats, theorem_ok=th.ok,
            diagnostics=ctrl.diagnostics)
    if not ctrl.realizable:
        for k, v in ctrl.diagnostics.items():
            rep.line(f"  {k}: {v if not isinstance(v, list) else v[:10]}")
        return EXIT_UNREALIZABLE
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        ctrl.save(args.out / "controller.ncsc")
        with open(args.out / "controller.txt", "w") as fh:
            ctrl.write_text(fh)
    return EXIT_OK


def cmd_verify(cfg: ProjectConfig, args, rep: Reporter) -> int:
    ctrl, ctx, Qe, model = get_controller(cfg, args.cache)
    if not ctrl.realizable:
        rep.line("UNREALIZABLE: nothing to verify")
        rep.put(realizable=False)
        return EXIT_UNREALIZABLE
    r = verify_closed_loop(ctrl, model, Qe, cfg.synthesis_config())
    rep.line(f"{'PASS' if r.ok else 'FAIL'} via {r.route}: nonblocking={r.nonblocking} "
             f"robust={r.robust} simulation={r.simulation}")
    rep.lines.extend(f"  {p}" for p in r.problems)
    rep.put(ok=r.ok, route=r.route, nonblocking=r.nonblocking, robust=r.robust,
            simulation=r.simulation, problems=r.problems)
    return EXIT_OK if r.ok else EXIT_FAILED


def build_loops(cfg: ProjectConfig, cache: Optional[Path]) -> tuple:
    """Loop setups for a simulation config (its own loop when ``loops`` is empty)."""
    cfgs = [load_config(p) for p in cfg.sim.loops] or [cfg]
    loops = []
    for lc in cfgs:
        ctrl, ctx, Qe, _ = get_controller(lc, cache)
        if not ctrl.realizable:
            raise _Unrealizable(f"loop {lc.name}: controller is unrealizable")
        x0 = lc.sim.x0 if lc.sim.x0 is not None else ctrl.output(int(ctrl.initial[0]))[0]
        loops.append(LoopSetup(lc.name, lc.plant, lc.params, ctx, ctrl, x0, lc.theta, lc.spec,
                               lc.epsilon))
    return loops


class _Unrealizable(NcsymError):
    pass


def simulate_seeds(cfg: ProjectConfig, loops: list, seeds, out: Optional[Path]) -> list:
    rows = []
    for seed in seeds:
        sc = SimulationScenario(loops, seed=seed, horizon=cfg.sim.horizon,
                                shared_channel=cfg.sim.shared_channel, dropout=cfg.sim.dropout,
                                degenerate=cfg.sim.degenerate,
                                req_wait_fraction=cfg.sim.request_wait_fraction)
        trace = run_simulation(sc)
        worst, ok = 0.0, True
        for lp, lt in zip(loops, trace.loops):
            if lp.spec is not None:
                m = measure_tracking(lt.quantized, lp.spec, lp.epsilon)
                worst = max(worst, m.max_deviation)
                ok &= m.passed
        ok &= trace.domain_misses == 0
        fname = f"trace_seed{seed}.csv"
        if out is not None:
            write_trace_csv(trace, out / fname)
        rows.append({"seed": seed, "file": fname, "domain_misses": trace.domain_misses,
                     "max_deviation": worst, "pass": bool(ok),
                     "misses": [m for lt in trace.loops for m in lt.misses]})
    return rows


def cmd_simulate(cfg: ProjectConfig, args, rep: Reporter) -> int:
    seeds = args.seeds if args.seeds is not None else (
        range(args.seed, args.seed + 1) if args.seed is not None else cfg.sim.seeds)
    loops = build_loops(cfg, args.cache)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
    rows = simulate_seeds(cfg, loops, seeds, args.out)
    if args.out is not None:
        write_index(rows, args.out / "index.csv")
    passed = sum(r["pass"] for r in rows)
    for r in rows:
        if not r["pass"]:
            rep.line(f"seed {r['seed']}: FAIL max deviation {r['max_deviation']:.4g}, "
                     f"{r['domain_misses']} domain misses {r['misses'][:1]}")
    rep.line(f"{passed}/{len(rows)} seeds pass")
    rep.put(passed=passed, runs=len(rows), failures=[r for r in rows if not r["pass"]])
    return EXIT_OK if passed == len(rows) else EXIT_FAILED


COMMANDS = {
    "check-cert": cmd_check_cert,
    "timing": cmd_timing,
    "abstract": cmd_abstract,
    "synthesize": cmd_synthesize,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ncsym", description="Symbolic controllers for networked loops.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, type=Path)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--seeds", type=str, help="inclusive range A..B")
    ap.add_argument("--out", type=Path)
    ap.add_argument("--cache", type=Path)
    ap.add_argument("--cap", type=int, help="override the state and composed-state caps")
    ap.add_argument("--json", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    rep = Reporter(args.json, args.out, args.command)
    try:
        args.seeds = parse_seeds(args.seeds) if args.seeds else None
        cfg = load_config(args.config)
        if args.cap is not None:
            cfg.cap = cfg.state_cap = args.cap
        code = COMMANDS[args.command](cfg, args, rep)
    except ConfigError as exc:
        rep.line(f"config error: {exc}")
        rep.put(error="config", message=str(exc))
        code = EXIT_CONFIG
    except (UnsupportedCertificate, InvalidParameter) as exc:
        rep.line(f"certificate/precision error: {exc}")
        rep.put(error="certificate", message=str(exc))
        code = EXIT_CERT
    except _Unrealizable as exc:
        rep.line(f"UNREALIZABLE: {exc}")
        rep.put(error="unrealizable", message=str(exc))
        code = EXIT_UNREALIZABLE
    except (StateBudgetExceeded, CapExceeded, SpecTooLarge) as exc:
        rep.line(f"cap exceeded: {exc}")
        rep.put(error="cap", message=str(exc), stats=getattr(exc, "stats", None))
        code = EXIT_CAP
    except InfeasibleScenario as exc:
        rep.line(f"infeasible scenario: {exc}")
        rep.put(error="infeasible", message=str(exc))
        code = EXIT_INFEASIBLE
    rep.put(exit_code=code)
    rep.flush()
    return code


if __name__ == "__main__":
    sys.exit(main())
