"""Command-line driver.

    sstlab <experiment> --model MODEL.toml [--seed S] [--trials N] [--horizon H]
                        [--window W] [--t-grid T,...] [--start START] [--init STATE]
                        [--out DIR] [--threads K]

Experiments: criterion, duality-check, simulate-dual, sst, separation.
Artifacts are written to ``DIR/<experiment>-seed<S>.{json,csv}`` and depend
only on (model, experiment parameters, seed), never on ``--threads``.

Exit codes: 0 success; 1 a numerical check ran but missed its tolerance;
2 a standing assumption (positive recurrence, non-explosion) fails;
3 invalid config or arguments.
"""

from __future__ import annotations

import argparse
import io
import math
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

from . import analysis as A
from . import graph_dual as GD
from .errors import SSTLabError, ValidationError, WindowTooSmall
from .interval_dual import TERMINALS, ExplosionPolicy, IntervalState, run_trials
from .state_space.assumptions import check_assumptions
from .state_space.config import ModelConfig, load_model

EXPERIMENTS = ("criterion", "duality-check", "simulate-dual", "sst", "separation")
EXIT_OK, EXIT_CHECK, EXIT_ASSUMPTION, EXIT_INVALID = 0, 1, 2, 3
RESIDUAL_TOL = 1e-9
HARD_ASSUMPTIONS = ("positive_recurrent", "nonexplosive")


@dataclass(frozen=True)
class ExperimentConfig:
    model: str
    experiment: str
    trials: int = 10**4
    horizon: float = 1e3
    t_grid: tuple = A.T_GRID
    window: str | None = None
    seed: int = 0
    out: str = "."
    threads: int = 1
    start: str | None = None
    init: str | None = None
    explosion_m: int = 64

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValidationError(f"unknown experiment {self.experiment!r}")
        for k in ("trials", "threads", "explosion_m"):
            if getattr(self, k) <= 0:
                raise ValidationError(f"--{k.replace('_', '-')} must be positive")
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise ValidationError("--horizon must be positive and finite")
        if not self.t_grid or any(not (t > 0 and math.isfinite(t)) for t in self.t_grid):
            raise ValidationError("--t-grid needs positive finite times")
        if self.seed < 0:
            raise ValidationError("--seed must be non-negative")

    @property
    def policy(self) -> ExplosionPolicy:
        return ExplosionPolicy(M=self.explosion_m)

    def artifact(self, ext: str) -> Path:
        return Path(self.out) / f"{self.experiment}-seed{self.seed}.{ext}"


# -- argument parsing ----------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    # argparse exits with 2, which is reserved for failed assumptions
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sstlab", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        s = sub.add_parser(name)
        s.add_argument("--model", required=True, help="model config (TOML)")
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--trials", type=int, default=10**4)
        s.add_argument("--horizon", type=float, default=1e3)
        s.add_argument("--window", default=None,
                       help="K or lo,hi on Z; branch depth on a graph")
        s.add_argument("--t-grid", default=None, help="comma-separated times")
        s.add_argument("--start", default=None,
                       help="initial law: point:X, restricted:P,Q (Z) or restricted:SET (graph)")
        s.add_argument("--init", default=None,
                       help="initial dual state for simulate-dual: P,Q (Z) or an encoded set")
        s.add_argument("--explosion-m", type=int, default=64,
                       help="distance from the origin before an explosion may be declared")
        s.add_argument("--out", default=".")
        s.add_argument("--threads", type=int, default=1)
    return p


def _config(ns) -> ExperimentConfig:
    t_grid = A.T_GRID
    if ns.t_grid:
        try:
            t_grid = tuple(float(v) for v in ns.t_grid.split(","))
        except ValueError:
            raise ValidationError(f"bad --t-grid {ns.t_grid!r}") from None
    return ExperimentConfig(ns.model, ns.experiment, ns.trials, ns.horizon, t_grid, ns.window,
                            ns.seed, ns.out, ns.threads, ns.start, ns.init, ns.explosion_m)


def _bound(tok: str):
    tok = tok.strip().lower()
    if tok in ("-inf", "inf", "+inf", ""):
        return None
    return int(tok)


def _window(cfg: ExperimentConfig, mc: ModelConfig, default_z=(-20, 20), default_depth=10):
    w = cfg.window
    if mc.kind == "graph":
        if w is None:
            return mc.window or default_depth
        try:
            d = int(w)
        except ValueError:
            raise ValidationError(f"graph --window must be a depth, got {w!r}") from None
        if d <= 0:
            raise ValidationError("--window must be positive")
        return d
    if w is None:
        return mc.window or default_z
    try:
        parts = [int(v) for v in w.split(",")]
    except ValueError:
        raise ValidationError(f"bad --window {w!r}") from None
    if len(parts) == 1 and parts[0] > 0:
        return (-parts[0], parts[0])
    if len(parts) == 2 and parts[0] < parts[1]:
        return tuple(parts)
    raise ValidationError(f"bad --window {w!r} (K > 0 or lo,hi with lo < hi)")


def _interval(text: str) -> IntervalState:
    p, _, q = text.partition(",")
    try:
        return IntervalState.make(_bound(p), _bound(q))
    except ValueError as e:
        raise ValidationError(f"bad interval {text!r}: {e}") from None


def _dual_set(text: str, mc: ModelConfig) -> GD.DualSet:
    try:
        return GD.DualSet.decode(text, mc.graph)
    except (ValueError, SSTLabError) as e:
        raise ValidationError(f"bad dual set {text!r}: {e}") from None


def _start(cfg: ExperimentConfig, mc: ModelConfig):
    s = cfg.start
    if s is None:
        # sharp configuration on Z; dual started at the center on a graph
        return ("restricted", (None, 0)) if mc.kind == "line" else ("point", 0)
    if s == "stationary":
        return s
    kind, _, arg = s.partition(":")
    if kind == "point":
        try:
            return ("point", int(arg))
        except ValueError:
            raise ValidationError(f"bad --start {s!r}") from None
    if kind == "restricted":
        if mc.kind == "line":
            q = _interval(arg)
            return ("restricted", (None if q.p == -math.inf else q.p,
                                   None if q.q == math.inf else q.q))
        return ("restricted", _dual_set(arg, mc))
    raise ValidationError(f"bad --start {s!r} (point:X or restricted:...)")


# -- experiments -----------------------------------------------------------------

def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)


def _criterion(cfg, mc, out):
    rep = A.criterion(mc.model)
    d = rep.to_dict()
    _write(cfg.artifact("json"), A.dumps_json(d))
    out.write(A.dumps_json({"verdict": d["verdict"], "value": d.get("value"),
                            "flagged": d["flagged"]}))
    return EXIT_OK


def _duality(cfg, mc, out):
    window = _window(cfg, mc)
    rep = A.duality_residual(mc.model, window)
    d = {"residual": rep.residual, "boundary_residual": rep.boundary_residual,
         "n_rows": rep.n_rows, "n_states": rep.n_states, "precision": rep.precision,
         "window": window, "tolerance": RESIDUAL_TOL, "worst": rep.worst,
         "passed": rep.residual < RESIDUAL_TOL}
    _write(cfg.artifact("json"), A.dumps_json(d))
    out.write(A.dumps_json({"residual": rep.residual, "passed": d["passed"]}))
    return EXIT_OK if d["passed"] else EXIT_CHECK


def _simulate(cfg, mc, out):
    pol = cfg.policy
    buf = io.StringIO()
    if mc.kind == "line":
        init = _interval(cfg.init) if cfg.init else IntervalState(0, 0)
        b = run_trials(mc.rates, cfg.trials, cfg.horizon, pol, cfg.seed, init=init,
                       stop_at_absorption=False, threads=cfg.threads)
        finals = [s.encode() for s in b.final_states()]
        terms = [TERMINALS[int(t)] for t in b.terminal]
        buf.write("# schema: sstlab.dual_trials/1\n")
        buf.write("trial,terminal,absorption_time,n_explosions,n_jumps,final_state\n")
    else:
        g = mc.graph
        init = _dual_set(cfg.init, mc) if cfg.init else GD.singleton(g, 0)
        b = GD.run_graph_trials(GD._gmodel(g), cfg.trials, cfg.horizon, pol, cfg.seed, init,
                                stop_at_absorption=False, threads=cfg.threads)
        finals = [s.encode() for s in b.final]
        terms = [GD.TERMINALS[int(t)] for t in b.terminal]
        buf.write("# schema: sstlab.graph_dual_trials/1\n")
        buf.write("trial,terminal,absorption_time,n_explosions,n_jumps,final_state,deltas_ever\n")
    for k in range(cfg.trials):
        row = [str(k), terms[k], repr(float(b.absorption_time[k])), str(int(b.n_explosions[k])),
               str(int(b.n_jumps[k])), f'"{finals[k]}"']
        if mc.kind == "graph":
            row.append(str(int(b.deltas_ever[k])))
        buf.write(",".join(row) + "\n")
    _write(cfg.artifact("csv"), buf.getvalue())
    summary = {"init": init.encode(), "trials": cfg.trials, "horizon": cfg.horizon,
               "seed": cfg.seed, "n_absorbed": int(b.absorbed.sum()),
               "terminals": {t: terms.count(t) for t in sorted(set(terms))},
               "policy": asdict(pol)}
    if mc.kind == "graph":
        summary["delta_counts"] = [b.delta_count(i) for i in range(mc.graph.n_branches)]
    _write(cfg.artifact("json"), A.dumps_json(summary))
    out.write(A.dumps_json({"n_absorbed": summary["n_absorbed"], "trials": cfg.trials}))
    return EXIT_OK


def _sst(cfg, mc, out):
    mu0 = _start(cfg, mc)
    if mu0 == "stationary":
        raise ValidationError("sst needs point:X or restricted:... as --start")
    kw = {}
    if cfg.window is not None:
        kw["window"] = _window(cfg, mc)
    r = A.sst_experiment(mc.model, mu0, trials=cfg.trials, horizon=cfg.horizon, seed=cfg.seed,
                         t_grid=cfg.t_grid, policy=cfg.policy, threads=cfg.threads, **kw)
    _write(cfg.artifact("csv"), r.report_csv())
    _write(cfg.artifact("json"), A.dumps_json(r.summary()))
    out.write(A.dumps_json({"bound_holds": r.bound_holds,
                            "n_absorbed": r.stats.n_absorbed, "trials": cfg.trials}))
    return EXIT_OK


def _separation(cfg, mc, out):
    mu0 = _start(cfg, mc)
    window = _window(cfg, mc, default_z=(-40, 40), default_depth=40)
    c = A.separation_curve(mc.model, mu0, cfg.t_grid, window)
    buf = io.StringIO()
    buf.write("# schema: sstlab.separation/1\n")
    buf.write("t,separation\n")
    for t, s in zip(c.t, c.s):
        buf.write(f"{float(t)!r},{float(s)!r}\n")
    _write(cfg.artifact("csv"), buf.getvalue())
    _write(cfg.artifact("json"), A.dumps_json({"t": c.t, "s": c.s, "window": window,
                                               "tail_mass": c.tail_mass,
                                               "init_tail_mass": c.init_tail_mass}))
    out.write(A.dumps_json({"s": c.s}))
    return EXIT_OK


RUNNERS = {"criterion": _criterion, "duality-check": _duality, "simulate-dual": _simulate,
           "sst": _sst, "separation": _separation}


def run(cfg: ExperimentConfig, out=None, err=None) -> int:
    """Run one experiment; returns the exit status."""
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        mc = load_model(cfg.model)
        rep = check_assumptions(mc.model)
        hard = [k for k in HARD_ASSUMPTIONS if k in rep.failed]
        if hard:
            err.write(f"sstlab: assumption check failed: {', '.join(hard)}\n")
            return EXIT_ASSUMPTION
        if "diag_integrable" in rep.failed:
            err.write("sstlab: warning: diagonal of the generator is not mu-integrable; "
                      "results are flagged\n")
        return RUNNERS[cfg.experiment](cfg, mc, out)
    except (ValidationError, WindowTooSmall) as e:
        err.write(f"sstlab: {e}\n")
        return EXIT_INVALID


def main(argv=None) -> int:
    ns = _parser().parse_args(argv)
    try:
        cfg = _config(ns)
    except ValidationError as e:
        sys.stderr.write(f"sstlab: {e}\n")
        return EXIT_INVALID
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
