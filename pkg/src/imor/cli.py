"""Command-line front end.

Subcommands ``analyze``, ``decouple``, ``simulate``, ``reduce``, ``compare``
and ``export``.  Every run writes into ``--out``; outputs are CSV (header
``t,y_1..y_l``, floats in round-trip precision) and JSON.  Exit codes are 0
on success, 2 for invalid input and 3 for numerical failures; errors are
also reported as one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.io as sio
import scipy.sparse as sp

from . import bundle
from .decouple import (
    DescriptorSystem,
    consistent_initialize,
    explicit_decouple,
    implicit_decouple,
)
from .errors import IMORError, MissingArtifactError, ParseError, ValidationError
from .gasnet import (
    GasProperties,
    assemble_dae,
    assemble_ode,
    chain_network,
    parse_network,
    structured_decouple,
    structured_dimensions,
    tree_network,
)
from .integrate import TimeGrid, implicit_euler, simulate_decoupled, steady_state
from .mor import (
    baseline_pod_reduce,
    block_pod_basis,
    build_irom,
    deim_interpolant,
    nonlinear_snapshots,
    percent_reduction,
    pod_basis,
    relative_error,
    supported_deim_size,
)
from .pencil import build_projector_chain, finite_spectrum, match_spectra
from .signals import Constant, PiecewiseLinear, Scenario, Sine, parse_scenario, step

FULL_MODELS = ("dae", "ode", "decoupled")
REDUCED_MODELS = ("ipod", "dae-pod", "ode-pod")
PARENT = {"ipod": "decoupled", "dae-pod": "dae", "ode-pod": "ode"}
ROM_LABEL = {"ipod": "I-POD", "dae-pod": "DAE-POD", "ode-pod": "ODE-POD"}


# --------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    """Everything a run depends on.  Identical configs give identical CSVs."""

    network: Optional[str] = None
    chain: Optional[int] = None
    tree: Optional[int] = None
    demands: int = 1
    length: float = 1000.0
    diameter: float = 0.5
    friction: Optional[float] = None
    roughness: Optional[float] = None
    rs: float = 518.26
    temperature: float = 283.15
    scenario: Optional[str] = None
    supply: Optional[float] = None
    demand: Optional[str] = None
    t0: float = 0.0
    t_end: Optional[float] = None
    dt: Optional[float] = None
    init: str = "steady"
    model: str = "decoupled"
    decoupling: str = "structured"
    r_p: Optional[int] = None
    r_q: Optional[int] = None
    r: Optional[int] = None
    m_f: Optional[int] = None
    energy: Optional[float] = None
    basis: str = "auto"
    deim: bool = True
    seed: int = 0
    stride: int = 1
    states: bool = False
    out: str = "run"

    def validate(self):
        sources = [self.network is not None, self.chain is not None, self.tree is not None]
        if sum(sources) != 1:
            raise ValidationError("give exactly one of --network, --chain, --tree")
        if self.tree is not None and self.roughness is not None:
            raise ValidationError("generated trees take --friction, not --roughness")
        if self.dt is not None and not self.dt > 0:
            raise ValidationError("dt must be positive")
        if self.init not in ("steady", "guess"):
            raise ValidationError("init must be 'steady' or 'guess'")
        if self.basis not in ("auto", "block", "plain"):
            raise ValidationError("basis must be 'auto', 'block' or 'plain'")
        if self.decoupling not in ("structured", "implicit", "explicit"):
            raise ValidationError("decoupling must be structured, implicit or explicit")
        if self.energy is not None and not 0 < self.energy <= 1:
            raise ValidationError("energy must lie in (0, 1]")
        if self.stride < 1:
            raise ValidationError("stride must be >= 1")
        return self


# --------------------------------------------------------------------------
# pipeline pieces


def build_network(cfg: ExperimentConfig):
    gas = GasProperties(Rs=cfg.rs, T0=cfg.temperature)
    if cfg.network is not None:
        return parse_network(_read(cfg.network))
    friction = cfg.friction
    if friction is None and cfg.roughness is None:
        friction = 0.01
    if cfg.chain is not None:
        return chain_network(cfg.chain, length=cfg.length, diameter=cfg.diameter,
                             friction=friction, roughness=cfg.roughness, gas=gas)
    return tree_network(cfg.tree, cfg.demands, seed=cfg.seed, length=(0.5 * cfg.length, 1.5 * cfg.length),
                        diameter=cfg.diameter, friction=friction if friction is not None else 0.01,
                        gas=gas)


def _read(path):
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc.strerror}") from exc


def parse_demand(text: str):
    """Demand signal from ``VALUE``, ``step:T,BEFORE,AFTER[,RAMP]``,
    ``pwl:T:V,T:V,...`` or ``sine:OFFSET,AMPLITUDE,OMEGA[,PHASE]``."""
    try:
        if text.startswith("step:"):
            return step(*[float(v) for v in text[5:].split(",")])
        if text.startswith("pwl:"):
            pts = [tuple(float(a) for a in p.split(":")) for p in text[4:].split(",")]
            return PiecewiseLinear(tuple(p[0] for p in pts), tuple(p[1] for p in pts))
        if text.startswith("sine:"):
            return Sine(*[float(v) for v in text[5:].split(",")])
        return Constant(float(text))
    except (TypeError, ValueError) as exc:
        raise ParseError(f"bad demand signal {text!r}: {exc}", field="demand") from exc


def build_inputs(cfg: ExperimentConfig, net):
    """``(InputSignal, TimeGrid)``; command-line values override the scenario."""
    t0, t_end, dt = cfg.t0, cfg.t_end, cfg.dt
    if cfg.scenario is not None:
        sc = parse_scenario(_read(cfg.scenario))
        supply, demand = dict(sc.supply), dict(sc.demand)
        t0 = sc.t0 if cfg.t0 == 0.0 else cfg.t0
        t_end = sc.t_end if t_end is None else t_end
        dt = sc.dt if dt is None else dt
    else:
        supply, demand = {}, {}
    if cfg.supply is not None:
        supply = {i: Constant(cfg.supply) for i in net.supply_ids}
    if cfg.demand is not None and cfg.demand.startswith("list:"):
        try:
            vals = [float(v) for v in cfg.demand[5:].split(",")]
        except ValueError as exc:
            raise ParseError(f"bad demand list {cfg.demand!r}", field="demand") from exc
        if len(vals) != len(net.demand_ids):
            raise ValidationError(f"demand list has {len(vals)} values for {len(net.demand_ids)} demand nodes")
        demand = {i: Constant(v) for i, v in zip(net.demand_ids, vals)}
    elif cfg.demand is not None:
        sig = parse_demand(cfg.demand)
        demand = {i: sig for i in net.demand_ids}
    if t_end is None or dt is None:
        raise ValidationError("t_end and dt are required (scenario file or --t-end/--dt)")
    u = Scenario(t_end=t_end, dt=dt, supply=supply, demand=demand, t0=t0).input_signal(
        net.supply_ids, net.demand_ids)
    return u, TimeGrid(t0, t_end, dt)


class Context:
    """Lazily assembled models of one network, with timings."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg.validate()
        self.timing = {"assembly_s": 0.0, "decouple_s": 0.0, "integrate_s": 0.0}
        t = time.perf_counter()
        self.net = build_network(cfg)
        self.dae = assemble_dae(self.net)
        self.timing["assembly_s"] += time.perf_counter() - t
        self._ode = None
        self._dec = None
        self._inputs = None
        self._x0 = None
        self.trajectories = {}
        self.notes = {}

    @property
    def ode(self):
        if self._ode is None:
            t = time.perf_counter()
            self._ode = assemble_ode(self.net)
            self.timing["assembly_s"] += time.perf_counter() - t
        return self._ode

    @property
    def dec(self):
        if self._dec is None:
            t = time.perf_counter()
            if self.cfg.decoupling == "structured":
                self._dec = structured_decouple(self.dae)
            else:
                chain = build_projector_chain(self.dae.E, self.dae.A)
                make = implicit_decouple if self.cfg.decoupling == "implicit" else explicit_decouple
                self._dec = make(self.dae, chain)
            self.timing["decouple_s"] += time.perf_counter() - t
        return self._dec

    @property
    def inputs(self):
        if self._inputs is None:
            self._inputs = build_inputs(self.cfg, self.net)
        return self._inputs

    @property
    def x0(self):
        """Initial DAE state at ``u(t0)``."""
        if self._x0 is None:
            u, grid = self.inputs
            u0 = u(grid.t0)
            ns = self.net.n_s
            guess = self.dae.initial_guess(u0[:ns], u0[ns:])
            self._x0 = steady_state(self.dae, u0, guess) if self.cfg.init == "steady" else guess
        return self._x0

    def initial(self, model):
        if model == "dae":
            return self.x0
        if model == "ode":
            return self.dae.to_ode_state(self.x0)
        u, grid = self.inputs
        xp, _, res = consistent_initialize(self.dec, self.x0, u(grid.t0))
        self.notes["initial_inconsistency"] = float(res)
        return xp

    def system(self, model):
        return {"dae": self.dae, "ode": self.ode, "decoupled": self.dec}[model]

    def simulate(self, model, store_states=False):
        """Full-model trajectory (cached per model)."""
        if model in self.trajectories and (not store_states or self.trajectories[model].states is not None):
            return self.trajectories[model]
        u, grid = self.inputs
        x0 = self.initial(model)
        if model == "decoupled":
            tr = simulate_decoupled(self.dec, u, grid, x0, store_states=store_states)
        else:
            tr = implicit_euler(self.system(model), u, grid, x0, store_states=store_states)
        self.timing["integrate_s"] += tr.wall_time
        self.trajectories[model] = tr
        return tr

    def dimensions(self):
        net, dae = self.net, self.dae
        if self._dec is not None:
            n_p, n_q = self._dec.n_p, self._dec.n_q
        else:
            d = structured_dimensions(net)
            n_p, n_q = d["n_p"], d["n_q"]
        return {"n": dae.n, "n_ode": net.n_v - net.n_s + net.n_E, "n_p": n_p, "n_q": n_q,
                "m_s": net.n_s, "m_d": net.n_d, "pipes": net.n_E, "nodes": net.n_v}


# --------------------------------------------------------------------------
# output helpers


def _fmt(x):
    return repr(float(x))


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return str(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return _fmt(v)
    return v


def write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    Path(path).write_text(buf.getvalue())


def write_trajectory(path, tr, stride=1):
    ell = tr.outputs.shape[1]
    keep = list(range(0, len(tr.times), stride))
    if keep[-1] != len(tr.times) - 1:
        keep.append(len(tr.times) - 1)
    rows = ([tr.times[k], *tr.outputs[k]] for k in keep)
    write_csv(path, ["t"] + [f"y_{i + 1}" for i in range(ell)], rows)


def write_states(path, times, states):
    write_csv(path, ["t"] + [f"x_{i + 1}" for i in range(states.shape[1])],
              ([t, *x] for t, x in zip(times, states)))


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _outdir(cfg):
    d = Path(cfg.out)
    d.mkdir(parents=True, exist_ok=True)
    return d


# --------------------------------------------------------------------------
# subcommands


def _spectrum_summary(lam):
    lam = np.asarray(lam)
    if lam.size == 0:
        return {"count": 0}
    # smallest and largest modulus; ties (conjugate pairs) resolved by imaginary part
    mod = np.abs(lam)
    order = np.lexsort((lam.imag, np.round(mod / max(mod.max(), 1e-300), 10)))
    lo, hi = lam[order[0]], lam[order[-1]]
    return {
        "count": int(lam.size),
        "lambda_min": [float(lo.real), float(lo.imag)],
        "lambda_max": [float(hi.real), float(hi.imag)],
        "max_abs": float(np.max(np.abs(lam))),
        "max_rel_real": float(np.max(np.abs(lam.real) / np.maximum(np.abs(lam), 1e-300))),
    }


def cmd_analyze(cfg: ExperimentConfig, args):
    out = _outdir(cfg)
    if args.pencil:
        return _analyze_pencil(args, out)
    ctx = Context(cfg)
    report = {"dimensions": ctx.dimensions(), "tractability_index": None}
    dae = ctx.dae
    if dae.n <= args.chain_limit:
        chain = build_projector_chain(dae.E, dae.A)
        report["tractability_index"] = chain.index
        report["chain_residual"] = max(chain.residuals().values()) if chain.residuals() else 0.0
    if dae.n <= args.spectrum_limit:
        dec = ctx.dec
        report["dimensions"] = ctx.dimensions()
        lam = {
            "dae": finite_spectrum(dae.E, dae.A),
            "ode": finite_spectrum(ctx.ode.mass, ctx.ode.A),
            "decoupled": finite_spectrum(dec.mass, dec.A_p),
        }
        report["spectrum"] = {k: _spectrum_summary(v) for k, v in lam.items()}
        report["spectrum_mismatch"] = {
            k: match_spectra(lam["dae"], lam[k]) for k in ("ode", "decoupled")
        }
        rows = []
        for k, v in lam.items():
            v = v[np.lexsort((v.real, v.imag))]
            rows += [[k, i, z.real, z.imag] for i, z in enumerate(v)]
        write_csv(out / "spectrum.csv", ["model", "index", "real", "imag"], rows)
        sv_rows = []
        for k, M in (("dae", dae.E), ("ode", ctx.ode.mass), ("decoupled", dec.mass)):
            s = np.linalg.svd(M.toarray() if sp.issparse(M) else np.asarray(M), compute_uv=False)
            sv_rows += [[k, i, v] for i, v in enumerate(s)]
        write_csv(out / "singular_values.csv", ["model", "index", "sigma"], sv_rows)
    if cfg.supply is not None or cfg.scenario is not None:
        report["nonlinearity_norm"] = _nonlinearity_norms(ctx)
    if args.sparsity:
        rows = []
        mats = [("dae", "E", dae.E), ("dae", "A", dae.A), ("ode", "M", ctx.ode.mass), ("ode", "A", ctx.ode.A),
                ("decoupled", "E_p", ctx.dec.mass), ("decoupled", "A_p", ctx.dec.A_p)]
        for model, name, M in mats:
            C = sp.coo_matrix(M)
            C.eliminate_zeros()
            for i, j in sorted(zip(C.row.tolist(), C.col.tolist())):
                rows.append([model, name, i, j])
        write_csv(out / "sparsity.csv", ["model", "matrix", "row", "col"], rows)
        report["nnz"] = {f"{m}.{n}": int(sp.csr_matrix(M).count_nonzero()) for m, n, M in mats}
    report["timing"] = ctx.timing
    write_json(out / "analysis.json", report)
    print(json.dumps(report, sort_keys=True, default=_json_default))
    return 0


def _nonlinearity_norms(ctx):
    """``||f||`` of every model at the initial state."""
    u, grid = ctx.inputs
    u0 = u(grid.t0)
    x = ctx.x0
    dae, ode, dec = ctx.dae, ctx.ode, ctx.dec
    xo = dae.to_ode_state(x)
    xp = dec.p0.left_inverse @ x
    return {
        "dae": float(np.linalg.norm(dae.nonlinear(x, u0))),
        "ode": float(np.linalg.norm(ode.nonlinear(xo, u0))),
        "decoupled": float(np.linalg.norm(dec.nonlinearity(dec.transport @ xp))),
        "decoupled_projected": float(np.hypot(np.linalg.norm(dec.f_p(xp)), np.linalg.norm(dec.f_q(xp)))),
    }


def _load_matrix(path):
    try:
        M = sio.mmread(path)
    except (OSError, ValueError) as exc:
        raise ValidationError(f"cannot read matrix {path}: {exc}") from exc
    return M.tocsr() if sp.issparse(M) else np.asarray(M, dtype=float)


def _pencil_system(args):
    E, A = (_load_matrix(p) for p in args.pencil)
    n = E.shape[0]
    B = _load_matrix(args.B) if args.B else np.zeros((n, 1))
    C = _load_matrix(args.C) if args.C else np.eye(n)
    return DescriptorSystem(E, A, B, C)


def _analyze_pencil(args, out):
    sys_ = _pencil_system(args)
    chain = build_projector_chain(sys_.E, sys_.A)
    report = {
        "n": sys_.n,
        "tractability_index": chain.index,
        "ranks": list(chain.ranks),
        "chain_residual": max(chain.residuals().values()) if chain.residuals() else 0.0,
    }
    if sys_.n <= args.spectrum_limit:
        lam = finite_spectrum(sys_.E, sys_.A)
        report["spectrum"] = _spectrum_summary(lam)
        if chain.index == 1:
            dec = implicit_decouple(sys_, chain)
            report["n_p"], report["n_q"] = dec.n_p, dec.n_q
            report["spectrum_mismatch"] = match_spectra(lam, finite_spectrum(dec.mass, dec.A_p))
    write_json(out / "analysis.json", report)
    print(json.dumps(report, sort_keys=True, default=_json_default))
    return 0


def cmd_decouple(cfg: ExperimentConfig, args):
    out = _outdir(cfg)
    if args.pencil:
        sys_ = _pencil_system(args)
        t = time.perf_counter()
        chain = build_projector_chain(sys_.E, sys_.A)
        make = explicit_decouple if cfg.decoupling == "explicit" else implicit_decouple
        dec = make(sys_, chain)
        timing = {"decouple_s": time.perf_counter() - t}
        dims = {"n": dec.n, "n_p": dec.n_p, "n_q": dec.n_q}
    else:
        ctx = Context(cfg)
        dec = ctx.dec
        timing, dims = ctx.timing, ctx.dimensions()
    bundle.export_decoupled(dec, out / "decoupled", extra={"timing": timing})
    report = {"dimensions": dims, "timing": timing, "bundle": str(out / "decoupled")}
    write_json(out / "decouple.json", report)
    print(json.dumps(report, sort_keys=True, default=_json_default))
    return 0


def cmd_simulate(cfg: ExperimentConfig, args):
    if cfg.model not in FULL_MODELS:
        raise ValidationError(f"simulate supports {', '.join(FULL_MODELS)}; use 'reduce' for {cfg.model}")
    out = _outdir(cfg)
    ctx = Context(cfg)
    tr = ctx.simulate(cfg.model, store_states=cfg.states)
    write_trajectory(out / f"trajectory_{cfg.model}.csv", tr, cfg.stride)
    if cfg.states:
        X = tr.states if cfg.model != "decoupled" else np.asarray(
            [ctx.dec.p0.basis @ a + ctx.dec.q0.basis @ b for a, b in zip(tr.states, tr.algebraic_states)])
        write_states(out / f"states_{cfg.model}.csv", tr.times, X)
    report = {"model": cfg.model, "dimensions": ctx.dimensions(), "timing": ctx.timing,
              "newton_max": int(tr.newton_iterations.max(initial=0)), "steps": len(tr.times) - 1}
    report.update(ctx.notes)
    write_json(out / f"timing_{cfg.model}.json", report)
    print(json.dumps(report, sort_keys=True, default=_json_default))
    return 0


def basis_kind(cfg):
    """``auto`` is block-wise for I-POD and plain for the Galerkin baselines."""
    if cfg.basis != "auto":
        return cfg.basis
    return "block" if cfg.model == "ipod" else "plain"


def _basis(cfg, X, blocks, r):
    energy = None if r is not None else cfg.energy
    if basis_kind(cfg) == "block" and blocks:
        live = [b for b in blocks.values() if np.any(X[b])]
        if r is not None and r < len(live):
            names = ", ".join(k for k, b in blocks.items() if np.any(X[b]))
            raise ValidationError(f"a block basis of size {r} cannot cover the {len(live)} nonzero blocks "
                                  f"({names}); raise the size or use --basis plain")
        return block_pod_basis(X, list(blocks.values()), r=r, energy=energy)
    return pod_basis(X, r=r, energy=energy)


def _deim(cfg, F, default):
    if not cfg.deim:
        return None
    cap = supported_deim_size(F)
    m = cfg.m_f if cfg.m_f is not None else min(default, cap)
    return deim_interpolant(F, m) if m > 0 else None


def reduce_model(ctx: Context, model: str):
    """Offline stage: train on the parent trajectory and build the ROM."""
    cfg = ctx.cfg
    parent = PARENT[model]
    tr = ctx.simulate(parent, store_states=True)
    u, grid = ctx.inputs
    t = time.perf_counter()
    if model == "ipod":
        dec = ctx.dec
        Xp, Xq = tr.states.T, tr.algebraic_states.T
        Vp = _basis(cfg, Xp, dec.blocks_p, cfg.r_p)
        Vq = _basis(cfg, Xq, dec.blocks_q, cfg.r_q)
        F = nonlinear_snapshots(dec.nonlinearity, dec.transport @ Xp)
        rom = build_irom(dec, Vp, Vq, _deim(cfg, F, Vp.shape[1]))
        x0 = Vp.T @ ctx.initial("decoupled")
    else:
        sys_ = ctx.system(parent)
        X = tr.states.T
        V = _basis(cfg, X, getattr(sys_, "blocks", None), cfg.r)
        Z = sys_.K @ X
        S = getattr(sys_, "S", None)
        if S is not None:
            Z = Z + S @ np.column_stack([u(s) for s in tr.times])
        F = nonlinear_snapshots(sys_.f, np.asarray(Z))
        rom = baseline_pod_reduce(sys_, V, _deim(cfg, F, V.shape[1]), seed=cfg.seed)
        x0 = V.T @ ctx.initial(parent)
    offline = time.perf_counter() - t
    return rom, x0, offline


def cmd_reduce(cfg: ExperimentConfig, args):
    if cfg.model not in REDUCED_MODELS:
        raise ValidationError(f"reduce supports {', '.join(REDUCED_MODELS)}")
    out = _outdir(cfg)
    ctx = Context(cfg)
    rom, x0, offline = reduce_model(ctx, cfg.model)
    u, grid = ctx.inputs
    parent = ctx.trajectories[PARENT[cfg.model]]
    if cfg.model == "ipod":
        tr = simulate_decoupled(rom, u, grid, x0, store_states=False)
        bundle.export_reduced(rom, out / "rom_ipod", extra=_rom_meta(cfg, ctx))
    else:
        tr = implicit_euler(rom, u, grid, x0, store_states=False)
        bundle.export_galerkin(rom, out / f"rom_{cfg.model}", extra=_rom_meta(cfg, ctx))
    err = relative_error(parent.outputs, tr.outputs, ctx.dae.output_groups, zero_reference="absolute")
    n = ctx.dae.n
    row = {
        "ROM": ROM_LABEL[cfg.model],
        "r": int(rom.r),
        "pct_red": round(percent_reduction(rom.r, n), 2),
        "output_error": err["output_error"],
        "speed_up": parent.wall_time / tr.wall_time if tr.wall_time > 0 else float("inf"),
    }
    write_trajectory(out / f"trajectory_{cfg.model}.csv", tr, cfg.stride)
    write_trajectory(out / f"trajectory_{PARENT[cfg.model]}.csv", parent, cfg.stride)
    write_csv(out / f"summary_{cfg.model}.csv", ["ROM", "r", "pct_red", "output_error", "speed_up"],
              [[row["ROM"], row["r"], f"{row['pct_red']:.2f}", row["output_error"], row["speed_up"]]])
    metrics = {
        "summary": row,
        "errors": err,
        "basis": basis_kind(cfg),
        "r_p": getattr(rom, "r_p", None),
        "r_q": getattr(rom, "r_q", None),
        "m_f": 0 if rom.deim is None else rom.deim.m,
        "n": n,
        "parent": PARENT[cfg.model],
        "full_online_s": parent.wall_time,
        "rom_online_s": tr.wall_time,
        "offline_s": offline,
        "timing": ctx.timing,
    }
    write_json(out / f"metrics_{cfg.model}.json", metrics)
    print(json.dumps(metrics, sort_keys=True, default=_json_default))
    return 0


def _rom_meta(cfg, ctx):
    u, grid = ctx.inputs
    return {"energy": cfg.energy, "basis": basis_kind(cfg),
            "snapshots": {"source": PARENT[cfg.model], "count": grid.steps + 1, "t0": grid.t0,
                          "t_end": grid.t_end, "dt": grid.dt}}


def cmd_compare(cfg: ExperimentConfig, args):
    models = [m.strip() for m in args.models.split(",") if m.strip()]
    bad = [m for m in models if m not in FULL_MODELS]
    if bad or len(models) < 2:
        raise ValidationError(f"--models needs at least two of {', '.join(FULL_MODELS)}; got {args.models!r}")
    out = _outdir(cfg)
    ctx = Context(cfg)
    trs = {m: ctx.simulate(m) for m in models}
    for m, tr in trs.items():
        write_trajectory(out / f"trajectory_{m}.csv", tr, cfg.stride)
    errors = {}
    for i, a in enumerate(models):
        for b in models[i + 1:]:
            errors[f"{b}_vs_{a}"] = relative_error(trs[a].outputs, trs[b].outputs, ctx.dae.output_groups,
                                                   zero_reference="absolute")
    report = {"models": models, "errors": errors, "dimensions": ctx.dimensions(), "timing": ctx.timing,
              "wall_time": {m: tr.wall_time for m, tr in trs.items()}}
    report.update(ctx.notes)
    write_json(out / "errors.json", report)
    _merge(out, models, out / "comparison.csv")
    print(json.dumps(report, sort_keys=True, default=_json_default))
    return 0


def _read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _merge(directory, names, target):
    """Column-concatenate ``trajectory_<name>.csv`` files on a shared ``t`` column."""
    header, cols, times = ["t"], [], None
    for name in names:
        h, rows = _read_csv(Path(directory) / f"trajectory_{name}.csv")
        t = [r[0] for r in rows]
        if times is None:
            times = t
        elif t != times:
            raise ValidationError(f"trajectory_{name}.csv has a different time grid")
        header += [f"{name}:{c}" for c in h[1:]]
        cols.append([r[1:] for r in rows])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for k, t in enumerate(times or []):
        w.writerow([t] + [v for c in cols for v in c[k]])
    Path(target).write_text(buf.getvalue())


def cmd_export(args):
    d = Path(args.run_dir)
    if not d.is_dir():
        raise MissingArtifactError([str(d)])
    names = sorted(p.stem[len("trajectory_"):] for p in d.glob("trajectory_*.csv"))
    if not names:
        raise MissingArtifactError([str(d / "trajectory_*.csv")])
    order = [m for m in FULL_MODELS + REDUCED_MODELS if m in names] + [m for m in names if
                                                                       m not in FULL_MODELS + REDUCED_MODELS]
    target = Path(args.output) if args.output else d / "combined.csv"
    _merge(d, order, target)
    manifest = {"models": order, "combined": target.name, "files": {}}
    for p in sorted(d.glob("*.json")):
        if p.name == "export.json":
            continue
        try:
            manifest["files"][p.name] = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{p}: {exc.msg}") from exc
    dims = next((v["dimensions"] for v in manifest["files"].values() if isinstance(v, dict) and "dimensions" in v),
                None)
    if dims is not None:
        manifest["dimensions"] = dims
    for sub in sorted(q for q in d.iterdir() if (q / bundle.MANIFEST).is_file()):
        manifest.setdefault("bundles", {})[sub.name] = json.loads((sub / bundle.MANIFEST).read_text())
    write_json(d / "export.json", manifest)
    print(json.dumps({"combined": str(target), "models": order}))
    return 0


# --------------------------------------------------------------------------
# argument parsing


def _network_flags(p):
    g = p.add_argument_group("network")
    src = g.add_mutually_exclusive_group()
    src.add_argument("--network", help="network JSON file")
    src.add_argument("--chain", type=int, metavar="N", help="generate a chain of N pipes")
    src.add_argument("--tree", type=int, metavar="N", help="generate a random tree of N pipes")
    g.add_argument("--demands", type=int, default=1, help="demand nodes of a generated tree")
    g.add_argument("--length", type=float, default=1000.0, help="pipe length [m] (tree: mean length)")
    g.add_argument("--diameter", type=float, default=0.5, help="pipe diameter [m]")
    g.add_argument("--friction", type=float, help="friction factor lambda (default 0.01 unless --roughness)")
    g.add_argument("--roughness", type=float, help="pipe roughness [m], used when --friction is absent")
    g.add_argument("--rs", type=float, default=518.26, help="specific gas constant [J/(kg K)]")
    g.add_argument("--temperature", type=float, default=283.15, help="gas temperature [K]")
    g.add_argument("--seed", type=int, default=0)


def _scenario_flags(p):
    g = p.add_argument_group("scenario")
    g.add_argument("--scenario", help="scenario JSON file")
    g.add_argument("--supply", type=float, help="constant supply pressure [Pa] at every supply node")
    g.add_argument("--demand", help="demand signal at every demand node: VALUE, step:T,BEFORE,AFTER[,RAMP], "
                                    "pwl:T:V,T:V,..., sine:OFFSET,AMP,OMEGA[,PHASE], or list:V1,V2,... "
                                    "(one constant per demand node, in node order)")
    g.add_argument("--t0", type=float, default=0.0)
    g.add_argument("--t-end", dest="t_end", type=float)
    g.add_argument("--dt", type=float)
    g.add_argument("--init", choices=("steady", "guess"), default="steady",
                   help="initial state: steady state at u(t0), or a flow-balanced guess")
    g.add_argument("--stride", type=int, default=1, help="write every k-th time step")


def _common(p):
    p.add_argument("--out", default="run", help="output directory")
    p.add_argument("--decoupling", choices=("structured", "implicit", "explicit"), default="structured")


def build_parser():
    parser = argparse.ArgumentParser(prog="imor", description="Index-aware decoupling and model reduction.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="index, dimensions and finite spectrum")
    _network_flags(p)
    _scenario_flags(p)
    _common(p)
    p.add_argument("--pencil", nargs=2, metavar=("E.mtx", "A.mtx"), help="analyze a pencil instead of a network")
    p.add_argument("--B", help="input matrix (Matrix Market) for --pencil")
    p.add_argument("--C", help="output matrix (Matrix Market) for --pencil")
    p.add_argument("--sparsity", action="store_true", help="write sparsity patterns")
    p.add_argument("--spectrum-limit", type=int, default=1500, help="largest n for dense spectra")
    p.add_argument("--chain-limit", type=int, default=20000, help="largest n for the projector chain")

    p = sub.add_parser("decouple", help="decouple and export a Matrix Market bundle")
    _network_flags(p)
    _common(p)
    p.add_argument("--pencil", nargs=2, metavar=("E.mtx", "A.mtx"))
    p.add_argument("--B")
    p.add_argument("--C")

    p = sub.add_parser("simulate", help="simulate one full model")
    _network_flags(p)
    _scenario_flags(p)
    _common(p)
    p.add_argument("--model", choices=FULL_MODELS, default="decoupled")
    p.add_argument("--states", action="store_true", help="also write the full state trajectory")

    p = sub.add_parser("reduce", help="build and evaluate a reduced model")
    _network_flags(p)
    _scenario_flags(p)
    _common(p)
    p.add_argument("--model", choices=REDUCED_MODELS, default="ipod")
    p.add_argument("--rp", dest="r_p", type=int, help="I-POD differential basis size")
    p.add_argument("--rq", dest="r_q", type=int, help="I-POD algebraic basis size")
    p.add_argument("--r", type=int, help="DAE-POD / ODE-POD basis size")
    p.add_argument("--mf", dest="m_f", type=int, help="DEIM size (default: min(r_p, snapshot rank))")
    p.add_argument("--energy", type=float,
                   help="POD energy fraction for every size not given explicitly (default 1 - 1e-8)")
    p.add_argument("--basis", choices=("auto", "block", "plain"), default="auto",
                   help="block: separate POD per flux/pressure block; auto: block for ipod, plain otherwise")
    p.add_argument("--no-deim", dest="deim", action="store_false", help="project the nonlinearity exactly")

    p = sub.add_parser("compare", help="simulate several full models and compare outputs")
    _network_flags(p)
    _scenario_flags(p)
    _common(p)
    p.add_argument("--models", default="dae,ode,decoupled")

    p = sub.add_parser("export", help="merge the trajectories of a run directory")
    p.add_argument("run_dir")
    p.add_argument("--output", help="combined CSV path (default RUN_DIR/combined.csv)")
    return parser


def config_from_args(args) -> ExperimentConfig:
    names = {f for f in ExperimentConfig.__dataclass_fields__}
    return ExperimentConfig(**{k: v for k, v in vars(args).items() if k in names})


COMMANDS = {"analyze": cmd_analyze, "decouple": cmd_decouple, "simulate": cmd_simulate,
            "reduce": cmd_reduce, "compare": cmd_compare}


def run_experiment(cfg: ExperimentConfig, command="simulate", **extra):
    """Programmatic entry point; ``extra`` supplies subcommand-only options."""
    ns = argparse.Namespace(pencil=None, B=None, C=None, sparsity=False, spectrum_limit=1500,
                            chain_limit=20000, models="dae,ode,decoupled")
    for k, v in extra.items():
        setattr(ns, k, v)
    return COMMANDS[command](cfg, ns)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "export":
            return cmd_export(args)
        cfg = config_from_args(args)
        if args.command in ("analyze", "decouple") and getattr(args, "pencil", None):
            return COMMANDS[args.command](cfg, args)
        cfg.validate()
        return COMMANDS[args.command](cfg, args)
    except IMORError as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}
        for attr in ("line", "field", "step", "residual", "missing"):
            if getattr(exc, attr, None) is not None:
                err[attr] = getattr(exc, attr)
        print(json.dumps(err, default=_json_default), file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
