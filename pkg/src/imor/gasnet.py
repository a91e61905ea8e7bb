"""Gas transport networks as index-1 descriptor systems.

A network is a directed graph of pipes between supply, demand and interior
nodes.  Each pipe ``k`` carries the average flux ``q_+`` and the flux
difference ``q_-``; each non-supply node a pressure ``p_d``; supply nodes a
pressure ``p_s`` that is pinned to the input ``s(t)``.  With ``u = (s, d)`` the
model reads

    d/dt (|A0^T| p_d + |AS^T| p_s) = -M_L^{-1} q_-
    d/dt q_+ = M_A (A0^T p_d + AS^T p_s) + g(psi, q_+)
    0 = |A0| q_- + A0 q_+ - B_d d
    0 = p_s - s

with ``psi = |AS^T| p_s + |A0^T| p_d`` and ``g`` the friction/gravity term.
Incidence columns carry -1 at the pipe's start node and +1 at its end node.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .decouple import DescriptorSystem, Nonlinearity, _assemble_implicit
from .errors import (
    IndexNotOneError,
    NonPhysicalPressureError,
    ParseError,
    SingularMassMatrixError,
    ValidationError,
)
from .pencil import BasisPair, equilibrate, is_nonsingular, kernel_pair

GRAVITY = 9.80665
KINDS = ("supply", "demand", "interior")


@dataclass(frozen=True)
class GasProperties:
    Rs: float = 518.26
    T0: float = 283.15
    z0: float = 1.0

    @property
    def gamma0(self):
        return self.Rs * self.T0 * self.z0


@dataclass(frozen=True)
class Node:
    id: str
    kind: str
    height: float = 0.0


@dataclass(frozen=True)
class Pipe:
    id: str
    source: str
    target: str
    length: float
    diameter: float
    friction: Optional[float] = None
    roughness: Optional[float] = None
    dh: Optional[float] = None

    @property
    def area(self):
        return np.pi * self.diameter**2 / 4.0

    @property
    def friction_factor(self):
        """Given friction factor, else the rough-pipe law of Nikuradse."""
        if self.friction is not None:
            return float(self.friction)
        if self.roughness is None:
            raise ValidationError(f"pipe {self.id!r} needs a friction factor or a roughness")
        return float((2.0 * np.log10(self.diameter / self.roughness) + 1.138) ** -2)


@dataclass(frozen=True)
class GasNetwork:
    nodes: tuple
    pipes: tuple
    gas: GasProperties = field(default_factory=GasProperties)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "pipes", tuple(self.pipes))
        _validate(self)

    @property
    def node_index(self):
        return {n.id: i for i, n in enumerate(self.nodes)}

    def _ids(self, kind):
        return [n.id for n in self.nodes if n.kind == kind]

    @property
    def supply_ids(self):
        return self._ids("supply")

    @property
    def demand_ids(self):
        return self._ids("demand")

    @property
    def pressure_ids(self):
        """Non-supply nodes in ``p_d`` order."""
        return [n.id for n in self.nodes if n.kind != "supply"]

    @property
    def n_s(self):
        return len(self.supply_ids)

    @property
    def n_d(self):
        return len(self.demand_ids)

    @property
    def n_0(self):
        return len(self._ids("interior"))

    @property
    def n_E(self):
        return len(self.pipes)

    @property
    def n_v(self):
        return len(self.nodes)

    @property
    def dae_dimension(self):
        return 2 * self.n_E + self.n_v

    @property
    def is_tree(self):
        return self.n_E == self.n_v - 1

    def height_difference(self, pipe):
        if pipe.dh is not None:
            return float(pipe.dh)
        h = {n.id: n.height for n in self.nodes}
        return h[pipe.target] - h[pipe.source]


def _validate(net):
    ids = [n.id for n in net.nodes]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        raise ValidationError(f"duplicate node ids {dup}")
    pids = [p.id for p in net.pipes]
    if len(set(pids)) != len(pids):
        dup = sorted({i for i in pids if pids.count(i) > 1})
        raise ValidationError(f"duplicate pipe ids {dup}")
    for n in net.nodes:
        if n.kind not in KINDS:
            raise ValidationError(f"node {n.id!r} has unknown kind {n.kind!r}")
    known = set(ids)
    for p in net.pipes:
        if p.source not in known or p.target not in known:
            raise ValidationError(f"pipe {p.id!r} references an unknown node")
        if p.source == p.target:
            raise ValidationError(f"pipe {p.id!r} is a self-loop")
        if not (p.length > 0 and p.diameter > 0):
            raise ValidationError(f"pipe {p.id!r} needs positive length and diameter")
        if p.friction is not None and p.friction < 0:
            raise ValidationError(f"pipe {p.id!r} has negative friction factor")
        if p.roughness is not None and not 0 < p.roughness < p.diameter:
            raise ValidationError(f"pipe {p.id!r} has invalid roughness")
        p.friction_factor  # noqa: B018  (raises if neither is given)
    if not any(n.kind == "supply" for n in net.nodes):
        raise ValidationError("network has no supply node")
    if not any(n.kind == "demand" for n in net.nodes):
        raise ValidationError("network has no demand node")
    idx = {i: k for k, i in enumerate(ids)}
    rows = [idx[p.source] for p in net.pipes]
    cols = [idx[p.target] for p in net.pipes]
    G = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(ids), len(ids)))
    ncomp, _ = connected_components(G, directed=False)
    if ncomp != 1:
        raise ValidationError(f"network graph is disconnected ({ncomp} components)")
    if net.gas.Rs <= 0 or net.gas.T0 <= 0 or net.gas.z0 <= 0:
        raise ValidationError("gas constants must be positive")


# --------------------------------------------------------------------------
# file format


def _line_of(text, needle):
    for k, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return k
    return None


def _num(obj, key, where, text, required=True, default=None):
    if key not in obj:
        if required:
            raise ParseError(f"{where}: missing field", line=_line_of(text, where.split(" ")[-1]), field=key)
        return default
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ParseError(f"{where}: expected a number", line=_line_of(text, f'"{key}"'), field=key)
    return float(v)


def parse_network(text):
    """Network from JSON text.

    ``{gas: {Rs, T0, z0}, nodes: [{id, kind, height}],
    pipes: [{id, from, to, length, diameter, lambda | roughness, dh?}]}``
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line=exc.lineno) from exc
    if not isinstance(doc, dict):
        raise ParseError("network document must be a JSON object")
    g = doc.get("gas", {})
    if not isinstance(g, dict):
        raise ParseError("expected an object", field="gas")
    gas = GasProperties(
        Rs=_num(g, "Rs", "gas", text, False, 518.26),
        T0=_num(g, "T0", "gas", text, False, 283.15),
        z0=_num(g, "z0", "gas", text, False, 1.0),
    )
    for key in ("nodes", "pipes"):
        if not isinstance(doc.get(key), list):
            raise ParseError("expected a list", field=key)

    nodes, seen = [], set()
    for k, nd in enumerate(doc["nodes"]):
        if not isinstance(nd, dict) or "id" not in nd:
            raise ParseError(f"node #{k} needs an id", field=f"nodes[{k}]")
        nid = str(nd["id"])
        line = _line_of(text, f'"{nd["id"]}"')
        if nid in seen:
            raise ParseError(f"duplicate node id {nid!r}", line=line, field="id")
        seen.add(nid)
        kind = nd.get("kind", "interior")
        if kind not in KINDS:
            raise ParseError(f"node {nid!r}: kind must be one of {KINDS}", line=line, field="kind")
        nodes.append(Node(nid, kind, _num(nd, "height", f"node {nid}", text, False, 0.0)))

    pipes, seen = [], set()
    for k, pd in enumerate(doc["pipes"]):
        if not isinstance(pd, dict) or "id" not in pd:
            raise ParseError(f"pipe #{k} needs an id", field=f"pipes[{k}]")
        pid = str(pd["id"])
        line = _line_of(text, f'"{pd["id"]}"')
        if pid in seen:
            raise ParseError(f"duplicate pipe id {pid!r}", line=line, field="id")
        seen.add(pid)
        for key in ("from", "to"):
            if key not in pd:
                raise ParseError(f"pipe {pid!r}: missing field", line=line, field=key)
        where = f"pipe {pid}"
        lam = _num(pd, "lambda", where, text, False)
        rough = _num(pd, "roughness", where, text, False)
        if lam is None and rough is None:
            raise ParseError(f"pipe {pid!r}: give 'lambda' or 'roughness'", line=line, field="lambda")
        pipes.append(
            Pipe(
                pid,
                str(pd["from"]),
                str(pd["to"]),
                _num(pd, "length", where, text),
                _num(pd, "diameter", where, text),
                lam,
                rough,
                _num(pd, "dh", where, text, False),
            )
        )
    return GasNetwork(tuple(nodes), tuple(pipes), gas)


def network_to_json(net: GasNetwork):
    pipes = []
    for p in net.pipes:
        d = {"id": p.id, "from": p.source, "to": p.target, "length": p.length, "diameter": p.diameter}
        if p.friction is not None:
            d["lambda"] = p.friction
        if p.roughness is not None:
            d["roughness"] = p.roughness
        if p.dh is not None:
            d["dh"] = p.dh
        pipes.append(d)
    return {
        "gas": {"Rs": net.gas.Rs, "T0": net.gas.T0, "z0": net.gas.z0},
        "nodes": [{"id": n.id, "kind": n.kind, "height": n.height} for n in net.nodes],
        "pipes": pipes,
    }


# --------------------------------------------------------------------------
# generators and refinement


def chain_network(n_pipes, length=1000.0, diameter=0.5, friction=None, roughness=None,
                  gas: Optional[GasProperties] = None, slope=0.0):
    """Supply -> interior ... -> demand chain of ``n_pipes`` equal pipes."""
    if n_pipes < 1:
        raise ValidationError("a chain needs at least one pipe")
    if friction is None and roughness is None:
        friction = 0.0
    ids = ["s0"] + [f"n{k}" for k in range(1, n_pipes)] + [f"d{n_pipes}"]
    kinds = ["supply"] + ["interior"] * (n_pipes - 1) + ["demand"]
    nodes = tuple(Node(i, k, slope * length * j) for j, (i, k) in enumerate(zip(ids, kinds)))
    pipes = tuple(
        Pipe(f"p{k + 1}", ids[k], ids[k + 1], length, diameter, friction, roughness) for k in range(n_pipes)
    )
    return GasNetwork(nodes, pipes, gas or GasProperties())


def tree_network(n_pipes, n_demand, seed=0, length=(500.0, 1500.0), diameter=0.5, friction=0.01,
                 gas: Optional[GasProperties] = None, max_tries=10000):
    """Random tree rooted at one supply node, with ``n_demand`` demand leaves.

    Internal nodes form a random recursive tree; every leaf is a demand node.
    Pipes point away from the supply.
    """
    n_internal = n_pipes - n_demand
    if n_demand < 1 or n_internal < 0:
        raise ValidationError("need 1 <= n_demand <= n_pipes")
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        parent = [-1] + [int(rng.integers(0, i)) for i in range(1, n_internal + 1)]
        has_child = np.zeros(n_internal + 1, dtype=bool)
        has_child[[p for p in parent[1:]]] = True
        childless = [i for i in range(1, n_internal + 1) if not has_child[i]]
        if n_internal == 0:
            childless = []
        if len(childless) > n_demand or (n_internal == 0 and n_demand < 1):
            continue
        extra = n_demand - len(childless)
        hosts = childless + [int(h) for h in rng.integers(0, n_internal + 1, size=extra)]
        rng.shuffle(hosts)
        break
    else:
        raise ValidationError("could not draw a tree with the requested leaf count")

    lo, hi = (length, length) if np.isscalar(length) else length
    ids = ["s0"] + [f"n{i}" for i in range(1, n_internal + 1)] + [f"d{j + 1}" for j in range(n_demand)]
    kinds = ["supply"] + ["interior"] * n_internal + ["demand"] * n_demand
    nodes = tuple(Node(i, k) for i, k in zip(ids, kinds))
    edges = [(parent[i], i) for i in range(1, n_internal + 1)]
    edges += [(h, n_internal + 1 + j) for j, h in enumerate(hosts)]
    pipes = tuple(
        Pipe(f"p{k + 1}", ids[a], ids[b], float(rng.uniform(lo, hi)), diameter, friction)
        for k, (a, b) in enumerate(edges)
    )
    return GasNetwork(nodes, pipes, gas or GasProperties())


def refine_network(net: GasNetwork, segments_per_pipe=1):
    """Split pipes into equal segments joined by new interior nodes.

    ``segments_per_pipe`` is a count for all pipes or a ``{pipe_id: count}``
    mapping (unlisted pipes keep one segment).
    """
    if isinstance(segments_per_pipe, dict):
        unknown = set(segments_per_pipe) - {p.id for p in net.pipes}
        if unknown:
            raise ValidationError(f"unknown pipes {sorted(unknown)}")
        seg = {p.id: int(segments_per_pipe.get(p.id, 1)) for p in net.pipes}
    else:
        seg = {p.id: int(segments_per_pipe) for p in net.pipes}
    if min(seg.values()) < 1:
        raise ValidationError("segments_per_pipe must be >= 1")
    if all(s == 1 for s in seg.values()):
        return net
    heights = {n.id: n.height for n in net.nodes}
    nodes, pipes = list(net.nodes), []
    for p in net.pipes:
        s = seg[p.id]
        if s == 1:
            pipes.append(p)
            continue
        h0, h1 = heights[p.source], heights[p.target]
        dh = net.height_difference(p)
        chain = [p.source]
        for j in range(1, s):
            nid = f"{p.id}.n{j}"
            # heights follow the pipe's own height profile
            nodes.append(Node(nid, "interior", h0 + dh * j / s if p.dh is not None else h0 + (h1 - h0) * j / s))
            chain.append(nid)
        chain.append(p.target)
        for j in range(s):
            pipes.append(
                Pipe(f"{p.id}.{j + 1}", chain[j], chain[j + 1], p.length / s, p.diameter,
                     p.friction, p.roughness, None if p.dh is None else p.dh / s)
            )
    return GasNetwork(tuple(nodes), tuple(pipes), net.gas)


# --------------------------------------------------------------------------
# incidence and physics


@dataclass(frozen=True)
class IncidenceSet:
    A_S: sp.csr_matrix
    A_0: sp.csr_matrix
    B_d: sp.csr_matrix

    @property
    def abs_S(self):
        return abs(self.A_S)

    @property
    def abs_0(self):
        return abs(self.A_0)


def incidence_matrices(net: GasNetwork) -> IncidenceSet:
    sup = {i: k for k, i in enumerate(net.supply_ids)}
    rest = {i: k for k, i in enumerate(net.pressure_ids)}
    si, sj, sv, ri, rj, rv = [], [], [], [], [], []
    for k, p in enumerate(net.pipes):
        for node, sign in ((p.source, -1.0), (p.target, 1.0)):
            if node in sup:
                si.append(sup[node]), sj.append(k), sv.append(sign)
            else:
                ri.append(rest[node]), rj.append(k), rv.append(sign)
    n_E = net.n_E
    A_S = sp.csr_matrix((sv, (si, sj)), shape=(net.n_s, n_E))
    A_0 = sp.csr_matrix((rv, (ri, rj)), shape=(len(rest), n_E))
    dem = net.demand_ids
    B_d = sp.csr_matrix((np.ones(len(dem)), ([rest[d] for d in dem], np.arange(len(dem)))),
                        shape=(len(rest), len(dem)))
    return IncidenceSet(A_S, A_0, B_d)


@dataclass(frozen=True)
class PipeCoefficients:
    """Per-pipe constants of ``g = -a psi - b q|q| / psi``."""

    a: np.ndarray
    b: np.ndarray


def pipe_coefficients(net: GasNetwork) -> PipeCoefficients:
    g0 = net.gas.gamma0
    A = np.array([p.area for p in net.pipes])
    L = np.array([p.length for p in net.pipes])
    D = np.array([p.diameter for p in net.pipes])
    lam = np.array([p.friction_factor for p in net.pipes])
    dh = np.array([net.height_difference(p) for p in net.pipes])
    return PipeCoefficients(GRAVITY * A / (2.0 * g0) * dh / L, lam * g0 / (4.0 * D * A))


def _check_psi(psi):
    if np.any(~(psi > 0)):
        k = int(np.argmin(np.where(np.isnan(psi), -np.inf, psi)))
        raise NonPhysicalPressureError(f"pressure sum psi[{k}] = {psi[k]:.6g} is not positive")


def eval_friction_gravity(q_plus, psi, net_or_coeffs):
    """Friction and gravity source term per pipe."""
    c = net_or_coeffs if isinstance(net_or_coeffs, PipeCoefficients) else pipe_coefficients(net_or_coeffs)
    q = np.asarray(q_plus, dtype=float)
    psi = np.asarray(psi, dtype=float)
    _check_psi(psi)
    return -c.a * psi - c.b * q * np.abs(q) / psi


def friction_gravity_derivatives(q_plus, psi, coeffs: PipeCoefficients):
    """``(dg/dpsi, dg/dq)``."""
    q = np.asarray(q_plus, dtype=float)
    psi = np.asarray(psi, dtype=float)
    _check_psi(psi)
    return -coeffs.a + coeffs.b * q * np.abs(q) / psi**2, -2.0 * coeffs.b * np.abs(q) / psi


class GasNonlinearity(Nonlinearity):
    """``f(z)`` with ``g`` in rows ``out_offset + k``; ``psi_k = z[psi_offset + k]``,
    ``q_k = z[q_offset + k]``."""

    def __init__(self, size, coeffs: PipeCoefficients, out_offset, psi_offset, q_offset, z_size=None):
        self.size = int(size)
        self.z_size = self.size if z_size is None else int(z_size)
        self.coeffs = coeffs
        self.n_E = coeffs.a.size
        self.out_offset, self.psi_offset, self.q_offset = out_offset, psi_offset, q_offset
        self.evaluations = 0  # rows evaluated, for cost accounting

    def _split(self, z):
        z = np.asarray(z, dtype=float)
        m = self.n_E
        return z[self.q_offset:self.q_offset + m], z[self.psi_offset:self.psi_offset + m]

    def __call__(self, z):
        q, psi = self._split(z)
        out = np.zeros(self.size)
        out[self.out_offset:self.out_offset + self.n_E] = eval_friction_gravity(q, psi, self.coeffs)
        self.evaluations += self.n_E
        return out

    def jacobian(self, z):
        q, psi = self._split(z)
        dpsi, dq = friction_gravity_derivatives(q, psi, self.coeffs)
        k = np.arange(self.n_E)
        rows = np.concatenate([k, k]) + self.out_offset
        cols = np.concatenate([k + self.psi_offset, k + self.q_offset])
        return sp.csr_matrix((np.concatenate([dpsi, dq]), (rows, cols)), shape=(self.size, self.z_size))

    @property
    def active_rows(self):
        return np.arange(self.out_offset, self.out_offset + self.n_E)

    def restrict(self, rows):
        return _GasRestriction(self, np.asarray(rows, dtype=int))


class _GasRestriction:
    """Rows of a :class:`GasNonlinearity`; ``z_deps`` is ``(psi_K, q_K)``."""

    def __init__(self, f: GasNonlinearity, rows):
        k = rows - f.out_offset
        if np.any((k < 0) | (k >= f.n_E)):
            raise ValidationError("restriction rows must lie in the active block")
        self.f = f
        self.rows = rows
        self.coeffs = PipeCoefficients(f.coeffs.a[k], f.coeffs.b[k])
        self.deps = np.concatenate([k + f.psi_offset, k + f.q_offset])
        self._m = k.size

    def __call__(self, z_deps):
        self.f.evaluations += self._m
        return eval_friction_gravity(z_deps[self._m:], z_deps[:self._m], self.coeffs)

    def jacobian(self, z_deps):
        dpsi, dq = friction_gravity_derivatives(z_deps[self._m:], z_deps[:self._m], self.coeffs)
        return np.hstack([np.diag(dpsi), np.diag(dq)])


# --------------------------------------------------------------------------
# assembled models


def mass_matrices(net: GasNetwork, c_cal=1.0):
    """``(M_L, M_A)`` as sparse diagonals."""
    g0 = net.gas.gamma0
    A = np.array([p.area for p in net.pipes])
    L = np.array([p.length for p in net.pipes])
    return sp.diags(L * A / g0).tocsr(), sp.diags(-c_cal * A / L).tocsr()


def _output_groups(net):
    return {"mass_flow": np.arange(net.n_s), "pressure": np.arange(net.n_s, net.n_s + net.n_d)}


@dataclass(frozen=True, kw_only=True)
class GasDAE(DescriptorSystem):
    network: GasNetwork
    incidence: IncidenceSet
    M_L: object
    M_A: object

    @property
    def blocks(self):
        """Index ranges of ``(q_-, q_+, p_d, p_s)``."""
        e, v, s = self.network.n_E, self.network.n_v, self.network.n_s
        return {
            "q_minus": np.arange(0, e),
            "q_plus": np.arange(e, 2 * e),
            "p_d": np.arange(2 * e, 2 * e + v - s),
            "p_s": np.arange(2 * e + v - s, 2 * e + v),
        }

    @property
    def output_groups(self):
        return _output_groups(self.network)

    @property
    def E13(self):
        e = self.network.n_E
        return self.E[:e, 2 * e:]

    def initial_guess(self, s, d):
        """Flow balance with ``q_- = 0`` and pressures set to the mean supply."""
        inc, net = self.incidence, self.network
        s, d = np.atleast_1d(s).astype(float), np.atleast_1d(d).astype(float)
        rhs = inc.B_d @ d
        if net.is_tree:
            q = spla.spsolve(inc.A_0.tocsc(), rhs) if inc.A_0.shape[0] == inc.A_0.shape[1] else \
                spla.lsqr(inc.A_0, rhs, atol=1e-14, btol=1e-14)[0]
        else:
            q = spla.lsqr(inc.A_0, rhs, atol=1e-14, btol=1e-14)[0]
        x = np.zeros(self.n)
        b = self.blocks
        x[b["q_plus"]] = q
        x[b["p_d"]] = s.mean()
        x[b["p_s"]] = s
        return x

    def to_ode_state(self, x):
        b = self.blocks
        return np.concatenate([x[b["p_d"]], x[b["q_plus"]]])


def assemble_dae(net: GasNetwork, c_cal=1.0) -> GasDAE:
    inc = incidence_matrices(net)
    n_E, n_s = net.n_E, net.n_s
    n_r = net.n_v - n_s
    M_L, M_A = mass_matrices(net, c_cal)
    I_E = sp.identity(n_E, format="csr")
    Z = lambda r, c: sp.csr_matrix((r, c))  # noqa: E731
    aS, a0 = inc.abs_S, inc.abs_0
    E = sp.bmat([
        [Z(n_E, n_E), Z(n_E, n_E), a0.T, aS.T],
        [Z(n_E, n_E), I_E, Z(n_E, n_r), Z(n_E, n_s)],
        [Z(n_r, n_E), Z(n_r, n_E), Z(n_r, n_r), Z(n_r, n_s)],
        [Z(n_s, n_E), Z(n_s, n_E), Z(n_s, n_r), Z(n_s, n_s)],
    ], format="csr")
    A = sp.bmat([
        [-sp.diags(1.0 / M_L.diagonal()), None, Z(n_E, n_r), Z(n_E, n_s)],
        [None, Z(n_E, n_E), M_A @ inc.A_0.T, M_A @ inc.A_S.T],
        [a0, inc.A_0, Z(n_r, n_r), Z(n_r, n_s)],
        [Z(n_s, n_E), Z(n_s, n_E), Z(n_s, n_r), sp.identity(n_s)],
    ], format="csr")
    m_d = net.n_d
    B = -sp.bmat([
        [Z(n_E, n_s), Z(n_E, m_d)],
        [Z(n_E, n_s), Z(n_E, m_d)],
        [Z(n_r, n_s), inc.B_d],
        [sp.identity(n_s), Z(n_s, m_d)],
    ], format="csr")
    C = sp.bmat([
        [Z(n_s, n_E), aS, Z(n_s, n_r), Z(n_s, n_s)],
        [Z(m_d, n_E), Z(m_d, n_E), inc.B_d.T, Z(m_d, n_s)],
    ], format="csr")
    n = 2 * n_E + net.n_v
    f = GasNonlinearity(n, pipe_coefficients(net), out_offset=n_E, psi_offset=0, q_offset=n_E)
    return GasDAE(E, A, B, C, f, network=net, incidence=inc, M_L=M_L, M_A=M_A)


@dataclass(frozen=True)
class GasODE:
    """Index-reduced model in ``(p_d, q_+)``.

    ``input_rate`` multiplies ``du/dt``; the nonlinearity acts on
    ``z = K x + S u = (psi, q_+)``.
    """

    mass: object
    A: object
    B: object
    C: object
    input_rate: object
    f: GasNonlinearity
    K: object
    S: object
    network: GasNetwork
    incidence: IncidenceSet
    is_linear: bool = False

    @property
    def n(self):
        return self.mass.shape[0]

    @property
    def output_groups(self):
        return _output_groups(self.network)

    @property
    def blocks(self):
        """Index ranges of ``(p_d, q_+)``."""
        n_r = self.n - self.network.n_E
        return {"p_d": np.arange(n_r), "q_plus": np.arange(n_r, self.n)}

    def nonlinear(self, x, u):
        return self.f(self.K @ x + self.S @ u)

    def nonlinear_jacobian(self, x, u):
        return (self.f.jacobian(self.K @ x + self.S @ u) @ self.K).tocsr()

    def output(self, x):
        return np.asarray(self.C @ x).ravel()


def assemble_ode(net: GasNetwork, c_cal=1.0) -> GasODE:
    inc = incidence_matrices(net)
    M_L, M_A = mass_matrices(net, c_cal)
    a0, aS = inc.abs_0, inc.abs_S
    n_r, n_E, n_s, m_d = inc.A_0.shape[0], net.n_E, net.n_s, net.n_d
    K = (a0 @ M_L @ a0.T).tocsc()
    if not is_nonsingular(K, tol=1e-12, method="lu"):
        raise SingularMassMatrixError("|A0| M_L |A0^T| is singular")
    mass = sp.block_diag([K, sp.identity(n_E)], format="csr")
    A = sp.bmat([[sp.csr_matrix((n_r, n_r)), inc.A_0], [M_A @ inc.A_0.T, sp.csr_matrix((n_E, n_E))]], format="csr")
    B = sp.bmat([
        [sp.csr_matrix((n_r, n_s)), -inc.B_d],
        [M_A @ inc.A_S.T, sp.csr_matrix((n_E, m_d))],
    ], format="csr")
    rate = sp.bmat([
        [-(a0 @ M_L @ aS.T), sp.csr_matrix((n_r, m_d))],
        [sp.csr_matrix((n_E, n_s)), sp.csr_matrix((n_E, m_d))],
    ], format="csr")
    C = sp.bmat([[sp.csr_matrix((n_s, n_r)), aS], [inc.B_d.T, sp.csr_matrix((m_d, n_E))]], format="csr")
    K = sp.block_diag([a0.T, sp.identity(n_E)], format="csr")
    S = sp.bmat([[aS.T, sp.csr_matrix((n_E, m_d))], [sp.csr_matrix((n_E, n_s)), sp.csr_matrix((n_E, m_d))]],
                format="csr")
    f = GasNonlinearity(n_r + n_E, pipe_coefficients(net), out_offset=n_r, psi_offset=0, q_offset=n_E,
                        z_size=2 * n_E)
    return GasODE(mass, A, B, C, rate, f, K, S, net, inc)


# --------------------------------------------------------------------------
# structured decoupling


def _stack_rows(*blocks):
    return sp.vstack(blocks, format="csr")


def structured_decouple(dae: GasDAE, tol=1e-10, method="lu"):
    """Implicit decoupling from the block structure of the gas model.

    Only ``Ker E13`` and a kernel of a ``k_q``-row matrix are computed; all
    other bases are read off the blocks.
    """
    net = dae.network
    n_E, n_v, n_s = net.n_E, net.n_v, net.n_s
    n = dae.n
    E13 = dae.E13.tocsr()
    qb, pb = kernel_pair(E13, tol=tol, method=method)
    q, ql = sp.csr_matrix(qb.basis), sp.csr_matrix(qb.left_inverse)
    p, pl = sp.csr_matrix(pb.basis), sp.csr_matrix(pb.left_inverse)
    k_q, k_p = q.shape[1], p.shape[1]

    # orient each kernel column so its supply entries sum to >= 0
    sign = np.sign(np.asarray(q[n_v - n_s:].sum(axis=0)).ravel())
    sign[sign == 0] = 1.0
    D = sp.diags(sign)
    q, ql = (q @ D).tocsr(), (D @ ql).tocsr()

    I_E = sp.identity(n_E, format="csr")
    Z = lambda r, c: sp.csr_matrix((r, c))  # noqa: E731
    q0 = sp.bmat([[I_E, Z(n_E, k_q)], [Z(n_E, n_E), Z(n_E, k_q)], [Z(n_v, n_E), q]], format="csr")
    q0l = sp.bmat([[I_E, Z(n_E, n_E), Z(n_E, n_v)], [Z(k_q, n_E), Z(k_q, n_E), ql]], format="csr")
    p0 = sp.bmat([[Z(n_E, n_E), Z(n_E, k_p)], [I_E, Z(n_E, k_p)], [Z(n_v, n_E), p]], format="csr")
    p0l = sp.bmat([[Z(n_E, n_E), I_E, Z(n_E, n_v)], [Z(k_p, n_E), Z(k_p, n_E), pl]], format="csr")
    q0b, p0b = BasisPair(q0, q0l), BasisPair(p0, p0l)

    E0, A0 = dae.E, dae.A
    Q0 = (q0 @ q0l).tocsr()
    E1 = (E0 - A0 @ Q0).tocsc()
    if not is_nonsingular(E1, tol=tol, method="lu"):
        raise IndexNotOneError("E1 is singular: the gas DAE is not of index 1")

    # q_hat = [[K, 0], [0, 0], [0, I]] with K spanning Ker E13^T
    Kb, _ = kernel_pair(E13.T.tocsr(), tol=tol, method=method)
    K = sp.csr_matrix(Kb.basis)
    k = K.shape[1]
    q_hat = sp.bmat([[K, Z(n_E, n_v)], [Z(n_E, k), Z(n_E, n_v)], [Z(n_v, k), sp.identity(n_v)]], format="csr")

    # p_hat: y1 = M_L A31^T y3, (y2, y3) in Ker q^T [A23^T, A33^T]
    A23 = A0[n_E:2 * n_E, 2 * n_E:]
    A31 = A0[2 * n_E:, :n_E]
    A33 = A0[2 * n_E:, 2 * n_E:]
    G = (q.T @ sp.hstack([A23.T, A33.T])).tocsr()
    Yb, _ = kernel_pair(G, tol=tol, method=method)
    Y = sp.csr_matrix(Yb.basis)
    Y2, Y3 = Y[:n_E], Y[n_E:]
    p_hat = _stack_rows(dae.M_L @ A31.T @ Y3, Y2, Y3)
    if q_hat.shape[1] != q0.shape[1] or p_hat.shape[1] != p0.shape[1]:
        raise IndexNotOneError("hat bases do not match the subsystem dimensions")

    dec = _assemble_implicit(dae, E0, A0, p0b, q0b, p_hat, q_hat, E1=E1, tol=tol)
    return replace(
        dec,
        blocks_p={"q_plus": np.arange(n_E), "pressure": np.arange(n_E, n_E + k_p)},
        blocks_q={"q_minus": np.arange(n_E), "pressure": np.arange(n_E, n_E + k_q)},
    )


def structured_dimensions(net: GasNetwork, tol=1e-10):
    """``(n, n_p, n_q, n_ode)`` without assembling the decoupled system."""
    inc = incidence_matrices(net)
    E13 = sp.hstack([inc.abs_0.T, inc.abs_S.T]).tocsr()
    qb, _ = kernel_pair(E13, tol=tol, method="lu")
    k_q = qb.dim
    n_E, n_v = net.n_E, net.n_v
    return {"n": 2 * n_E + n_v, "n_p": n_E + n_v - k_q, "n_q": n_E + k_q, "n_ode": n_v - net.n_s + n_E,
            "k_q": k_q, "k_p": n_v - k_q}
