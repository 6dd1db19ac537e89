"""Power-system case files and the bus admittance matrix.

Input is a strict subset of the MATPOWER case format: a ``function``
header, ``mpc.version``, ``mpc.baseMVA`` and the ``bus``, ``gen``,
``branch`` and ``gencost`` matrices, plus ``%`` comments.  Any other
statement is rejected.  Quantities are stored in per-unit on the system
base, angles in radians, and cost coefficients apply to per-unit active
power.

Column conventions handled on input:

* bus: the 13 standard columns; type 4 (isolated) is rejected.
* gen: the first 10 columns are used, the ramp/capability columns of the
  21-column layout are accepted and ignored.  Out-of-service units are
  dropped together with their cost rows.  At most one in-service unit per
  bus is supported.
* branch: 11 or 13 columns.  ``ratio = 0`` means nominal tap,
  ``rateA = 0`` means unconstrained, out-of-service branches are dropped.
  Angle-difference bounds at the usual ``+-360`` (or ``0``) sentinels,
  or missing, default to ``+-pi/3``.
* gencost: polynomial model 2 of degree at most two.
"""

from __future__ import annotations

import dataclasses
import json
import math
import re
from importlib import resources
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateBranch, ParseError, ValidationError

DEFAULT_ANGLE_LIMIT = math.pi / 3
SLACK, PV, PQ = "slack", "PV", "PQ"
_BUS_TYPES = {1: PQ, 2: PV, 3: SLACK}
_BUS_CODES = {v: k for k, v in _BUS_TYPES.items()}


@dataclasses.dataclass(frozen=True)
class Bus:
    index: int
    type: str
    Pd: float
    Qd: float
    Vmin: float
    Vmax: float
    Gs: float = 0.0
    Bs: float = 0.0


@dataclasses.dataclass(frozen=True)
class Gen:
    bus: int
    Pmin: float
    Pmax: float
    Qmin: float
    Qmax: float
    c2: float = 0.0
    c1: float = 0.0
    c0: float = 0.0


@dataclasses.dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_sh: float = 0.0
    tap: float = 1.0
    shift: float = 0.0
    Smax: float = 0.0
    theta_min: float = -DEFAULT_ANGLE_LIMIT
    theta_max: float = DEFAULT_ANGLE_LIMIT


@dataclasses.dataclass(frozen=True)
class NetworkCase:
    """Validated per-unit network.

    Buses are kept in file order; ``bus_pos`` maps an external bus id to
    its contiguous 0-based position, which every matrix uses.
    """

    base_mva: float
    buses: tuple[Bus, ...]
    gens: tuple[Gen, ...]
    branches: tuple[Branch, ...]
    ref_bus: int
    name: str = "case"

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "gens", tuple(self.gens))
        object.__setattr__(self, "branches", tuple(self.branches))
        _validate(self)

    @property
    def n(self) -> int:
        return len(self.buses)

    @property
    def bus_pos(self) -> dict[int, int]:
        return {b.index: k for k, b in enumerate(self.buses)}

    @property
    def ref_pos(self) -> int:
        return self.bus_pos[self.ref_bus]

    def branch_ends(self) -> tuple[np.ndarray, np.ndarray]:
        pos = self.bus_pos
        f = np.array([pos[br.from_bus] for br in self.branches], dtype=int)
        t = np.array([pos[br.to_bus] for br in self.branches], dtype=int)
        return f, t

    def gen_pos(self) -> np.ndarray:
        """Bus position of each generator."""
        pos = self.bus_pos
        return np.array([pos[g.bus] for g in self.gens], dtype=int)

    def bus_gen(self) -> list[Gen | None]:
        """Generator attached to each bus position, or ``None``."""
        out: list[Gen | None] = [None] * self.n
        for g, k in zip(self.gens, self.gen_pos()):
            out[k] = g
        return out

    def bus_limits(self) -> dict[str, np.ndarray]:
        """Per-bus generation limits and costs; zero where no generator."""
        keys = ("Pmin", "Pmax", "Qmin", "Qmax", "c2", "c1", "c0")
        out = {k: np.zeros(self.n) for k in keys}
        for g, k in zip(self.gens, self.gen_pos()):
            for key in keys:
                out[key][k] = getattr(g, key)
        out["has_gen"] = np.zeros(self.n, dtype=bool)
        out["has_gen"][self.gen_pos()] = True
        return out

    def demand(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.array([b.Pd for b in self.buses]), np.array([b.Qd for b in self.buses]))

    def vlimits(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.array([b.Vmin for b in self.buses]), np.array([b.Vmax for b in self.buses]))

    def cost(self, Pg: np.ndarray) -> float:
        """Generation cost of a per-generator dispatch."""
        Pg = np.asarray(Pg, dtype=float)
        c2 = np.array([g.c2 for g in self.gens])
        c1 = np.array([g.c1 for g in self.gens])
        c0 = np.array([g.c0 for g in self.gens])
        return float(np.sum(c2 * Pg**2 + c1 * Pg + c0))

    # serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": "opfbound.case",
            "version": 1,
            "name": self.name,
            "base_mva": self.base_mva,
            "ref_bus": self.ref_bus,
            "buses": [dataclasses.asdict(b) for b in self.buses],
            "gens": [dataclasses.asdict(g) for g in self.gens],
            "branches": [dataclasses.asdict(br) for br in self.branches],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> NetworkCase:
        if d.get("format") != "opfbound.case":
            raise ParseError("not a serialized network case")
        try:
            return cls(
                base_mva=float(d["base_mva"]),
                buses=tuple(Bus(**b) for b in d["buses"]),
                gens=tuple(Gen(**g) for g in d["gens"]),
                branches=tuple(Branch(**br) for br in d["branches"]),
                ref_bus=int(d["ref_bus"]),
                name=d.get("name", "case"),
            )
        except (KeyError, TypeError) as exc:
            raise ParseError(f"malformed case record: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> NetworkCase:
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc}") from exc
        return cls.from_dict(d)


def _validate(case: NetworkCase) -> None:
    if not case.base_mva > 0:
        raise ValidationError("baseMVA must be positive")
    if not case.buses:
        raise ValidationError("case has no buses")
    ids = [b.index for b in case.buses]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate bus ids")
    slack = [b.index for b in case.buses if b.type == SLACK]
    if len(slack) != 1:
        raise ValidationError(f"expected exactly one slack bus, found {len(slack)}")
    if case.ref_bus != slack[0]:
        raise ValidationError("ref_bus must be the slack bus")
    for b in case.buses:
        if b.type not in _BUS_CODES:
            raise ValidationError(f"bus {b.index}: unknown type {b.type!r}")
        if not (0 <= b.Vmin <= b.Vmax):
            raise ValidationError(f"bus {b.index}: need 0 <= Vmin <= Vmax")
    known = set(ids)
    seen = set()
    for g in case.gens:
        if g.bus not in known:
            raise ValidationError(f"generator at unknown bus {g.bus}")
        if g.bus in seen:
            raise ValidationError(f"bus {g.bus}: more than one in-service generator")
        seen.add(g.bus)
        if g.Pmin > g.Pmax or g.Qmin > g.Qmax:
            raise ValidationError(f"generator at bus {g.bus}: inconsistent limits")
        if g.c2 < 0:
            raise ValidationError(f"generator at bus {g.bus}: negative quadratic cost")
    for br in case.branches:
        if br.from_bus not in known or br.to_bus not in known:
            raise ValidationError(f"branch {br.from_bus}-{br.to_bus} references an unknown bus")
        if br.from_bus == br.to_bus:
            raise ValidationError(f"branch {br.from_bus}-{br.to_bus} is a self-loop")
        if not (br.theta_min <= 0.0 <= br.theta_max):
            raise ValidationError(f"branch {br.from_bus}-{br.to_bus}: need theta_min <= 0 <= theta_max")
        if max(-br.theta_min, br.theta_max) >= math.pi / 2:
            raise ValidationError(f"branch {br.from_bus}-{br.to_bus}: angle bounds must lie inside (-90, 90) degrees")
        if br.Smax < 0 or br.tap <= 0:
            raise ValidationError(f"branch {br.from_bus}-{br.to_bus}: invalid rating or tap")


# ---------------------------------------------------------------------------
# MATPOWER text


_STMT_SCALAR = re.compile(r"^mpc\.(baseMVA|version)\s*=\s*(.+)$", re.DOTALL)
_STMT_MATRIX = re.compile(r"^mpc\.(bus|gen|branch|gencost)\s*=\s*\[(.*)\]$", re.DOTALL)
_FUNC = re.compile(r"^function\s+mpc\s*=\s*([A-Za-z_]\w*)$")


def _strip_comments(text: str) -> str:
    out = []
    for line in text.splitlines():
        # the only quoted literal in the subset is the version string
        cut = line.find("%")
        out.append(line if cut < 0 else line[:cut])
    return "\n".join(out)


def _statements(text: str):
    """Split into ``;``-terminated statements, keeping matrix bodies whole."""
    stmts = []
    buf = []
    depth = 0
    for ch in text:
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
            if depth < 0:
                raise ParseError("unbalanced ']'")
        if ch == ";" and depth == 0:
            stmts.append("".join(buf).strip())
            buf = []
        elif ch == "\n" and depth == 0:
            piece = "".join(buf).strip()
            if piece.startswith("function"):
                stmts.append(piece)
                buf = []
            else:
                buf.append(" ")
        else:
            buf.append(ch)
    if depth != 0:
        raise ParseError("unterminated matrix block")
    tail = "".join(buf).strip()
    if tail:
        raise ParseError(f"statement without terminating ';': {tail[:40]!r}")
    return [s for s in stmts if s]


def _parse_matrix(body: str, name: str) -> list[list[float]]:
    rows = []
    for raw in re.split(r"[;\n]", body):
        raw = raw.strip()
        if not raw:
            continue
        toks = [t for t in re.split(r"[\s,]+", raw) if t]
        try:
            rows.append([float(t) for t in toks])
        except ValueError as exc:
            raise ParseError(f"mpc.{name}: malformed number in row {raw!r}") from exc
    return rows


def parse_case(text: str, name: str = "case") -> NetworkCase:
    """Parse MATPOWER-format text into a per-unit :class:`NetworkCase`."""
    stmts = _statements(_strip_comments(text))
    data: dict[str, object] = {}
    for st in stmts:
        m = _FUNC.match(st)
        if m:
            name = m.group(1)
            continue
        m = _STMT_SCALAR.match(st)
        if m:
            key, val = m.group(1), m.group(2).strip()
            if key == "version":
                if val.strip("'\"") != "2":
                    raise ParseError(f"unsupported case version {val}")
            else:
                try:
                    data["baseMVA"] = float(val)
                except ValueError as exc:
                    raise ParseError(f"malformed baseMVA {val!r}") from exc
            continue
        m = _STMT_MATRIX.match(st)
        if m:
            data[m.group(1)] = _parse_matrix(m.group(2), m.group(1))
            continue
        raise ParseError(f"unsupported statement: {st[:60]!r}")
    for key in ("baseMVA", "bus", "gen", "branch"):
        if key not in data:
            raise ParseError(f"missing mpc.{key}")
    return _build_case(data, name)


def _check_width(rows, name, widths):
    for r in rows:
        if len(r) not in widths:
            raise ParseError(f"mpc.{name}: row has {len(r)} columns, expected one of {sorted(widths)}")


def _angle_limit(value: float | None, sign: float) -> float:
    if value is None or abs(value) >= 360.0 or value == 0.0:
        return sign * DEFAULT_ANGLE_LIMIT
    return math.radians(value)


def _build_case(data: dict, name: str) -> NetworkCase:
    base = float(data["baseMVA"])
    bus_rows = data["bus"]
    gen_rows = data["gen"]
    br_rows = data["branch"]
    cost_rows = data.get("gencost", [])
    _check_width(bus_rows, "bus", {13})
    _check_width(gen_rows, "gen", set(range(10, 22)))
    _check_width(br_rows, "branch", {11, 12, 13})

    buses = []
    for r in bus_rows:
        code = int(r[1])
        if code == 4:
            raise ValidationError(f"bus {int(r[0])}: isolated buses are not supported")
        if code not in _BUS_TYPES:
            raise ParseError(f"bus {int(r[0])}: unknown bus type {code}")
        buses.append(
            Bus(index=int(r[0]), type=_BUS_TYPES[code], Pd=r[2] / base, Qd=r[3] / base,
                Vmin=r[12], Vmax=r[11], Gs=r[4] / base, Bs=r[5] / base)
        )
    known = {b.index for b in buses}

    if cost_rows and len(cost_rows) != len(gen_rows):
        if len(cost_rows) == 2 * len(gen_rows):
            raise ValidationError("reactive power cost rows are not supported")
        raise ParseError("mpc.gencost must have one row per generator")
    gens = []
    for i, r in enumerate(gen_rows):
        if int(r[0]) not in known:
            raise ParseError(f"generator references unknown bus {int(r[0])}")
        c2 = c1 = c0 = 0.0
        if cost_rows:
            cr = cost_rows[i]
            if len(cr) < 4:
                raise ParseError("mpc.gencost: row too short")
            model, ncoef = int(cr[0]), int(cr[3])
            if model == 1:
                raise ValidationError("piecewise-linear generator costs are not supported")
            if model != 2:
                raise ParseError(f"mpc.gencost: unknown cost model {model}")
            coef = cr[4 : 4 + ncoef]
            if len(coef) != ncoef:
                raise ParseError("mpc.gencost: coefficient count mismatch")
            if ncoef > 3 and any(c != 0 for c in coef[: ncoef - 3]):
                raise ValidationError("generator costs above quadratic order are not supported")
            coef = [0.0] * max(0, 3 - ncoef) + list(coef[-3:]) if ncoef else [0.0, 0.0, 0.0]
            c2, c1, c0 = coef
        if r[7] <= 0:
            continue
        gens.append(
            Gen(bus=int(r[0]), Pmin=r[9] / base, Pmax=r[8] / base, Qmin=r[4] / base,
                Qmax=r[3] / base, c2=c2 * base**2, c1=c1 * base, c0=c0)
        )

    branches = []
    for r in br_rows:
        f, t = int(r[0]), int(r[1])
        if f not in known or t not in known:
            raise ParseError(f"branch {f}-{t} references an unknown bus")
        if r[10] <= 0:
            continue
        amin = r[11] if len(r) >= 12 else None
        amax = r[12] if len(r) >= 13 else None
        if amin is not None and amax is not None and amin == 0.0 and amax == 0.0:
            amin = amax = None
        branches.append(
            Branch(from_bus=f, to_bus=t, r=r[2], x=r[3], b_sh=r[4], tap=r[8] if r[8] != 0 else 1.0,
                   shift=math.radians(r[9]), Smax=r[5] / base,
                   theta_min=_angle_limit(amin, -1.0), theta_max=_angle_limit(amax, 1.0))
        )

    slack = [b.index for b in buses if b.type == SLACK]
    if len(slack) != 1:
        raise ValidationError(f"expected exactly one slack bus, found {len(slack)}")
    return NetworkCase(base_mva=base, buses=tuple(buses), gens=tuple(gens),
                       branches=tuple(branches), ref_bus=slack[0], name=name)


def format_case(case: NetworkCase) -> str:
    """Write a case back as MATPOWER text (inverse of :func:`parse_case`)."""
    base = case.base_mva
    r = repr
    lines = [f"function mpc = {case.name}", "", "mpc.version = '2';", f"mpc.baseMVA = {r(base)};", "",
             "%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin", "mpc.bus = ["]
    for b in case.buses:
        vals = [b.index, _BUS_CODES[b.type], b.Pd * base, b.Qd * base, b.Gs * base, b.Bs * base,
                1, 1.0, 0.0, 0.0, 1, b.Vmax, b.Vmin]
        lines.append("\t" + "\t".join(r(v) for v in vals) + ";")
    lines += ["];", "", "%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin", "mpc.gen = ["]
    for g in case.gens:
        vals = [g.bus, 0.0, 0.0, g.Qmax * base, g.Qmin * base, 1.0, base, 1, g.Pmax * base, g.Pmin * base]
        lines.append("\t" + "\t".join(r(v) for v in vals) + ";")
    lines += ["];", "", "%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus\tangmin\tangmax",
              "mpc.branch = ["]
    for br in case.branches:
        vals = [br.from_bus, br.to_bus, br.r, br.x, br.b_sh, br.Smax * base, 0.0, 0.0, br.tap,
                math.degrees(br.shift), 1, math.degrees(br.theta_min), math.degrees(br.theta_max)]
        lines.append("\t" + "\t".join(r(v) for v in vals) + ";")
    lines += ["];", "", "mpc.gencost = ["]
    for g in case.gens:
        vals = [2, 0.0, 0.0, 3, g.c2 / base**2, g.c1 / base, g.c0]
        lines.append("\t" + "\t".join(r(v) for v in vals) + ";")
    lines += ["];", ""]
    return "\n".join(lines)


def bundled_cases() -> list[str]:
    root = resources.files("opfbound") / "data"
    return sorted(p.name[:-2] for p in root.iterdir() if p.name.endswith(".m"))


def load_case(source: str | Path) -> NetworkCase:
    """Load a case from a path (``.m`` or ``.json``) or a bundled fixture name."""
    path = Path(source)
    if path.is_file():
        text = path.read_text()
        if path.suffix == ".json":
            return NetworkCase.from_json(text)
        return parse_case(text, name=path.stem)
    ref = resources.files("opfbound") / "data" / f"{source}.m"
    if ref.is_file():
        return parse_case(ref.read_text(), name=str(source))
    raise FileNotFoundError(f"no case file or bundled fixture named {source!r}")


# ---------------------------------------------------------------------------
# admittance


@dataclasses.dataclass(frozen=True)
class AdmittanceMatrix:
    """Bus admittance ``Y = G + jB`` and the per-branch two-port parameters.

    For branch ``e`` from ``f`` to ``t`` the end currents are
    ``I_f = yff V_f + yft V_t`` and ``I_t = ytf V_f + ytt V_t``.
    """

    Y: sp.csr_matrix
    yff: np.ndarray
    yft: np.ndarray
    ytf: np.ndarray
    ytt: np.ndarray
    f: np.ndarray
    t: np.ndarray
    ysh: np.ndarray

    @property
    def G(self) -> sp.csr_matrix:
        return self.Y.real.tocsr()

    @property
    def B(self) -> sp.csr_matrix:
        return self.Y.imag.tocsr()


def build_admittance(case: NetworkCase) -> AdmittanceMatrix:
    """Assemble ``Y`` from pi-model branches with off-nominal taps and shifts."""
    n = case.n
    f, t = case.branch_ends()
    nb = len(case.branches)
    yff = np.zeros(nb, dtype=complex)
    yft = np.zeros(nb, dtype=complex)
    ytf = np.zeros(nb, dtype=complex)
    ytt = np.zeros(nb, dtype=complex)
    for e, br in enumerate(case.branches):
        z = complex(br.r, br.x)
        if z == 0:
            raise DegenerateBranch(f"branch {br.from_bus}-{br.to_bus} has r = x = 0")
        ys = 1.0 / z
        tap = br.tap * complex(math.cos(br.shift), math.sin(br.shift))
        ytt[e] = ys + 0.5j * br.b_sh
        yff[e] = ytt[e] / abs(tap) ** 2
        yft[e] = -ys / tap.conjugate()
        ytf[e] = -ys / tap
    ysh = np.array([complex(b.Gs, b.Bs) for b in case.buses])
    rows = np.concatenate([f, f, t, t, np.arange(n)])
    cols = np.concatenate([f, t, f, t, np.arange(n)])
    vals = np.concatenate([yff, yft, ytf, ytt, ysh])
    Y = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    Y.sum_duplicates()
    return AdmittanceMatrix(Y=Y, yff=yff, yft=yft, ytf=ytf, ytt=ytt, f=f, t=t, ysh=ysh)


def branch_flows(adm: AdmittanceMatrix, V: np.ndarray):
    """Complex power entering each branch at its from and to ends."""
    V = np.asarray(V, dtype=complex)
    Vf, Vt = V[adm.f], V[adm.t]
    Sf = Vf * np.conj(adm.yff * Vf + adm.yft * Vt)
    St = Vt * np.conj(adm.ytf * Vf + adm.ytt * Vt)
    return Sf, St
