"""Infinite normal form reduction as executable combinatorics.

Trees are stored as nested tuples ``(number, children)`` where each child is
either a color string (a leaf) or another nested tuple (a parent, colored w).
Children are kept in slot order; slot ``s`` of the node with word ``a`` has
frequency ``xi_{a s}``.

Numerical evaluation works on the staggered lattice of ``profile_evolution``,
so every frequency integral is the same discrete sum that ``apply_N`` computes.
The parent multiplier includes the equation prefactor, m = coupling chi_n^2 xi.
"""
from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy import integrate

from .errors import QuadratureNotConverged
from .params import AnalysisParams
from .profile_evolution import (
    DEFAULT_COUPLING, DomainDecomposition, ProfileGrid, assemble_pieces, rhs_w, step_wn,
)

COLORS = ("w", "z", "S0", "Sreg", "K0", "dtS0", "dtSreg", "dtK0", "F2")
# dtw is the badly-behaved part of d_t w; it only appears in remainder descriptors
EXT_COLORS = COLORS + ("dtw",)
BASE = ("w", "z", "S0", "Sreg", "K0")
DERIVATIVE = {"S0": "dtS0", "Sreg": "dtSreg", "K0": "dtK0"}
TYPE_TAGS = ("remainder", "resonant", "boundary", "derivative", "f2")
_UNDERIVE = {v: k for k, v in DERIVATIVE.items()}


def base_color(c):
    if c in ("F2", "dtw"):
        return "w"
    return _UNDERIVE.get(c, c)


# ---------------------------------------------------------------- elementary trees

def clauses_satisfied(colors) -> list:
    """Admissibility clauses (1, 2, 3) met by a multiset of child colors."""
    c = Counter(colors)
    n = len(colors)
    wz = c["w"] + c["z"]
    out = []
    if n == 3 and wz >= 2 and wz + c["S0"] + c["Sreg"] == 3:
        out.append(1)
    if n == 3 and c["Sreg"] >= 1 and wz == 1 and c["S0"] + c["Sreg"] == 2:
        out.append(2)
    if n == 2 and c["K0"] == 1 and wz == 1:
        out.append(3)
    return out


@dataclass(frozen=True)
class ElementaryTree:
    """Root w with children in slot order.

    Clause 1 trees put the odd child in slot 1 followed by the {w, z} pair
    (z before w); clause 2 trees read (S0 or Sreg, Sreg, w or z); binary trees
    list K0 first.  Slots 1 and 2 are the default represented frequencies.
    """
    child_colors: tuple
    clause: int
    coefficient: float = 1.0

    @property
    def arity(self):
        return len(self.child_colors)

    @property
    def root_color(self):
        return "w"

    @property
    def phase(self):
        return "Phi" if self.arity == 3 else "Psi"

    @property
    def is_source(self):
        return "w" not in self.child_colors

    @property
    def restriction(self):
        return _restriction(self.child_colors)

    @property
    def n_w(self):
        return self.child_colors.count("w")

    def label(self):
        return "(" + ",".join(self.child_colors) + ")"


def _restriction(colors):
    colors = tuple(base_color(c) for c in colors)
    if "w" in colors:
        return None
    if len(colors) == 2:
        return "Dtau"
    return "D1" if "Sreg" in colors and colors.count("z") == 1 else "D3"


def _orderings(colors):
    c = Counter(colors)
    return math.factorial(len(colors)) // math.prod(math.factorial(v) for v in c.values())


def elementary_trees() -> list:
    trees = []
    for pair in (("z", "z"), ("z", "w"), ("w", "w")):
        for odd in ("S0", "Sreg", "z", "w"):
            trees.append(((odd,) + pair, 1))
    for first in ("S0", "Sreg"):
        for last in ("z", "w"):
            trees.append(((first, "Sreg", last), 2))
    for last in ("w", "z"):
        trees.append((("K0", last), 3))
    # a multiset reached through two slot layouts shares its expansion coefficient
    share = Counter(tuple(sorted(c)) for c, _ in trees)
    out = []
    for colors, clause in trees:
        coef = 3.0 if len(colors) == 2 else float(_orderings(colors))
        out.append(ElementaryTree(colors, clause, coef / share[tuple(sorted(colors))]))
    return out


_ELEM = {e.child_colors: e for e in elementary_trees()}


def elementary_of(colors) -> ElementaryTree:
    return _ELEM[tuple(base_color(c) if not isinstance(c, tuple) else "w" for c in colors)]


# ---------------------------------------------------------------- admissible trees

def _leaves(node, path=()):
    _, children = node
    for s, ch in enumerate(children):
        if isinstance(ch, tuple):
            yield from _leaves(ch, path + (s,))
        else:
            yield path + (s,), ch


def _replace(node, path, new):
    num, children = node
    s = path[0]
    ch = list(children)
    ch[s] = new if len(path) == 1 else _replace(children[s], path[1:], new)
    return (num, tuple(ch))


def _parents(node, word=""):
    num, children = node
    yield num, word, children
    for s, ch in enumerate(children):
        if isinstance(ch, tuple):
            yield from _parents(ch, word + str(s + 1))


def _size(node):
    return sum(1 for _ in _parents(node))


@dataclass(frozen=True)
class AdmissibleTree:
    root: tuple
    type_tag: str = "remainder"

    @property
    def size(self):
        return _size(self.root)

    def leaves(self):
        return list(_leaves(self.root))

    def leaf_words(self):
        return [("".join(str(s + 1) for s in p), c) for p, c in _leaves(self.root)]

    def subtrees(self):
        """(number, parent word, child entries) sorted by number."""
        return sorted(_parents(self.root), key=lambda r: r[0])

    def elementary(self, j):
        for num, _, children in _parents(self.root):
            if num == j:
                return elementary_of(children)
        raise KeyError(j)

    def with_tag(self, tag):
        return AdmissibleTree(self.root, tag)

    def validate(self):
        subs = self.subtrees()
        nums = [s[0] for s in subs]
        if nums != list(range(1, len(nums) + 1)):
            raise ValueError("numbering is not 1..J")
        for num, _, children in subs:
            key = tuple("w" if isinstance(c, tuple) else base_color(c) for c in children)
            if key not in _ELEM:
                raise ValueError(f"subtree {num} is not elementary: {key}")
            for c in children:
                if isinstance(c, tuple) and c[0] <= num:
                    raise ValueError("ancestor numbered after descendant")
        special = [c for _, c in self.leaves() if c not in BASE]
        if len(special) > 1:
            raise ValueError("more than one derivative/F2 leaf")
        return True

    def nodes(self):
        out = []

        def walk(node, parent):
            nid = len(out)
            out.append({"id": nid, "color": "w", "parent": parent, "number": node[0]})
            for ch in node[1]:
                if isinstance(ch, tuple):
                    walk(ch, nid)
                else:
                    out.append({"id": len(out), "color": ch, "parent": nid, "number": None})
        walk(self.root, None)
        return out

    def to_dict(self):
        return {"type_tag": self.type_tag, "nodes": self.nodes()}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        nodes = sorted(d["nodes"], key=lambda n: n["id"])
        kids = {n["id"]: [] for n in nodes}
        for n in nodes:
            if n["parent"] is not None:
                kids[n["parent"]].append(n["id"])

        def build(i):
            n = nodes[i]
            if n["number"] is None:
                return n["color"]
            return (n["number"], tuple(build(c) for c in kids[i]))
        root = [n["id"] for n in nodes if n["parent"] is None][0]
        return cls(build(root), d.get("type_tag", "remainder"))

    @classmethod
    def from_json(cls, s):
        return cls.from_dict(json.loads(s))

    def label(self):
        def fmt(node):
            return f"{node[0]}:(" + ",".join(fmt(c) if isinstance(c, tuple) else c for c in node[1]) + ")"
        return fmt(self.root)


def initial_trees() -> list:
    """Size-1 badly-behaved trees, one per elementary tree."""
    return [AdmissibleTree((1, e.child_colors)) for e in elementary_trees()]


@dataclass
class Expansion:
    resonant: list
    boundary: list
    derivative: list
    f2: list
    next: list

    def counts(self):
        return {k: len(getattr(self, k)) for k in ("resonant", "boundary", "derivative", "f2", "next")}


def _extensions(tree: AdmissibleTree, elems):
    num = tree.size + 1
    for path, c in _leaves(tree.root):
        if c == "w":
            for e in elems:
                yield AdmissibleTree(_replace(tree.root, path, (num, e.child_colors)))


def expand(trees) -> Expansion:
    """One pass of the tree-loop over badly-behaved trees."""
    elems = elementary_trees()
    ex = Expansion([], [], [], [], [])
    for tr in trees:
        ex.resonant.append(tr.with_tag("resonant"))
        ex.boundary.append(tr.with_tag("boundary"))
        num = tr.size + 1
        for path, c in _leaves(tr.root):
            if c in DERIVATIVE:
                ex.derivative.append(AdmissibleTree(_replace(tr.root, path, DERIVATIVE[c]), "derivative"))
            elif c == "w":
                ex.f2.append(AdmissibleTree(_replace(tr.root, path, "F2"), "f2"))
                for e in elems:
                    ex.next.append(AdmissibleTree(_replace(tr.root, path, (num, e.child_colors))))
    return ex


def card_bound(J):
    return 18 ** (J + 1) * math.factorial(2 * J + 1)


def count_admissible(J: int) -> int:
    """Exact Card(AT_J) by enumerating the trees (J <= 4)."""
    if J < 1:
        return 0
    if J > 4:
        raise ValueError("enumeration limited to J <= 4; use card_at")
    elems = elementary_trees()
    level = initial_trees()
    for _ in range(J - 1):
        level = [t for tr in level for t in _extensions(tr, elems)]
    n = len(level)
    assert n <= card_bound(J)
    return n


def card_at(J: int) -> int:
    """Card(AT_J) from the distribution of w-leaf counts (no enumeration)."""
    if J < 1:
        return 0
    gain = [e.n_w for e in elementary_trees()]
    dist = Counter(gain)
    for _ in range(J - 1):
        nd = Counter()
        for k, c in dist.items():
            for g in gain:
                nd[k - 1 + g] += c * k
        dist = nd
    return sum(dist.values())


# ---------------------------------------------------------------- thresholds

@dataclass(frozen=True)
class ThresholdSequence:
    """c_j = scale j^{3/(1-beta)}, N_j = c_j / t_next."""
    beta: float
    scale: float = 1.0

    @property
    def power(self):
        return 3.0 / (1.0 - self.beta)

    @property
    def normalized(self):
        return self.c(1) == 1.0

    def c(self, j):
        return self.scale * float(j) ** self.power

    def N(self, j, t_next):
        return self.c(j) / t_next

    def log_summability(self, J, card=None):
        """log of Card(AT_J) c_J^beta prod_{j<J} c_j^{beta-1}."""
        card = card_at(J) if card is None else card
        lc = lambda j: math.log(self.scale) + self.power * math.log(j)
        return math.log(card) + self.beta * lc(J) + (self.beta - 1) * sum(lc(j) for j in range(1, J))

    def summability(self, J, card=None):
        v = self.log_summability(J, card)
        return math.exp(v) if v < 700 else math.inf


@dataclass
class SummabilityReport:
    beta: float
    Js: list
    cards: list
    log_values: list

    @property
    def nonincreasing(self):
        return all(b <= a for a, b in zip(self.log_values, self.log_values[1:]))

    def to_dict(self):
        return {**asdict(self), "nonincreasing": self.nonincreasing}


def summability_check(params: AnalysisParams | None = None, Js=range(3, 7), thresholds=None):
    params = AnalysisParams() if params is None else params
    thr = ThresholdSequence(params.beta) if thresholds is None else thresholds
    Js = list(Js)
    cards = [card_at(J) for J in Js]
    return SummabilityReport(thr.beta, Js, cards, [thr.log_summability(J, c) for J, c in zip(Js, cards)])


# ---------------------------------------------------------------- term descriptors

def _fname(word):
    return "xi" if word == "" else f"xi_{word}"


@dataclass
class SubtreeTerm:
    number: int
    parent: str
    children: tuple
    colors: tuple
    phase: str
    represented: tuple
    dependent: str
    restriction: str | None
    coefficient: float

    @property
    def arity(self):
        return len(self.children)


@dataclass
class TermDescriptor:
    type_tag: str
    t_next: float
    subtrees: list
    leaves: list
    thresholds: list
    sign: int
    time_mode: str  # "integral" or "boundary"
    final: str  # "lt", "ge" or "none"

    @property
    def J(self):
        return len(self.subtrees)

    @property
    def constraints(self):
        return [f"{_fname(s.parent)} = " + " + ".join(_fname(c) for c in s.children) for s in self.subtrees]

    @property
    def phases(self):
        return [f"{s.phase}(" + ",".join(_fname(w) for w in (s.parent,) + (s.children if s.phase == "Phi" else s.children[:1])) + ")"
                for s in self.subtrees]

    @property
    def partial_sums(self):
        ph = self.phases
        return [" + ".join(ph[:j + 1]) for j in range(len(ph))]

    @property
    def multipliers(self):
        return [_fname(s.parent) for s in self.subtrees]

    @property
    def indicators(self):
        out = []
        for j, s in enumerate(self.subtrees, start=1):
            if j < self.J:
                out.append({"j": j, "relation": ">=", "N": self.thresholds[j - 1]})
            elif self.final != "none":
                out.append({"j": j, "relation": "<" if self.final == "lt" else ">=", "N": self.thresholds[j - 1]})
        return out

    @property
    def restrictions(self):
        names = {"D3": "D3", "D1": "D1", "Dtau": "D(tau)"}
        return [{"j": s.number, "domain": names[s.restriction], "tau": self.t_next}
                for s in self.subtrees if s.restriction]

    @property
    def represented_variables(self):
        return [w for s in self.subtrees for w in s.represented]

    def to_dict(self):
        return {
            "type_tag": self.type_tag, "J": self.J, "t_next": self.t_next, "sign": self.sign,
            "time_mode": self.time_mode, "constraints": self.constraints, "phases": self.phases,
            "partial_sums": self.partial_sums, "multipliers": self.multipliers,
            "indicators": self.indicators, "restrictions": self.restrictions,
            "leaves": [list(l) for l in self.leaves],
            "subtrees": [asdict(s) for s in self.subtrees],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def _represented(children, words):
    """Represented children: slots 1 (and 2) by default, swapping in parents, largest number first."""
    n = len(children)
    rep = [0] if n == 2 else [0, 1]
    parents = sorted((s for s in range(n) if isinstance(children[s], tuple)),
                     key=lambda s: -children[s][0])
    placed = []
    for p in parents[:len(rep)]:
        if p not in rep:
            free = [i for i, r in enumerate(rep) if r not in placed][0]
            rep[free] = p
        placed.append(p)
    rep = tuple(words[s] for s in sorted(rep))
    dep = [words[s] for s in range(n) if words[s] not in rep][0]
    return rep, dep


def term_of_tree(tree: AdmissibleTree, thresholds: ThresholdSequence, t_next: float) -> TermDescriptor:
    J = tree.size
    subs = []
    for num, word, children in tree.subtrees():
        words = tuple(word + str(s + 1) for s in range(len(children)))
        colors = tuple("w" if isinstance(c, tuple) else c for c in children)
        rep, dep = _represented(children, words)
        e = elementary_of(colors)
        subs.append(SubtreeTerm(num, word, words, colors, e.phase, rep, dep, _restriction(colors), e.coefficient))
    leaves = tree.leaf_words()
    special = {c for _, c in leaves}
    tag = tree.type_tag
    if tag == "resonant":
        final, mode, nibp = "lt", "integral", J - 1
    elif tag == "boundary":
        final, mode, nibp = "ge", "boundary", J - 1
    elif tag in ("derivative", "f2") or (tag == "remainder" and "dtw" in special):
        final, mode, nibp = "ge", "integral", J
    else:
        final, mode, nibp = "none", "integral", J - 1
    thr = [thresholds.N(j, t_next) for j in range(1, J + 1)]
    return TermDescriptor(tag, t_next, subs, leaves, thr, (-1) ** nibp, mode, final)


def tree_of_term(term: TermDescriptor) -> AdmissibleTree:
    by_parent = {s.parent: s for s in term.subtrees}
    leaf = dict(term.leaves)

    def build(word):
        s = by_parent[word]
        return (s.number, tuple(build(c) if c in by_parent else leaf[c] for c in s.children))
    return AdmissibleTree(build(""), term.type_tag)


# ---------------------------------------------------------------- solver history

@dataclass
class SolverRun:
    """w on a time grid of one dyadic interval, with the data that produced it."""
    xi: np.ndarray
    times: np.ndarray
    w: np.ndarray
    S: object
    z: np.ndarray
    cutoff: object = None
    coupling: complex = DEFAULT_COUPLING
    tau: float | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.w = np.asarray(self.w, dtype=complex)
        self.z = np.asarray(self.z, dtype=complex)
        if self.tau is None:
            self.tau = float(self.times[0])

    @property
    def N(self):
        return len(self.xi)

    @property
    def d(self):
        return float(self.xi[1] - self.xi[0])

    @property
    def eta(self):
        return (np.arange(2 * self.N - 1) - (self.N - 1)) * self.d

    @property
    def chi2(self):
        return np.ones_like(self.xi) if self.cutoff is None else self.cutoff.chi(self.xi) ** 2

    @property
    def zn(self):
        return self.z if self.cutoff is None else self.cutoff.chi(self.xi) * self.z

    def _pieces(self):
        if "pieces" not in self._cache:
            self._cache["pieces"] = assemble_pieces(self.S, self.zn, self.tau, self.xi)
        return self._cache["pieces"]

    def leaf(self, color, q):
        key = (color, q)
        if key in self._cache:
            return self._cache[key]
        s = float(self.times[q])
        xi = self.xi
        if color == "w":
            v = self.w[q]
        elif color == "z":
            v = self.zn
        elif color == "S0":
            v = self.S.s0_at(s, xi)
        elif color == "Sreg":
            v = self.S.sreg_at(s, xi)
        elif color == "dtS0":
            v = self.S.dt_s0_at(s, xi)
        elif color == "dtSreg":
            v = self.S.dt_sreg_at(s, xi)
        elif color in ("K0", "dtK0"):
            s0, ds0 = self.S.s0_at(s, xi), self.S.dt_s0_at(s, xi)
            v = pair_kernel(s0, xi, s, ds0 if color == "dtK0" else None)
        elif color == "F2":
            v = self.coupling * self.chi2 * self._pieces().F2(s)
        elif color == "dtw":
            v = self.rhs(q) - self.leaf("F2", q)
        else:
            raise ValueError(f"unknown color {color!r}")
        v = np.asarray(v, dtype=complex)
        self._cache[key] = v
        return v

    def rhs(self, q):
        key = ("rhs", q)
        if key not in self._cache:
            w = ProfileGrid(self.xi, self.w[q], float(self.times[q]))
            self._cache[key] = rhs_w(w, self.S, self.z, self.cutoff, float(self.times[q]), self.coupling)
        return self._cache[key]


def pair_kernel(f, xi, t, df=None):
    """Discrete K0 on the lattice eta_e = e dxi, |e| < N.

    K(t, eta) = dxi sum_{xi1 + xi2 = eta} e^{-(3/4) i t eta (xi1 - xi2)^2} f(xi1) f(xi2);
    with ``df`` the exact time derivative (f = f(t)) is returned instead.
    """
    n = len(xi)
    d = float(xi[1] - xi[0])
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    e = (i + j).ravel()
    eta = xi[i] + xi[j]
    lam2 = (xi[i] - xi[j]) ** 2
    ph = np.exp(-0.75j * t * eta * lam2)
    prod = f[i] * f[j]
    if df is None:
        vals = prod * ph
    else:
        vals = ((df[i] * f[j] + f[i] * df[j]) - 0.75j * eta * lam2 * prod) * ph
    vals = vals.ravel()
    out = np.bincount(e, vals.real, 2 * n - 1) + 1j * np.bincount(e, vals.imag, 2 * n - 1)
    return out * d


def solver_run(S, z, k=0, T=0.1, N=64, Xi=6.0, n_steps=400, cutoff=None, w0=None,
               coupling=DEFAULT_COUPLING) -> SolverRun:
    """RK4 history of w on [T/2^{k+1}, T/2^k]."""
    from .profile_evolution import make_grid
    xi = make_grid(N, Xi)
    t0, t1 = T / 2 ** (k + 1), T / 2 ** k
    z = np.asarray(z(xi) if callable(z) else z, dtype=complex)
    w = ProfileGrid(xi, np.zeros(N, dtype=complex) if w0 is None else np.asarray(w0, dtype=complex), t0)
    h = (t1 - t0) / n_steps
    hist = [w.values]
    for q in range(n_steps):
        w = step_wn(w, S, z, cutoff, t0 + q * h, h, coupling)
        hist.append(w.values)
    return SolverRun(xi, t0 + h * np.arange(n_steps + 1), np.array(hist), S, z, cutoff, coupling, t0)


# ---------------------------------------------------------------- lattice evaluation

def _shape(node):
    return (node[0], tuple(_shape(c) if isinstance(c, tuple) else "." for c in node[1]))


def _build_rows(term: TermDescriptor, N, out_idx):
    rows = {"": np.asarray(out_idx, dtype=np.int64)}
    for s in term.subtrees:
        p = rows[s.parent]
        R = len(p)
        if s.arity == 3:
            i, j = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
            I, Jj = np.tile(i.ravel(), R), np.tile(j.ravel(), R)
            P = np.repeat(p, N * N)
            K = P - I - Jj + N - 1
            ok = (K >= 0) & (K < N)
            sel = np.repeat(np.arange(R), N * N)[ok]
            new = {s.children[0]: I[ok], s.children[1]: Jj[ok], s.children[2]: K[ok]}
        else:
            e = np.arange(2 * N - 1)
            E = np.tile(e, R)
            C = np.repeat(p, 2 * N - 1) - (E - (N - 1))
            ok = (C >= 0) & (C < N)
            sel = np.repeat(np.arange(R), 2 * N - 1)[ok]
            new = {s.children[0]: E[ok], s.children[1]: C[ok]}
        rows = {k: v[sel] for k, v in rows.items()}
        rows.update(new)
    return rows


class _Frame:
    """Rows with nonzero time-independent weight for one descriptor layout."""

    def __init__(self, term: TermDescriptor, run: SolverRun, out_idx):
        N = run.N
        xi, eta, d = run.xi, run.eta, run.d
        rows = _build_rows(term, N, out_idx)
        eta_words = {s.children[0] for s in term.subtrees if s.arity == 2}
        freq = {w: (eta[v] if w in eta_words else xi[v]) for w, v in rows.items()}
        chi2 = run.chi2
        dom = DomainDecomposition(term.t_next)
        weight = np.ones(len(rows[""]), dtype=complex)
        theta = np.zeros(len(rows[""]))
        for j, s in enumerate(term.subtrees, start=1):
            a = freq[s.parent]
            if s.arity == 3:
                th = a**3 - freq[s.children[0]]**3 - freq[s.children[1]]**3 - freq[s.children[2]]**3
                weight = weight * d * d
            else:
                eta_j = freq[s.children[0]]
                th = a**3 - (a - eta_j) ** 3 - eta_j**3 / 4
                weight = weight * d
            theta = theta + th
            weight = weight * run.coupling * chi2[rows[s.parent]] * a
            if s.restriction == "D3":
                weight = weight * (np.abs(freq[s.children[0]]) + np.abs(freq[s.children[1]])
                                   + np.abs(freq[s.children[2]]) >= dom.r3)
            elif s.restriction == "D1":
                weight = weight * dom.in_Dtau(a, freq[s.children[0]] + freq[s.children[1]])
            elif s.restriction == "Dtau":
                weight = weight * dom.in_Dtau(a, freq[s.children[0]])
            Nj = term.thresholds[j - 1]
            if j < term.J or term.final == "ge":
                big = np.abs(theta) >= Nj
                weight = np.where(big, weight / (1j * np.where(big, theta, 1.0)), 0)
            elif term.final == "lt":
                weight = weight * (np.abs(theta) < Nj)
            elif term.final == "ge_raw":
                weight = weight * (np.abs(theta) >= Nj)
        keep = weight != 0
        self.weight = weight[keep]
        self.theta = theta[keep]
        self.rows = {k: v[keep] for k, v in rows.items()}
        self.n_out = len(out_idx)
        # position of each row's root among the requested outputs
        self.out_pos = np.searchsorted(np.asarray(out_idx), self.rows[""])

    def value(self, s, leafvals):
        v = self.weight * np.exp(1j * s * self.theta)
        for word, arr in leafvals:
            v = v * arr[self.rows[word]]
        return (np.bincount(self.out_pos, v.real, self.n_out)
                + 1j * np.bincount(self.out_pos, v.imag, self.n_out))


def _frame_key(term: TermDescriptor):
    return (tuple((s.parent, s.children, s.restriction) for s in term.subtrees),
            term.final, tuple(term.thresholds), term.t_next)


def _scalar(term: TermDescriptor):
    return term.sign * math.prod(s.coefficient for s in term.subtrees)


def _time_weights(times, quad):
    n = len(times)
    if quad == "trapezoid":
        h = np.diff(times)
        w = np.zeros(n)
        w[:-1] += h / 2
        w[1:] += h / 2
        return w
    if quad == "simpson":
        eye = np.eye(n)
        return integrate.simpson(eye, x=times, axis=0)
    raise ValueError(f"unknown quadrature {quad!r}")


def evaluate_terms(terms, run: SolverRun, t_interval=None, quad="simpson", out_idx=None,
                   max_phase_step=1.0):
    """Values of several descriptors on the output nodes, sharing lattice frames."""
    out_idx = np.arange(run.N) if out_idx is None else np.sort(np.asarray(out_idx))
    times = run.times
    if t_interval is None:
        q0, q1 = 0, len(times) - 1
    else:
        q0 = int(np.argmin(np.abs(times - t_interval[0])))
        q1 = int(np.argmin(np.abs(times - t_interval[1])))
    qs = np.arange(q0, q1 + 1)
    frames = {}
    for term in terms:
        key = _frame_key(term)
        if key not in frames:
            frames[key] = _Frame(term, run, out_idx)
    h = float(np.max(np.diff(times[qs]))) if len(qs) > 1 else 0.0
    for term in terms:
        fr = frames[_frame_key(term)]
        if term.time_mode == "integral" and len(fr.theta):
            step = float(np.max(np.abs(fr.theta))) * h
            if step > max_phase_step:
                raise QuadratureNotConverged(
                    f"phase advance {step:.3g} per time step exceeds {max_phase_step}", values=(step, h))
    tw = _time_weights(times[qs], quad)
    out = [np.zeros(len(out_idx), dtype=complex) for _ in terms]
    for pos, q in enumerate(qs):
        s = float(times[q])
        endpoint = q in (q0, q1)
        for n, term in enumerate(terms):
            if term.time_mode == "boundary" and not endpoint:
                continue
            fr = frames[_frame_key(term)]
            if not len(fr.theta):
                continue
            lv = [(wd, run.leaf(c, q)) for wd, c in term.leaves]
            val = _scalar(term) * fr.value(s, lv)
            if term.time_mode == "boundary":
                out[n] += val if q == q1 else -val
            else:
                out[n] += tw[pos] * val
    return out


def evaluate_term(term: TermDescriptor, history: SolverRun, S=None, z=None, t_interval=None,
                  quad="simpson") -> ProfileGrid:
    run = history
    if S is not None or z is not None:
        run = SolverRun(history.xi, history.times, history.w, history.S if S is None else S,
                        history.z if z is None else z, history.cutoff, history.coupling, history.tau)
    (val,) = evaluate_terms([term], run, t_interval, quad)
    t = float(run.times[-1] if t_interval is None else t_interval[1])
    return ProfileGrid(run.xi, val, t)


def integrand_at(terms, run: SolverRun, q, final_override=None):
    """Sum of the time integrands of ``terms`` at history node q (no time integration)."""
    total = np.zeros(run.N, dtype=complex)
    for term in terms:
        if final_override is not None:
            term = TermDescriptor(term.type_tag, term.t_next, term.subtrees, term.leaves,
                                  term.thresholds, term.sign, term.time_mode, final_override)
        fr = _Frame(term, run, np.arange(run.N))
        lv = [(wd, run.leaf(c, q)) for wd, c in term.leaves]
        total += _scalar(term) * fr.value(float(run.times[q]), lv)
    return total


# ---------------------------------------------------------------- identity check

@dataclass
class IdentityReport:
    J: int
    k: int
    xi: np.ndarray
    residual: np.ndarray
    scale: float
    w_scale: float
    partition_error: float
    decomposition_error: float
    contributions: dict
    n_terms: int
    tol: float = 5e-3

    @property
    def relative_residual(self):
        return float(np.max(np.abs(self.residual)) / self.scale) if self.scale else 0.0

    @property
    def passed(self):
        return self.relative_residual <= self.tol and self.partition_error <= 1e-6

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["xi", "residual"])
            for x, r in zip(self.xi, np.abs(self.residual)):
                wr.writerow([repr(float(x)), repr(float(r))])

    def summary(self):
        return {"J": self.J, "k": self.k, "relative_residual": self.relative_residual,
                "scale": self.scale, "w_scale": self.w_scale,
                "partition_error": self.partition_error,
                "decomposition_error": self.decomposition_error,
                "n_terms": self.n_terms, "contributions": self.contributions, "passed": self.passed}


def identity_terms(J, thresholds, t_next):
    """Descriptors whose sum, plus the step-0 F2 integral, equals w(t) - w(t_next)."""
    terms = {"resonant": [], "boundary": [], "derivative": [], "f2": [], "remainder": []}
    level = initial_trees()
    for j in range(1, J + 1):
        ex = expand(level)
        for tag in ("resonant", "boundary", "derivative", "f2"):
            terms[tag] += [term_of_tree(t, thresholds, t_next) for t in getattr(ex, tag)]
        if j == J:
            for tr in level:
                for path, c in _leaves(tr.root):
                    if c == "w":
                        rt = AdmissibleTree(_replace(tr.root, path, "dtw"), "remainder")
                        terms["remainder"].append(term_of_tree(rt, thresholds, t_next))
        level = ex.next
    return terms


def infr_identity_check(J: int, k: int, solver_run: SolverRun, thresholds=None, params=None,
                        quad="simpson", tol=5e-3) -> IdentityReport:
    """w(t) - w(t_{k+1}) against the step-J normal form expansion on one dyadic interval."""
    if J not in (1, 2):
        raise ValueError("identity check supports J in {1, 2}")
    run = solver_run
    params = AnalysisParams() if params is None else params
    thr = ThresholdSequence(params.beta) if thresholds is None else thresholds
    t_next = run.tau
    groups = identity_terms(J, thr, t_next)
    flat = [t for g in groups.values() for t in g]
    vals = evaluate_terms(flat, run, quad=quad)
    contrib = {}
    total = np.zeros(run.N, dtype=complex)
    pos = 0
    for name, g in groups.items():
        part = sum(vals[pos:pos + len(g)], np.zeros(run.N, dtype=complex))
        pos += len(g)
        contrib[name] = float(np.max(np.abs(part)))
        total += part
    tw = _time_weights(run.times, quad)
    f2_0 = sum(tw[q] * run.leaf("F2", q) for q in range(len(run.times)))
    contrib["f2_step0"] = float(np.max(np.abs(f2_0)))
    total += f2_0
    lhs = run.w[-1] - run.w[0]
    residual = lhs - total
    # indicator partition and tree decomposition at the first node
    base = [term_of_tree(t, thr, t_next) for t in initial_trees()]
    lt = integrand_at(base, run, 0, "lt")
    ge = integrand_at(base, run, 0, "ge_raw")
    un = integrand_at(base, run, 0, "none")
    ref = run.rhs(0) - run.leaf("F2", 0)
    sc = max(float(np.max(np.abs(un))), 1e-300)
    part_err = float(np.max(np.abs(lt + ge - un)) / sc)
    dec_err = float(np.max(np.abs(un - ref)) / max(float(np.max(np.abs(ref))), 1e-300))
    return IdentityReport(J, k, run.xi, residual, float(np.max(np.abs(lhs))),
                          float(np.max(np.abs(run.w))), part_err, dec_err, contrib, len(flat), tol)


# ---------------------------------------------------------------- certificates

_EPS_POWER = {"K0": 2, "dtK0": 2, "F2": 3}


def subtree_exponent(colors, params: AnalysisParams, uniform=False):
    """M-exponent of the frequency-restricted estimate used for one subtree."""
    if uniform:
        return params.beta
    colors = tuple(base_color(c) for c in colors)
    if len(colors) == 2:
        return 0.5
    if "w" not in colors:
        return params.beta
    return 1.0 - params.mu / 3.0


@dataclass
class BoundCertificate:
    tree: dict
    type_tag: str
    J: int
    factors: list
    c_exponents: list
    eps_power: int
    t_power_before_integration: float
    t_power: float
    c_product: float
    summability_factor: float
    predicted: float

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def bound_certificate(tree: AdmissibleTree, params: AnalysisParams, t: float, t_next: float,
                      thresholds=None, uniform=False) -> BoundCertificate:
    """Product of per-subtree factors (tN_j)^{p_j - 1} and the final-subtree rule of the type tag."""
    thr = ThresholdSequence(params.beta) if thresholds is None else thresholds
    J = tree.size
    g = params.gamma
    tag = tree.type_tag
    factors, cexp = [], []
    prod = 1.0
    for num, _, children in tree.subtrees():
        colors = tuple("w" if isinstance(c, tuple) else c for c in children)
        p = subtree_exponent(colors, params, uniform)
        tN = t * thr.N(num, t_next)
        if num < J:
            e, kind = p - 1.0, "intermediate"
        elif tag == "resonant":
            e, kind = p, "final-resonant"
        else:
            e, kind = p - 1.0, f"final-{tag}"
        f = tN ** e
        factors.append({"j": num, "kind": kind, "M_exponent": p, "tN": tN, "factor": f})
        cexp.append(e)
        prod *= f
    eps_power = sum(_EPS_POWER.get(c, 1) for _, c in tree.leaves())
    before = g if tag == "boundary" else g - 1.0
    # integrating s^{g-1} over [t_next, t] gives at most t^g / g
    time_factor = t**g if tag == "boundary" else (t**g - t_next**g) / g
    c_prod = math.prod(thr.c(j) ** e for j, e in zip(range(1, J + 1), cexp))
    summ = thr.c(J) ** thr.beta * math.prod(thr.c(j) ** (thr.beta - 1) for j in range(1, J))
    return BoundCertificate(tree.to_dict(), tag, J, factors, cexp, eps_power, before, g,
                            c_prod, summ, prod * params.epsilon**eps_power * time_factor)
