"""Template graphs, permutations, automorphisms, the relabeling semi-metric,
neighborhood enumeration, the local sampler and the search-space counting
identities/bounds.

Vertices are 0-based everywhere in code; only the .graph text format is
1-based. Permutations are tuples p with p[i] = image of vertex i.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "Permutation",
    "identity_perm",
    "compose",
    "inverse",
    "random_perm",
    "transposition",
    "adjacent_transpositions",
    "inversions",
    "word_metric",
    "TemplateGraph",
    "make_template",
    "load_graph",
    "save_graph",
    "enumerate_automorphisms",
    "find_relabeling",
    "enumerate_class",
    "semi_metric",
    "enumerate_shell",
    "enumerate_ball",
    "sample_local",
    "SpaceCount",
    "gamma",
    "log_bounds",
    "count_space",
]

Permutation = tuple[int, ...]


def identity_perm(n: int) -> Permutation:
    return tuple(range(n))


def compose(*perms: Permutation) -> Permutation:
    """Functional composition, rightmost applied first: compose(p, q)[i] = p[q[i]]."""
    out = perms[-1]
    for p in reversed(perms[:-1]):
        out = tuple(p[v] for v in out)
    return out


def inverse(p: Permutation) -> Permutation:
    inv = [0] * len(p)
    for i, v in enumerate(p):
        inv[v] = i
    return tuple(inv)


def random_perm(n: int, rng: np.random.Generator) -> Permutation:
    return tuple(int(v) for v in rng.permutation(n))


def transposition(n: int, i: int, j: int) -> Permutation:
    p = list(range(n))
    p[i], p[j] = p[j], p[i]
    return tuple(p)


def adjacent_transpositions(n: int) -> list[Permutation]:
    return [transposition(n, i, i + 1) for i in range(n - 1)]


def _check_perm(p: Permutation, n: int) -> Permutation:
    p = tuple(int(v) for v in p)
    if len(p) != n or sorted(p) != list(range(n)):
        raise ValueError(f"not a permutation of range({n}): {p!r}")
    return p


def inversions(p: Permutation) -> int:
    count = 0
    for i in range(len(p)):
        for j in range(i + 1, len(p)):
            if p[i] > p[j]:
                count += 1
    return count


def word_metric(p1: Permutation, p2: Permutation) -> int:
    """Minimum number of adjacent transpositions from p1 to p2 = inversion
    count of p1^-1 o p2 (Kendall tau). Left-invariant: d(qp1, qp2) = d(p1, p2)."""
    if len(p1) != len(p2):
        raise ValueError("permutation sizes differ")
    return inversions(compose(inverse(p1), p2))


@dataclass(frozen=True)
class TemplateGraph:
    """Simple connected graph fixing the TN format.

    external[v] marks vertices that carry an open tensor mode; formats like
    HT and MERA have internal (bond-only) vertices which never participate in
    the mode permutation.
    """

    n: int
    edges: tuple[tuple[int, int], ...]
    external: tuple[bool, ...] = ()

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("template needs at least 2 vertices")
        norm = []
        seen = set()
        for e in self.edges:
            i, j = int(e[0]), int(e[1])
            if i == j:
                raise ValueError(f"self-loop at vertex {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ValueError(f"edge {e!r} out of range for n={self.n}")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise ValueError(f"duplicate edge {key!r}")
            seen.add(key)
            norm.append(key)
        object.__setattr__(self, "edges", tuple(sorted(norm)))
        ext = self.external or (True,) * self.n
        if len(ext) != self.n:
            raise ValueError("external flag length != n")
        object.__setattr__(self, "external", tuple(bool(b) for b in ext))
        if not self._connected():
            raise ValueError("template graph must be connected")

    def _connected(self) -> bool:
        if not self.edges and self.n > 1:
            return False
        adj = self.adjacency()
        seen = {0}
        stack = [0]
        while stack:
            v = stack.pop()
            for w in adj[v]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        return len(seen) == self.n

    def adjacency(self) -> list[list[int]]:
        adj = [[] for _ in range(self.n)]
        for i, j in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        return adj

    def degrees(self) -> list[int]:
        deg = [0] * self.n
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    @property
    def min_degree(self) -> int:
        return min(self.degrees())

    @property
    def max_degree(self) -> int:
        return max(self.degrees())

    @property
    def external_vertices(self) -> tuple[int, ...]:
        return tuple(v for v in range(self.n) if self.external[v])

    @property
    def n_modes(self) -> int:
        return sum(self.external)

    def relabel(self, g: Permutation) -> "TemplateGraph":
        """g . G: edge (i, j) -> (g(i), g(j)); vertex attributes move along."""
        g = _check_perm(g, self.n)
        edges = tuple((g[i], g[j]) for i, j in self.edges)
        ext = [False] * self.n
        for v in range(self.n):
            ext[g[v]] = self.external[v]
        return TemplateGraph(self.n, edges, tuple(ext))

    def edge_key(self) -> frozenset:
        return frozenset(self.edges)


def apply_to_graph(g: Permutation, graph: TemplateGraph) -> TemplateGraph:
    return graph.relabel(g)


# ---------------------------------------------------------------------------
# named templates

def _grid_edges(rows: int, cols: int):
    def vid(r, c):
        return r * cols + c
    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                yield (vid(r, c), vid(r, c + 1))
            if r + 1 < rows:
                yield (vid(r, c), vid(r + 1, c))


def _ht_template(order: int) -> TemplateGraph:
    # binary dimension tree: external leaves get ids 0..order-1 (mode order),
    # internal transfer vertices are appended after
    if order < 2:
        raise ValueError("ht needs order >= 2")
    edges = []
    next_id = [order]

    def build(modes):
        if len(modes) == 1:
            return modes[0]
        vid = next_id[0]
        next_id[0] += 1
        half = (len(modes) + 1) // 2
        left = build(modes[:half])
        right = build(modes[half:])
        edges.append((vid, left))
        edges.append((vid, right))
        return vid

    build(list(range(order)))
    n = next_id[0]
    external = tuple(v < order for v in range(n))
    return TemplateGraph(n, tuple(edges), external)


def _mera_template(order: int) -> TemplateGraph:
    # one renormalization layer of a binary MERA with periodic boundary:
    # 8 external sites, 4 disentanglers on pairs (1,2),(3,4),(5,6),(7,0),
    # 4 isometries coarse-graining (0,1),(2,3),(4,5),(6,7), one top core
    if order != 8:
        raise ValueError("mera template is defined for order 8")
    u = [8, 9, 10, 11]
    w = [12, 13, 14, 15]
    top = 16
    edges = []
    for k in range(4):
        a, b = (2 * k + 1) % 8, (2 * k + 2) % 8
        edges += [(a, u[k]), (b, u[k])]
    # isometry w[k] covers sites (2k, 2k+1): site 2k sits in u[k-1], 2k+1 in u[k]
    for k in range(4):
        edges += [(u[(k - 1) % 4], w[k]), (u[k], w[k])]
    edges += [(wk, top) for wk in w]
    external = tuple(v < 8 for v in range(17))
    return TemplateGraph(17, tuple(edges), external)


def make_template(name: str, n: int | None = None) -> TemplateGraph:
    """Build a named template: path/tt, cycle/tr, star, btree/tree, ttree,
    lattice/grid/peps ('lattice:RxC'), ht, mera, complete. 'name:arg' syntax
    carries the size, e.g. 'cycle:6' or 'lattice:2x3'."""
    spec = name.strip().lower()
    arg = None
    if ":" in spec:
        spec, arg = spec.split(":", 1)
    if arg is not None and "x" not in arg:
        n = int(arg)

    if spec in ("lattice", "grid", "peps"):
        shape = arg if arg and "x" in arg else "2x3"
        rows, cols = (int(v) for v in shape.split("x"))
        if rows < 1 or cols < 1 or rows * cols < 2:
            raise ValueError(f"bad lattice shape {shape!r}")
        return TemplateGraph(rows * cols, tuple(_grid_edges(rows, cols)))
    if spec == "ht":
        return _ht_template(6 if n is None else n)
    if spec == "mera":
        return _mera_template(8 if n is None else n)
    if spec == "ttree":
        n = 7 if n is None else n

    if n is None:
        raise ValueError(f"template {name!r} needs a vertex count")
    if spec in ("path", "tt"):
        return TemplateGraph(n, tuple((i, i + 1) for i in range(n - 1)))
    if spec in ("cycle", "tr", "ring"):
        if n < 3:
            raise ValueError("cycle needs n >= 3")
        return TemplateGraph(n, tuple((i, (i + 1) % n) for i in range(n)))
    if spec == "star":
        return TemplateGraph(n, tuple((0, i) for i in range(1, n)))
    if spec in ("btree", "tree", "ttree"):
        edges = []
        for i in range(n):
            for child in (2 * i + 1, 2 * i + 2):
                if child < n:
                    edges.append((i, child))
        return TemplateGraph(n, tuple(edges))
    if spec == "complete":
        return TemplateGraph(n, tuple(itertools.combinations(range(n), 2)))
    raise ValueError(f"unknown template {name!r}")


def load_graph(path) -> TemplateGraph:
    """.graph text format: line 1 = n, then 1-based 'i j' edge lines;
    blank lines and '#' comments ignored."""
    lines = []
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            lines.append(line)
    if not lines:
        raise ValueError(f"{path}: empty graph file")
    try:
        n = int(lines[0])
    except ValueError as exc:
        raise ValueError(f"{path}: bad vertex count line {lines[0]!r}") from exc
    edges = []
    for line in lines[1:]:
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{path}: bad edge line {line!r}")
        i, j = int(parts[0]), int(parts[1])
        if not (1 <= i < j <= n):
            raise ValueError(f"{path}: edge ({i}, {j}) out of range (1-based, i < j)")
        edges.append((i - 1, j - 1))
    return TemplateGraph(n, tuple(edges))


def save_graph(graph: TemplateGraph, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{graph.n}\n")
        for i, j in graph.edges:
            fh.write(f"{i + 1} {j + 1}\n")


# ---------------------------------------------------------------------------
# automorphisms and the equivalence class

def _backtrack_maps(src: TemplateGraph, dst: TemplateGraph, first_only: bool):
    """All permutations g with g . src == dst, by degree-pruned backtracking."""
    n = src.n
    src_adj = [set(a) for a in src.adjacency()]
    dst_adj = [set(a) for a in dst.adjacency()]
    src_deg = src.degrees()
    dst_deg = dst.degrees()
    if sorted(src_deg) != sorted(dst_deg):
        return
    # also require external flags to correspond
    image = [-1] * n
    used = [False] * n
    order = sorted(range(n), key=lambda v: -src_deg[v])

    def extend(k):
        if k == n:
            yield tuple(image)
            return
        v = order[k]
        for c in range(n):
            if used[c] or dst_deg[c] != src_deg[v]:
                continue
            if dst.external[c] != src.external[v]:
                continue
            ok = True
            for u in src_adj[v]:
                if image[u] >= 0 and image[u] not in dst_adj[c]:
                    ok = False
                    break
            if ok:
                # non-edges must map to non-edges: count suffices since both
                # adjacency checks run over every assigned pair eventually
                for u in order[:k]:
                    if u not in src_adj[v] and image[u] in dst_adj[c]:
                        ok = False
                        break
            if not ok:
                continue
            image[v] = c
            used[c] = True
            yield from extend(k + 1)
            image[v] = -1
            used[c] = False

    yield from extend(0)


def enumerate_automorphisms(graph: TemplateGraph, limit: int = 10) -> tuple[Permutation, ...]:
    """The full automorphism group {a : a . G == G}, exhaustive with pruning.

    Guarded by `limit` on the vertex count; intended for the desk-scale
    templates (n <= 10 by default).
    """
    if graph.n > limit:
        raise ValueError(f"n={graph.n} exceeds automorphism enumeration limit {limit}")
    return tuple(_backtrack_maps(graph, graph, first_only=False))


def find_relabeling(template: TemplateGraph, graph: TemplateGraph) -> Permutation | None:
    """Some g with g . template == graph, or None if graph is outside the class."""
    if template.n != graph.n or len(template.edges) != len(graph.edges):
        return None
    for g in _backtrack_maps(template, graph, first_only=True):
        return g
    return None


def enumerate_class(template: TemplateGraph) -> list[TemplateGraph]:
    """Every distinct labelled relabeling g . G0 (the equivalence class)."""
    seen = {}
    for p in itertools.permutations(range(template.n)):
        key = frozenset((p[i], p[j]) if p[i] < p[j] else (p[j], p[i])
                        for i, j in template.edges)
        if key not in seen:
            seen[key] = template.relabel(p)
    return list(seen.values())


# ---------------------------------------------------------------------------
# semi-metric, neighborhoods, local sampler

def semi_metric(g1: TemplateGraph, g2: TemplateGraph, template: TemplateGraph) -> int:
    """Coset-minimized word metric between two relabelings of the template:
    min over p_i in g_i.Aut(G0) of word_metric(p1, p2). Separation and
    symmetry hold; the triangle inequality is not guaranteed."""
    r1 = find_relabeling(template, g1)
    r2 = find_relabeling(template, g2)
    if r1 is None or r2 is None:
        raise ValueError("graph is not a relabeling of the template")
    aut = enumerate_automorphisms(template)
    best = None
    for a in aut:
        p1 = compose(r1, a)
        for b in aut:
            d = word_metric(p1, compose(r2, b))
            if best is None or d < best:
                best = d
                if best == 0:
                    return 0
    return best


def _rep_or_raise(graph: TemplateGraph, template: TemplateGraph) -> Permutation:
    rep = find_relabeling(template, graph)
    if rep is None:
        raise ValueError("graph is not a relabeling of the template")
    return rep


def enumerate_shell(graph: TemplateGraph, template: TemplateGraph, d: int,
                    n_limit: int = 8, d_limit: int = 2) -> set[TemplateGraph]:
    """The exact-distance product set I_d(G) = {q.t1...td.G0 : q in g.Aut(G0),
    t_i adjacent transpositions}; I_0(G) = {G}."""
    if graph.n > n_limit or d > d_limit:
        raise ValueError(f"enumerate_shell limits exceeded (n<={n_limit}, d<={d_limit})")
    rep = _rep_or_raise(graph, template)
    words = {identity_perm(graph.n)}
    for _ in range(d):
        words = {compose(w, t) for w in words for t in adjacent_transpositions(graph.n)}
    out = set()
    for a in enumerate_automorphisms(template):
        q = compose(rep, a)
        for w in words:
            out.add(template.relabel(compose(q, w)))
    return out


def enumerate_ball(graph: TemplateGraph, template: TemplateGraph, d: int,
                   n_limit: int = 8, d_limit: int = 2) -> set[TemplateGraph]:
    """The closed radius-d neighborhood: union of I_k(G) for k = 0..d.

    This equals {G' : semi_metric(G', G) <= d}; note the exact-d product sets
    alone can miss closer elements (a product of two adjacent transpositions
    cannot realize a single one unless the automorphism parity cooperates).
    """
    out: set[TemplateGraph] = set()
    for k in range(d + 1):
        out |= enumerate_shell(graph, template, k, n_limit, d_limit)
    return out


def sample_local(graph: TemplateGraph, d: int, rng: np.random.Generator) -> TemplateGraph:
    """d uniform random swaps of vertex pairs; with d = 0 returns the input.

    Every element of I_d(G) has positive probability of being produced, but
    the support is generally a superset of I_d(G)."""
    out = graph
    for _ in range(d):
        i = int(rng.integers(graph.n))
        j = int(rng.integers(graph.n - 1))
        if j >= i:
            j += 1
        out = out.relabel(transposition(graph.n, i, j))
    return out


# ---------------------------------------------------------------------------
# counting

def gamma(d: float) -> float:
    """log d + 1/d - 1; positive and strictly increasing for d > 1."""
    return math.log(d) + 1.0 / d - 1.0


def log_bounds(n: int, rank_max: int, d1: float, d2: float) -> tuple[float, float]:
    """Natural-log upper/lower bounds on the search-space size for vertex
    count n, rank range rank_max and degree ratios d1 = n/min_deg,
    d2 = n/max_deg (requires d2 > 1)."""
    if d2 <= 1.0:
        raise ValueError("bounds require d2 = n/max_degree > 1")
    log_r = math.log(rank_max)
    log_upper = (n * n) / (2.0 * d2) * log_r + math.lgamma(n + 1)
    log_lower = (n * n) / (2.0 * d1) * log_r + gamma(d2) * n \
        - 0.5 * math.log(d2) - 1.0 / 24.0
    return log_lower, log_upper


@dataclass(frozen=True)
class SpaceCount:
    """Exact and bounded size of the permutation-and-ranks search space."""

    exact: int
    aut_size: int
    class_size: int
    lower: float | None
    upper: float | None
    log_lower: float | None
    log_upper: float | None

    @property
    def bounds_defined(self) -> bool:
        return self.log_lower is not None


def count_space(template: TemplateGraph, rank_max: int, aut_limit: int = 10) -> SpaceCount:
    """Exact count class_size * R^|E| with class_size = n!/|Aut| (Lagrange),
    plus the degree-ratio bounds in linear and log domain. Bounds are absent
    when d2 = n/max_degree <= 1 (unreachable for simple connected graphs)."""
    if rank_max < 1:
        raise ValueError("rank_max must be >= 1")
    aut_size = len(enumerate_automorphisms(template, limit=aut_limit))
    fact = math.factorial(template.n)
    if fact % aut_size:
        raise AssertionError("automorphism count does not divide n!")
    class_size = fact // aut_size
    exact = class_size * rank_max ** len(template.edges)
    d2 = template.n / template.max_degree
    if d2 <= 1.0:
        return SpaceCount(exact, aut_size, class_size, None, None, None, None)
    d1 = template.n / template.min_degree
    log_lower, log_upper = log_bounds(template.n, rank_max, d1, d2)
    lower = math.exp(log_lower) if log_lower < 700 else math.inf
    upper = math.exp(log_upper) if log_upper < 700 else math.inf
    return SpaceCount(exact, aut_size, class_size, lower, upper, log_lower, log_upper)
