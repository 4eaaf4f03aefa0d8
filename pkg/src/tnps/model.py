"""TN structures (mode-vertex mapping + edge ranks), core containers,
full-network contraction, parameter counting, the efficiency metric and
synthetic ground-truth generation."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as tz
from .graphs import Permutation, TemplateGraph, inverse, load_graph, make_template
from .tensor import IndexLabel, contract_pair, permute_modes
from .validation import check_dims, check_tensor

__all__ = [
    "TnStructure",
    "TnModel",
    "GroundTruth",
    "incident_edges",
    "core_shape",
    "param_count",
    "phi",
    "efficiency",
    "contract_network",
    "generate_synthetic",
    "structure_to_dict",
    "structure_from_dict",
    "save_model",
    "load_model",
]


def incident_edges(template: TemplateGraph, v: int) -> tuple[tuple[int, int], ...]:
    """Edges at vertex v in canonical (min, max)-sorted order; fixes the bond
    axis order of every core."""
    return tuple(e for e in template.edges if v in e)


@dataclass(frozen=True)
class TnStructure:
    """One point of the search space: a mode-vertex mapping plus one integer
    rank per template edge (aligned with template.edges order)."""

    template: TemplateGraph
    perm: Permutation          # perm[k] = template vertex carrying tensor mode k
    ranks: tuple[int, ...]

    def __post_init__(self):
        ext = set(self.template.external_vertices)
        perm = tuple(int(v) for v in self.perm)
        if len(perm) != len(ext) or set(perm) != ext:
            raise ValueError(f"perm {perm!r} is not a bijection onto the "
                             f"external vertices {sorted(ext)}")
        ranks = tuple(int(r) for r in self.ranks)
        if len(ranks) != len(self.template.edges):
            raise ValueError("one rank per template edge required")
        if any(r < 1 for r in ranks):
            raise ValueError("ranks must be >= 1")
        object.__setattr__(self, "perm", perm)
        object.__setattr__(self, "ranks", ranks)

    @property
    def n_modes(self) -> int:
        return len(self.perm)

    def rank_of(self, edge: tuple[int, int]) -> int:
        return self.ranks[self.template.edges.index(edge)]

    def mode_of_vertex(self, v: int) -> int | None:
        try:
            return self.perm.index(v)
        except ValueError:
            return None

    def key(self) -> tuple:
        """Hashable content identity used for caching and seed derivation."""
        return (self.perm, self.ranks)


def core_shape(structure: TnStructure, dims, v: int) -> tuple[int, ...]:
    """Open mode dim first (external vertices only), then one bond axis per
    incident edge in canonical order."""
    dims = check_dims(dims)
    shape = []
    mode = structure.mode_of_vertex(v)
    if mode is not None:
        shape.append(dims[mode])
    shape += [structure.rank_of(e) for e in incident_edges(structure.template, v)]
    return tuple(shape)


def param_count(structure: TnStructure, dims) -> int:
    total = 0
    for v in range(structure.template.n):
        total += int(np.prod(core_shape(structure, dims, v)))
    return total


def phi(structure: TnStructure, dims) -> float:
    """Model complexity: parameter count over tensor entry count."""
    dims = check_dims(dims)
    return param_count(structure, dims) / float(np.prod(dims))


@dataclass(frozen=True)
class GroundTruth:
    """Hidden generating structure of a synthetic tensor."""

    tensor: np.ndarray
    structure: TnStructure
    cores: tuple[np.ndarray, ...]
    param_count: int


def efficiency(found: TnStructure, truth: GroundTruth | TnStructure, dims) -> float:
    """Parameter-count ratio truth/found; > 1 means the searched structure is
    more compact than the generating one."""
    truth_structure = truth.structure if isinstance(truth, GroundTruth) else truth
    return param_count(truth_structure, dims) / param_count(found, dims)


@dataclass(frozen=True)
class TnModel:
    """A structure with one core tensor per template vertex."""

    structure: TnStructure
    cores: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.cores) != self.structure.template.n:
            raise ValueError("one core per template vertex required")
        object.__setattr__(self, "cores", tuple(np.asarray(c, dtype=np.float64)
                                                for c in self.cores))
        dims = self.dims
        for v, core in enumerate(self.cores):
            want = core_shape(self.structure, dims, v)
            if core.shape != want:
                raise ValueError(f"core {v} has shape {core.shape}, expected {want}")

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(int(self.cores[v].shape[0]) for v in self.structure.perm)


def _core_labels(structure: TnStructure, dims, v: int) -> list[IndexLabel]:
    labels = []
    mode = structure.mode_of_vertex(v)
    if mode is not None:
        labels.append(IndexLabel(("mode", v), dims[mode]))
    for e in incident_edges(structure.template, v):
        labels.append(IndexLabel(("edge",) + e, structure.rank_of(e)))
    return labels


def contract_network(model: TnModel) -> np.ndarray:
    """Contract all bond indices by a left-to-right fold over vertices, then
    order the open modes so output mode n is input mode n."""
    s = model.structure
    dims = model.dims
    acc, acc_labels = model.cores[0], _core_labels(s, dims, 0)
    for v in range(1, s.template.n):
        acc, acc_labels = contract_pair(acc, acc_labels, model.cores[v],
                                        _core_labels(s, dims, v))
    # remaining labels are ("mode", vertex) in vertex order
    vertex_axis = {lab.id[1]: ax for ax, lab in enumerate(acc_labels)}
    axes = [vertex_axis[s.perm[m]] for m in range(s.n_modes)]
    return np.ascontiguousarray(np.transpose(acc, axes))


def generate_synthetic(template: TemplateGraph | str, dims, rank_choices,
                       rng: np.random.Generator, core_std: float = 1.0,
                       n: int | None = None) -> GroundTruth:
    """Draw ranks i.i.d. uniform from rank_choices, fill cores with
    N(0, core_std^2) entries, contract, then hide the mode order behind a
    uniform random permutation. Redraws on a numerically zero tensor."""
    if isinstance(template, str):
        if n is None and not isinstance(dims, (int, np.integer)):
            n = len(tuple(dims))
        template = make_template(template, n)
    n_modes = template.n_modes
    if isinstance(dims, (int, np.integer)):
        dims = (int(dims),) * n_modes
    dims = check_dims(dims)
    if len(dims) != n_modes:
        raise ValueError(f"need {n_modes} mode dims, got {len(dims)}")
    choices = sorted(int(r) for r in set(rank_choices))
    if not choices or choices[0] < 1:
        raise ValueError("rank_choices must be positive integers")
    ext = template.external_vertices

    for _ in range(64):
        ranks = tuple(choices[int(i)] for i in rng.integers(0, len(choices),
                                                            size=len(template.edges)))
        base = TnStructure(template, ext, ranks)
        cores = tuple(rng.normal(0.0, core_std, size=core_shape(base, dims, v))
                      for v in range(template.n))
        hidden = tuple(int(v) for v in rng.permutation(n_modes))
        contracted = contract_network(TnModel(base, cores))
        out = permute_modes(contracted, hidden)
        if np.linalg.norm(out) > 0.0:
            hidden_inv = inverse(hidden)
            true_perm = tuple(ext[hidden_inv[m]] for m in range(n_modes))
            structure = TnStructure(template, true_perm, ranks)
            return GroundTruth(np.ascontiguousarray(out), structure, cores,
                               param_count(structure, dims))
    raise RuntimeError("could not generate a nonzero synthetic tensor")


# ---------------------------------------------------------------------------
# serialization

def structure_to_dict(structure: TnStructure, template_ref: str) -> dict:
    """JSON form: template name-or-path, 0-based permutation, [i, j, rank]
    triples in canonical edge order."""
    return {
        "template": template_ref,
        "permutation": list(structure.perm),
        "ranks": [[i, j, structure.rank_of((i, j))] for i, j in structure.template.edges],
    }


def resolve_template(ref: str, base_dir=None) -> TemplateGraph:
    """A template reference is a named spec ('cycle:4') or a .graph path."""
    if ref.endswith(".graph"):
        path = Path(ref)
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        return load_graph(path)
    return make_template(ref)


def structure_from_dict(d: dict, base_dir=None) -> TnStructure:
    template = resolve_template(d["template"], base_dir)
    rank_map = {(min(i, j), max(i, j)): int(r) for i, j, r in d["ranks"]}
    if set(rank_map) != set(template.edges):
        raise ValueError("rank triples do not cover the template edges")
    ranks = tuple(rank_map[e] for e in template.edges)
    return TnStructure(template, tuple(d["permutation"]), ranks)


def save_model(model: TnModel, out_dir, template_ref: str) -> None:
    """Structure JSON plus one .tnsb blob per core, canonical vertex order."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = structure_to_dict(model.structure, template_ref)
    (out / "structure.json").write_text(json.dumps(payload, sort_keys=True,
                                                   indent=2) + "\n")
    for v, core in enumerate(model.cores):
        tz.save_tnsb(core, out / f"core_{v:03d}.tnsb")


def load_model(model_dir, base_dir=None) -> TnModel:
    path = Path(model_dir)
    structure = structure_from_dict(json.loads((path / "structure.json").read_text()),
                                    base_dir or path)
    cores = tuple(tz.load_tnsb(path / f"core_{v:03d}.tnsb")
                  for v in range(structure.template.n))
    return TnModel(structure, cores)


def reconstruction_error(target, model: TnModel) -> float:
    """Frobenius-relative error of the model against a target tensor."""
    target = check_tensor(target)
    z = contract_network(model)
    return float(np.linalg.norm(target - z) / np.linalg.norm(target))
