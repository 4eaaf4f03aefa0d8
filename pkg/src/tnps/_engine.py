"""Compiled contraction programs for fitting.

For a fixed structure and mode dims, every contraction this package needs per
optimization step (full network value + one environment per core) is lowered
once into a flat list of transpose/reshape/matmul instructions over a slot
registry. Environments reuse prefix/suffix partial contractions, so a step
costs O(n) pairwise folds instead of O(n^2).

The public semantics (what a network evaluates to) is defined by
model.contract_network; tests pin this engine against it.
"""

from __future__ import annotations

import numpy as np

from .model import TnStructure, core_shape, incident_edges
from .validation import check_dims


def _fold_op(labels_a, labels_b, a_slot, b_slot, out_slot):
    """Compile one pairwise contraction over all shared label ids.

    labels are [(id, dim), ...]; returns (op tuple, out labels).
    """
    ids_b = {lab: i for i, (lab, _) in enumerate(labels_b)}
    shared_a, shared_b = [], []
    for i, (lab, _) in enumerate(labels_a):
        j = ids_b.get(lab)
        if j is not None:
            shared_a.append(i)
            shared_b.append(j)
    free_a = [i for i in range(len(labels_a)) if i not in set(shared_a)]
    free_b = [j for j in range(len(labels_b)) if j not in set(shared_b)]

    a_perm = tuple(free_a + shared_a)
    b_perm = tuple(shared_b + free_b)
    a_rows = int(np.prod([labels_a[i][1] for i in free_a])) if free_a else 1
    a_cols = int(np.prod([labels_a[i][1] for i in shared_a])) if shared_a else 1
    b_cols = int(np.prod([labels_b[j][1] for j in free_b])) if free_b else 1
    out_labels = [labels_a[i] for i in free_a] + [labels_b[j] for j in free_b]
    out_shape = tuple(d for _, d in out_labels)

    if a_perm == tuple(range(len(labels_a))):
        a_perm = None
    if b_perm == tuple(range(len(labels_b))):
        b_perm = None
    op = (a_slot, b_slot, out_slot, a_perm, a_rows, a_cols, b_perm, a_cols,
          b_cols, out_shape)
    return op, out_labels


def _run_ops(ops, slots):
    for a, b, out, ap, ar, ac, bp, br, bc, oshape in ops:
        av = slots[a]
        if ap is not None:
            av = av.transpose(ap)
        bv = slots[b]
        if bp is not None:
            bv = bv.transpose(bp)
        slots[out] = np.matmul(av.reshape(ar, ac), bv.reshape(br, bc)).reshape(oshape)


class CompiledNetwork:
    """Per-structure contraction/gradient programs over a flat parameter vector.

    Not thread-safe: forward() stashes intermediate slots that gradient()
    consumes; each fit owns its own instance.
    """

    def __init__(self, structure: TnStructure, dims):
        self.structure = structure
        self.dims = check_dims(dims)
        template = structure.template
        n = template.n
        if len(self.dims) != structure.n_modes:
            raise ValueError(f"need {structure.n_modes} dims, got {len(self.dims)}")

        self.core_shapes = [core_shape(structure, self.dims, v) for v in range(n)]
        self.core_sizes = [int(np.prod(s)) for s in self.core_shapes]
        self.offsets = np.concatenate([[0], np.cumsum(self.core_sizes)]).astype(int)
        self.n_params = int(self.offsets[-1])

        core_labels = []
        for v in range(n):
            labs = []
            mode = structure.mode_of_vertex(v)
            if mode is not None:
                labs.append((("mode", v), self.dims[mode]))
            labs += [(("edge",) + e, structure.rank_of(e))
                     for e in incident_edges(template, v)]
            core_labels.append(labs)

        ext = template.external_vertices
        mode_of = {v: structure.mode_of_vertex(v) for v in ext}
        # target -> vertex-order axes and back to mode order
        self.x_axes = tuple(mode_of[v] for v in ext)
        pos_of_vertex = {v: j for j, v in enumerate(ext)}
        self.out_axes = tuple(pos_of_vertex[structure.perm[m]]
                              for m in range(structure.n_modes))

        e_slot = n
        self._e_slot = e_slot
        next_slot = n + 1
        labels = {v: core_labels[v] for v in range(n)}
        e_labels = [(("mode", v), self.dims[mode_of[v]]) for v in ext]

        fwd_ops = []
        prefix_slot = {0: 0}
        prefix_lab = {0: labels[0]}
        for v in range(1, n):
            op, out_lab = _fold_op(prefix_lab[v - 1], labels[v],
                                   prefix_slot[v - 1], v, next_slot)
            fwd_ops.append(op)
            prefix_slot[v] = next_slot
            prefix_lab[v] = out_lab
            next_slot += 1
        self._z_slot = prefix_slot[n - 1]
        self._z_labels = prefix_lab[n - 1]

        grad_ops = []
        suffix_slot = {n - 1: n - 1}
        suffix_lab = {n - 1: labels[n - 1]}
        for v in range(n - 2, 0, -1):
            op, out_lab = _fold_op(labels[v], suffix_lab[v + 1], v,
                                   suffix_slot[v + 1], next_slot)
            grad_ops.append(op)
            suffix_slot[v] = next_slot
            suffix_lab[v] = out_lab
            next_slot += 1

        self._copyouts = []
        for v in range(n):
            cur_slot, cur_lab = e_slot, e_labels
            if v > 0:
                op, cur_lab = _fold_op(cur_lab, prefix_lab[v - 1], cur_slot,
                                       prefix_slot[v - 1], next_slot)
                grad_ops.append(op)
                cur_slot = next_slot
                next_slot += 1
            if v < n - 1:
                op, cur_lab = _fold_op(cur_lab, suffix_lab[v + 1], cur_slot,
                                       suffix_slot[v + 1], next_slot)
                grad_ops.append(op)
                cur_slot = next_slot
                next_slot += 1
            want = [lab for lab, _ in core_labels[v]]
            got = [lab for lab, _ in cur_lab]
            if sorted(map(repr, want)) != sorted(map(repr, got)):
                raise AssertionError(f"environment labels mismatch at core {v}")
            perm = tuple(got.index(lab) for lab in want)
            if perm == tuple(range(len(perm))):
                perm = None
            self._copyouts.append((cur_slot, perm, int(self.offsets[v]),
                                   self.core_sizes[v], self.core_shapes[v]))

        self._fwd_ops = tuple(fwd_ops)
        self._grad_ops = tuple(grad_ops)
        self._n_slots = next_slot
        self._slots = [None] * self._n_slots
        self._grad = np.empty(self.n_params)

    # -- parameter packing -------------------------------------------------

    def core_views(self, theta: np.ndarray) -> list[np.ndarray]:
        return [theta[self.offsets[v]:self.offsets[v + 1]].reshape(self.core_shapes[v])
                for v in range(len(self.core_shapes))]

    def pack(self, cores) -> np.ndarray:
        theta = np.empty(self.n_params)
        for v, core in enumerate(cores):
            theta[self.offsets[v]:self.offsets[v + 1]] = np.asarray(core).ravel()
        return theta

    # -- target preparation ------------------------------------------------

    def target_to_vertex_order(self, x: np.ndarray) -> np.ndarray:
        return np.ascontiguousarray(np.transpose(x, self.x_axes))

    def vertex_to_mode_order(self, z: np.ndarray) -> np.ndarray:
        return np.ascontiguousarray(np.transpose(z, self.out_axes))

    # -- evaluation ---------------------------------------------------------

    def forward(self, theta: np.ndarray) -> np.ndarray:
        """Network value with open axes in vertex order; keeps intermediates
        for the matching gradient() call."""
        slots = self._slots
        views = self.core_views(theta)
        for v, view in enumerate(views):
            slots[v] = view
        _run_ops(self._fwd_ops, slots)
        return slots[self._z_slot]

    def gradient(self, e_vtx: np.ndarray) -> np.ndarray:
        """d(1/2 ||e||^2)/d theta given e = Z - X (vertex order, masked by the
        caller); must follow a forward() on the same theta."""
        slots = self._slots
        slots[self._e_slot] = e_vtx
        _run_ops(self._grad_ops, slots)
        grad = self._grad
        for slot, perm, off, size, shape in self._copyouts:
            env = slots[slot]
            if perm is not None:
                env = env.transpose(perm)
            np.copyto(grad[off:off + size].reshape(env.shape), env)
        return grad

    def reconstruct(self, theta: np.ndarray) -> np.ndarray:
        """Network value with open axes in mode order."""
        return self.vertex_to_mode_order(self.forward(theta))
