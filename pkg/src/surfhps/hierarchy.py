"""Hierarchical merging of element operators into a reusable factorization.

Pairs of clusters are glued by eliminating their shared edge-grid nodes:
the interface matrix (sum of the two DtN restrictions to the shared
nodes) is LU-factored, yielding an interface solution operator, a merged
DtN map, and a merged particular flux. Interface factorizations are
retained so new right-hand sides update in a single cheap upward sweep.

On a closed surface with a pure second-order operator the final
interface matrix is rank-one deficient; it is repaired by a rank-one
update built from the interface quadrature weights.
"""

from __future__ import annotations

import json
import struct
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgWarning, block_diag, lu_factor, lu_solve

from .exceptions import (
    FactorizationCacheError,
    ShapeMismatchError,
    SingularMergeError,
)
from .leaf import LeafOperators, factor_leaf, leaf_particular
from .mesh import MergeTree, build_merge_tree
from .surface_ops import CoefficientField, MeshOperators, coefficient_magnitudes

_COND_LIMIT = 1e12


@dataclass
class MergeNode:
    """One pairwise merge: index maps, factored interface matrix, operators."""

    alpha: int
    beta: int
    shared_a: np.ndarray        # positions of shared nodes in alpha's boundary
    shared_b: np.ndarray        # aligned positions in beta's boundary
    keep_a: np.ndarray          # surviving positions in alpha's boundary
    keep_b: np.ndarray
    interface_lu: tuple
    interface_op: np.ndarray    # shared x merged-boundary solution operator
    flux_coupling: np.ndarray   # merged-boundary x shared DtN block
    dtn: np.ndarray             # merged DtN map
    v_interface: np.ndarray     # particular values on the shared nodes
    v_flux: np.ndarray          # merged particular flux
    keys: list
    fix_q: np.ndarray | None = None
    fix_w: np.ndarray | None = None  # left null direction of the unfixed matrix

    def nbytes(self) -> int:
        total = 0
        for arr in (self.interface_lu[0], self.interface_op,
                    self.flux_coupling, self.dtn, self.v_interface,
                    self.v_flux):
            total += arr.nbytes
        return total


def _lu_with_check(A: np.ndarray):
    """LU factor plus a cheap condition estimate from the U diagonal."""
    with warnings.catch_warnings():
        # singularity is detected via the condition estimate
        warnings.simplefilter("ignore", LinAlgWarning)
        lu, piv = lu_factor(A, check_finite=False)
    d = np.abs(np.diag(lu))
    dmax = d.max() if d.size else 1.0
    cond = np.inf if d.size == 0 or d.min() == 0.0 else dmax / d.min()
    return (lu, piv), cond


def merge_pair(
    keys_a: list, dtn_a: np.ndarray, vflux_a: np.ndarray,
    keys_b: list, dtn_b: np.ndarray, vflux_b: np.ndarray,
    alpha: int = 0, beta: int = 1,
    fix_weights=None,
):
    """Glue two factored clusters along all edges they share.

    Shared boundary nodes are identified by key equality; their ordering
    follows the first cluster's boundary list. ``fix_weights`` maps a key
    to its interface quadrature weight and enables the closed-surface
    rank-one repair when the interface matrix is singular.
    """
    pos_b = {k: i for i, k in enumerate(keys_b)}
    set_b = set(keys_b)
    shared_a, shared_b = [], []
    keep_a = []
    for i, k in enumerate(keys_a):
        if k in set_b:
            shared_a.append(i)
            shared_b.append(pos_b[k])
        else:
            keep_a.append(i)
    set_shared = {keys_a[i] for i in shared_a}
    keep_b = [i for i, k in enumerate(keys_b) if k not in set_shared]
    if not shared_a:
        raise ShapeMismatchError(
            f"clusters {alpha} and {beta} share no boundary nodes"
        )
    sa = np.array(shared_a, dtype=np.int64)
    sb = np.array(shared_b, dtype=np.int64)
    ka = np.array(keep_a, dtype=np.int64)
    kb = np.array(keep_b, dtype=np.int64)

    A = dtn_a[np.ix_(sa, sa)] + dtn_b[np.ix_(sb, sb)]
    lu, cond = _lu_with_check(A)
    fix_q = None
    fix_w = None
    if cond > _COND_LIMIT:
        if fix_weights is None:
            raise SingularMergeError(
                f"interface matrix of merge ({alpha},{beta}) is singular "
                f"(condition estimate {cond:.2e}); local operator resonance"
            )
        q = np.array([fix_weights(keys_a[i]) for i in shared_a])
        q /= np.linalg.norm(q)
        lu, cond = _lu_with_check(A + np.outer(q, q))
        if cond > _COND_LIMIT:
            raise SingularMergeError(
                f"interface matrix of merge ({alpha},{beta}) remains "
                f"singular after rank-one repair (cond {cond:.2e})"
            )
        fix_q = q
        # Left null direction of the unfixed matrix: solving the fixed
        # transpose against q lands exactly in it. Right-hand sides get
        # projected onto the range so the repaired solve stays consistent.
        w = lu_solve(lu, q.astype(A.dtype), trans=1, check_finite=False)
        fix_w = w / np.linalg.norm(w)

    rhs = np.hstack([dtn_a[np.ix_(sa, ka)], dtn_b[np.ix_(sb, kb)]])
    S_I = lu_solve(lu, -rhs, check_finite=False)
    coupling = np.vstack([dtn_a[np.ix_(ka, sa)], dtn_b[np.ix_(kb, sb)]])
    dtn_m = block_diag(dtn_a[np.ix_(ka, ka)], dtn_b[np.ix_(kb, kb)])
    dtn_m += coupling @ S_I
    rhs_v = -(vflux_a[sa] + vflux_b[sb])
    if fix_w is not None:
        rhs_v = rhs_v - fix_w * (fix_w @ rhs_v)
    v_I = lu_solve(lu, rhs_v, check_finite=False)
    v_flux = np.concatenate([vflux_a[ka], vflux_b[kb]]) + coupling @ v_I
    keys = [keys_a[i] for i in keep_a] + [keys_b[i] for i in keep_b]

    return MergeNode(
        alpha=alpha, beta=beta, shared_a=sa, shared_b=sb, keep_a=ka,
        keep_b=kb, interface_lu=lu, interface_op=S_I,
        flux_coupling=coupling, dtn=dtn_m, v_interface=v_I, v_flux=v_flux,
        keys=keys, fix_q=fix_q, fix_w=fix_w,
    )


@dataclass
class Factorization:
    """The full operator hierarchy, reusable across loads and boundary data.

    Contains no per-right-hand-side state other than the particular
    solution/flux slots, which :func:`update_rhs` replaces in one upward
    sweep without touching any solution operator.
    """

    mesh_ops: MeshOperators
    tree: MergeTree
    leaves: list[LeafOperators]
    nodes: dict[int, MergeNode]
    root: int
    root_keys: list
    closed: bool
    meta: dict = field(default_factory=dict)
    fixed_root: bool = False

    @property
    def mesh(self):
        return self.mesh_ops.mesh

    def is_leaf(self, cid: int) -> bool:
        return cid < len(self.leaves)

    def cluster_flux(self, cid: int) -> np.ndarray:
        return self.leaves[cid].v_flux if self.is_leaf(cid) else self.nodes[cid].v_flux

    def cluster_dtn(self, cid: int) -> np.ndarray:
        return self.leaves[cid].dtn if self.is_leaf(cid) else self.nodes[cid].dtn

    def boundary_size(self) -> int:
        return len(self.root_keys)

    def boundary_coords(self) -> np.ndarray:
        if not self.root_keys:
            return np.zeros((0, 3))
        return np.array([self.mesh_ops.key_coords(k) for k in self.root_keys])

    def nbytes(self) -> int:
        return (sum(lf.nbytes() for lf in self.leaves)
                + sum(nd.nbytes() for nd in self.nodes.values()))


def _normalize_loads(mesh_ops: MeshOperators, f) -> list[np.ndarray] | None:
    if f is None:
        return None
    n = (mesh_ops.order + 1) ** 2
    n_el = mesh_ops.mesh.n_elements
    if callable(f):
        return [np.asarray(f(*ops.element.nodes.T)) + np.zeros(n)
                for ops in mesh_ops.elements]
    arrays = [np.asarray(a) for a in f]
    if len(arrays) != n_el or any(a.shape != (n,) for a in arrays):
        raise ShapeMismatchError(
            f"load must give {n_el} arrays of {n} samples each"
        )
    return arrays


def build_factorization(
    mesh_ops: MeshOperators,
    coeff: CoefficientField,
    tree: MergeTree | None = None,
    f=None,
    threads: int = 1,
    meta: dict | None = None,
) -> Factorization:
    """Factor all leaves and run the upward merge pass (Algorithms at once).

    The leaf stage is element-parallel; merges within a level are
    independent and may also run in parallel. For a closed surface with a
    pure second-order operator, a singular final merge is repaired with
    the rank-one quadrature fix and the repair is recorded.
    """
    mesh = mesh_ops.mesh
    tree = tree or build_merge_tree(mesh)
    ref = mesh_ops.ref

    sampled = [coeff.sample(ops.element.nodes, ops.element.id)
               for ops in mesh_ops.elements]
    mags = [coefficient_magnitudes(s) for s in sampled]
    max_a = max(m[0] for m in mags)
    max_b = max(m[1] for m in mags)
    max_c = max(m[2] for m in mags)
    pure_second_order = max_a > 0 and max_b == 0.0 and max_c == 0.0

    def _leaf(i):
        return factor_leaf(mesh_ops.elements[i], coeff, ref, sampled[i])

    idx = range(mesh.n_elements)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            leaves = list(pool.map(_leaf, idx))
    else:
        leaves = [_leaf(i) for i in idx]

    keys: dict[int, list] = {
        i: mesh_ops.leaf_boundary_keys(i) for i in range(mesh.n_elements)
    }
    nodes: dict[int, MergeNode] = {}
    parent_of = {ch: cid for cid, ch in tree.children.items() if ch is not None}

    fact = Factorization(
        mesh_ops=mesh_ops, tree=tree, leaves=leaves, nodes=nodes,
        root=tree.root, root_keys=[], closed=mesh.closed,
        meta=dict(meta or {}),
    )

    def _merge(pair):
        a, b = pair
        parent = parent_of[(a, b)]
        allow_fix = (
            parent == tree.root and mesh.closed and pure_second_order
        )
        node = merge_pair(
            keys.pop(a), fact.cluster_dtn(a), fact.cluster_flux(a),
            keys.pop(b), fact.cluster_dtn(b), fact.cluster_flux(b),
            alpha=a, beta=b,
            fix_weights=mesh_ops.key_quadrature if allow_fix else None,
        )
        return parent, node

    for level in tree.levels:
        if threads > 1 and len(level) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(_merge, level))
        else:
            results = [_merge(pair) for pair in level]
        for parent, node in results:
            nodes[parent] = node
            keys[parent] = node.keys

    fact.root_keys = keys[tree.root]
    fact.fixed_root = any(nd.fix_q is not None for nd in nodes.values())
    if f is not None:
        update_rhs(fact, f, threads=threads)
    return fact


def update_rhs(fact: Factorization, f, threads: int = 1) -> Factorization:
    """Replace all particular solutions/fluxes for a new load.

    Reuses every stored interior and interface factorization; no solution
    operator or DtN map is recomputed. Cost is a single upward sweep.
    """
    loads = _normalize_loads(fact.mesh_ops, f)
    ref = fact.mesh_ops.ref

    def _leaf_update(i):
        leaf = fact.leaves[i]
        if loads is None:
            leaf.v = np.zeros_like(leaf.v)
            leaf.v_flux = np.zeros_like(leaf.v_flux)
        else:
            leaf.v, leaf.v_flux = leaf_particular(
                leaf, fact.mesh_ops.elements[i], ref, loads[i]
            )

    idx = range(len(fact.leaves))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(_leaf_update, idx))
    else:
        for i in idx:
            _leaf_update(i)

    parent_of = {ch: cid for cid, ch in fact.tree.children.items() if ch is not None}

    def _node_update(pair):
        a, b = pair
        node = fact.nodes[parent_of[(a, b)]]
        vf_a = fact.cluster_flux(a)
        vf_b = fact.cluster_flux(b)
        rhs_v = -(vf_a[node.shared_a] + vf_b[node.shared_b])
        if node.fix_w is not None:
            rhs_v = rhs_v - node.fix_w * (node.fix_w @ rhs_v)
        node.v_interface = lu_solve(node.interface_lu, rhs_v, check_finite=False)
        node.v_flux = (
            np.concatenate([vf_a[node.keep_a], vf_b[node.keep_b]])
            + node.flux_coupling @ node.v_interface
        )

    for level in fact.tree.levels:
        if threads > 1 and len(level) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(_node_update, level))
        else:
            for pair in level:
                _node_update(pair)
    return fact


# ---------------------------------------------------------------------------
# Binary cache format
# ---------------------------------------------------------------------------

_MAGIC = b"SHPSFACT"
_VERSION = 1


def _write_array(fh, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr)
    if arr.dtype == np.complex128:
        tag = b"c"
        data = arr.astype("<c16").tobytes()
    elif arr.dtype in (np.int64, np.int32):
        tag = b"i"
        data = arr.astype("<i8").tobytes()
    else:
        tag = b"d"
        data = arr.astype("<f8").tobytes()
    fh.write(tag)
    fh.write(struct.pack("<B", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}q", *arr.shape))
    fh.write(data)


def _read_array(fh) -> np.ndarray:
    tag = fh.read(1)
    (ndim,) = struct.unpack("<B", fh.read(1))
    shape = struct.unpack(f"<{ndim}q", fh.read(8 * ndim))
    count = int(np.prod(shape)) if shape else 1
    if tag == b"c":
        arr = np.frombuffer(fh.read(16 * count), dtype="<c16")
    elif tag == b"i":
        arr = np.frombuffer(fh.read(8 * count), dtype="<i8")
    elif tag == b"d":
        arr = np.frombuffer(fh.read(8 * count), dtype="<f8")
    else:
        raise FactorizationCacheError(f"corrupt array tag {tag!r}")
    return arr.reshape(shape).copy()


def save_factorization(fact: Factorization, path, signature: str = "") -> None:
    """Serialize a factorization to a binary cache file."""
    tree = fact.tree
    header = {
        "version": _VERSION,
        "n_elements": fact.mesh.n_elements,
        "order": fact.mesh_ops.order,
        "closed": fact.closed,
        "signature": signature,
        "meta": fact.meta,
        "root": fact.root,
        "levels": [[list(pair) for pair in lv] for lv in tree.levels],
        "children": {str(c): list(ch) for c, ch in tree.children.items()
                     if ch is not None},
        "root_keys": [list(k) for k in fact.root_keys],
        "fixed_root": fact.fixed_root,
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<q", len(blob)))
        fh.write(blob)
        for leaf in fact.leaves:
            _write_array(fh, leaf.solution_op)
            _write_array(fh, leaf.dtn)
            _write_array(fh, leaf.interior_lu[0])
            _write_array(fh, leaf.interior_lu[1].astype(np.int64))
            _write_array(fh, leaf.row_scale)
            _write_array(fh, leaf.rhs_coupling)
            _write_array(fh, leaf.v)
            _write_array(fh, leaf.v_flux)
        for level in tree.levels:
            for a, b in level:
                node = fact.nodes[_parent_of(tree, a, b)]
                _write_array(fh, node.shared_a)
                _write_array(fh, node.shared_b)
                _write_array(fh, node.keep_a)
                _write_array(fh, node.keep_b)
                _write_array(fh, node.interface_lu[0])
                _write_array(fh, node.interface_lu[1].astype(np.int64))
                _write_array(fh, node.interface_op)
                _write_array(fh, node.flux_coupling)
                _write_array(fh, node.dtn)
                _write_array(fh, node.v_interface)
                _write_array(fh, node.v_flux)
                has_fix = node.fix_q is not None
                fh.write(struct.pack("<B", int(has_fix)))
                if has_fix:
                    _write_array(fh, node.fix_q)
                    _write_array(fh, node.fix_w)


def _parent_of(tree: MergeTree, a: int, b: int) -> int:
    for cid, ch in tree.children.items():
        if ch == (a, b):
            return cid
    raise KeyError((a, b))


def load_factorization(path, mesh_ops: MeshOperators, signature: str = "") -> Factorization:
    """Load a factorization cache written by :func:`save_factorization`."""
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise FactorizationCacheError(f"{path}: not a factorization cache")
        (blen,) = struct.unpack("<q", fh.read(8))
        header = json.loads(fh.read(blen).decode("utf-8"))
        if header["version"] != _VERSION:
            raise FactorizationCacheError(
                f"unsupported cache version {header['version']}"
            )
        if header["signature"] != signature:
            raise FactorizationCacheError(
                "cache signature mismatch; refusing stale factorization"
            )
        mesh = mesh_ops.mesh
        if header["n_elements"] != mesh.n_elements or header["order"] != mesh_ops.order:
            raise FactorizationCacheError("cache does not match this mesh")

        n = mesh.n_elements
        leaves = []
        for i in range(n):
            S = _read_array(fh)
            dtn = _read_array(fh)
            lu = _read_array(fh)
            piv = _read_array(fh).astype(np.int32)
            row_scale = _read_array(fh)
            B = _read_array(fh)
            v = _read_array(fh)
            v_flux = _read_array(fh)
            leaves.append(LeafOperators(
                element_id=i, solution_op=S, dtn=dtn, interior_lu=(lu, piv),
                row_scale=row_scale, rhs_coupling=B, v=v, v_flux=v_flux,
            ))

        levels = [[tuple(pair) for pair in lv] for lv in header["levels"]]
        children = {i: None for i in range(n)}
        for c, ch in header["children"].items():
            children[int(c)] = tuple(ch)
        cluster_elements = {i: (i,) for i in range(n)}
        for level in levels:
            for a, b in level:
                parent = [c for c, ch in children.items() if ch == (a, b)][0]
                cluster_elements[parent] = tuple(
                    sorted(cluster_elements[a] + cluster_elements[b])
                )
        tree = MergeTree(levels, children, cluster_elements, header["root"])

        nodes = {}
        for level in levels:
            for a, b in level:
                shared_a = _read_array(fh)
                shared_b = _read_array(fh)
                keep_a = _read_array(fh)
                keep_b = _read_array(fh)
                lu = _read_array(fh)
                piv = _read_array(fh).astype(np.int32)
                S_I = _read_array(fh)
                coupling = _read_array(fh)
                dtn = _read_array(fh)
                v_I = _read_array(fh)
                v_flux = _read_array(fh)
                (has_fix,) = struct.unpack("<B", fh.read(1))
                fix_q = _read_array(fh) if has_fix else None
                fix_w = _read_array(fh) if has_fix else None
                nodes[_parent_of(tree, a, b)] = MergeNode(
                    alpha=a, beta=b, shared_a=shared_a, shared_b=shared_b,
                    keep_a=keep_a, keep_b=keep_b, interface_lu=(lu, piv),
                    interface_op=S_I, flux_coupling=coupling, dtn=dtn,
                    v_interface=v_I, v_flux=v_flux, keys=[], fix_q=fix_q,
                    fix_w=fix_w,
                )

        return Factorization(
            mesh_ops=mesh_ops, tree=tree, leaves=leaves, nodes=nodes,
            root=header["root"],
            root_keys=[tuple(k) for k in header["root_keys"]],
            closed=header["closed"], meta=header["meta"],
            fixed_root=header["fixed_root"],
        )
