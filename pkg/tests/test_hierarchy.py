import numpy as np
import pytest

from surfhps import (
    CoefficientField,
    FactorizationCacheError,
    ShapeMismatchError,
    SingularMergeError,
    build_factorization,
    build_merge_tree,
    generate_cube,
    generate_cubed_sphere,
    generate_torus,
    load_factorization,
    merge_pair,
    save_factorization,
    update_rhs,
)
from surfhps.mesh import MergeTree
from surfhps.solve import solve
from surfhps.surface_ops import MeshOperators

from helpers import (
    flat_mesh,
    random_smooth_coefficients,
    smooth_load,
    smooth_scalar,
    two_element_mesh,
    variable_c_field,
)
from dense_oracle import MonolithicSystem


def hierarchical_solution(ops, coeff, f, g=None, tree=None):
    fact = build_factorization(ops, coeff, tree=tree)
    update_rhs(fact, f)
    gv = None
    if g is not None:
        c = fact.boundary_coords()
        gv = g(c[:, 0], c[:, 1], c[:, 2])
    return solve(fact, gv), fact


def oracle_match(mesh, coeff, g=None, singular=False, tree=None):
    ops = MeshOperators(mesh)
    mono = MonolithicSystem(ops, coeff)
    f = [smooth_load(*eo.element.nodes.T) for eo in ops.elements]
    if singular:
        f = mono.project_consistent(f)
    ref_vals = mono.solve(f, g_fn=g, singular=singular)
    sol, _ = hierarchical_solution(ops, coeff, f, g, tree)
    a = np.concatenate(sol.values)
    b = np.concatenate(ref_vals)
    if singular:
        a = a - a.mean()
        b = b - b.mean()
    return np.abs(a - b).max() / max(np.abs(b).max(), 1e-30)


class TestMergePair:
    def test_two_flat_elements_vs_dense(self):
        assert oracle_match(two_element_mesh(8),
                            CoefficientField.laplace_beltrami(),
                            g=smooth_scalar) <= 1e-10

    def test_constant_data_constant_interface(self):
        mesh = two_element_mesh(8)
        ops = MeshOperators(mesh)
        fact = build_factorization(ops, CoefficientField.laplace_beltrami())
        node = fact.nodes[fact.root]
        n_b = node.keep_a.size + node.keep_b.size
        w = node.interface_op @ np.ones(n_b)
        assert np.abs(w - 1.0).max() <= 1e-9
        flux = fact.nodes[fact.root].dtn @ np.ones(n_b)
        assert np.abs(flux).max() <= 1e-8 * np.abs(node.dtn).max()

    def test_zero_loads_zero_particular(self):
        mesh = two_element_mesh(6)
        ops = MeshOperators(mesh)
        fact = build_factorization(ops, CoefficientField.laplace_beltrami())
        node = fact.nodes[fact.root]
        assert not node.v_interface.any()
        assert not node.v_flux.any()

    def test_no_shared_nodes_error(self):
        with pytest.raises(ShapeMismatchError):
            merge_pair(
                [(0, 0, 0)], np.eye(1), np.zeros(1),
                [(1, 0, 0)], np.eye(1), np.zeros(1),
            )

    def test_singular_merge_error(self):
        keys = [(0, 0, k) for k in range(3)]
        dtn = np.zeros((3, 3))
        with pytest.raises(SingularMergeError):
            merge_pair(keys, dtn, np.zeros(3), keys, dtn, np.zeros(3))


class TestOracleEquivalence:
    @pytest.mark.parametrize("coeff_fn,singular", [
        (CoefficientField.laplace_beltrami, False),
        (variable_c_field, False),
        (random_smooth_coefficients, False),
    ])
    def test_open_meshes(self, coeff_fn, singular):
        for mesh in (two_element_mesh(7), flat_mesh(2, 2, 6), flat_mesh(3, 1, 6)):
            assert oracle_match(mesh, coeff_fn(), g=smooth_scalar) <= 1e-9

    @pytest.mark.parametrize("mesh_fn", [
        lambda: generate_cube(0, 7),
        lambda: generate_cubed_sphere(0, 7),
    ])
    def test_closed_meshes(self, mesh_fn):
        mesh = mesh_fn()
        assert oracle_match(mesh, CoefficientField.laplace_beltrami(),
                            singular=True) <= 1e-9
        assert oracle_match(mesh, variable_c_field()) <= 1e-9
        assert oracle_match(mesh, random_smooth_coefficients()) <= 1e-9

    def test_complex_coefficients(self):
        coeff = CoefficientField(a11=1 + 0.5j, a22=1 + 0.5j, a33=1 + 0.5j,
                                 c=-1.0 + 0.2j)
        assert oracle_match(two_element_mesh(6), coeff, g=smooth_scalar) <= 1e-10


class TestRankOneFix:
    def test_root_deficiency_detected_and_repaired(self):
        mesh = generate_cubed_sphere(0, 8)
        ops = MeshOperators(mesh)
        fact = build_factorization(ops, CoefficientField.laplace_beltrami())
        assert fact.fixed_root
        root = fact.nodes[fact.root]
        assert root.fix_q is not None
        dtn_a = fact.cluster_dtn(root.alpha)
        dtn_b = fact.cluster_dtn(root.beta)
        A = dtn_a[np.ix_(root.shared_a, root.shared_a)] \
            + dtn_b[np.ix_(root.shared_b, root.shared_b)]
        sv = np.linalg.svd(A, compute_uv=False)
        assert sv[-1] <= 1e-10 * sv[0]      # deficient before the repair
        sv_fixed = np.linalg.svd(A + np.outer(root.fix_q, root.fix_q),
                                 compute_uv=False)
        assert sv_fixed[-1] > 1e-10 * sv_fixed[0]

    def test_only_root_fixed(self):
        mesh = generate_cubed_sphere(1, 6)
        ops = MeshOperators(mesh)
        fact = build_factorization(ops, CoefficientField.laplace_beltrami())
        fixed = [cid for cid, nd in fact.nodes.items() if nd.fix_q is not None]
        assert fixed == [fact.root]

    def test_shifted_operator_needs_no_fix(self):
        mesh = generate_cubed_sphere(0, 8)
        ops = MeshOperators(mesh)
        fact = build_factorization(ops, CoefficientField.helmholtz_beltrami(-1.0))
        assert not fact.fixed_root


class TestUpdateRhs:
    def test_matches_build_with_load(self):
        mesh = generate_torus(2.0, 1.0, 4, 4, 6)
        ops = MeshOperators(mesh)
        coeff = variable_c_field()
        f = [smooth_load(*eo.element.nodes.T) for eo in ops.elements]
        fact1 = build_factorization(ops, coeff, f=f)
        sol1 = solve(fact1)
        fact2 = build_factorization(ops, coeff)
        update_rhs(fact2, f)
        sol2 = solve(fact2)
        a, b = np.concatenate(sol1.values), np.concatenate(sol2.values)
        assert np.abs(a - b).max() <= 1e-12 * max(1, np.abs(a).max())

    def test_zero_load_clears_particular(self):
        mesh = two_element_mesh(5)
        ops = MeshOperators(mesh)
        fact = build_factorization(ops, CoefficientField.laplace_beltrami())
        update_rhs(fact, [smooth_load(*eo.element.nodes.T) for eo in ops.elements])
        update_rhs(fact, None)
        assert not any(lf.v.any() for lf in fact.leaves)
        assert not any(nd.v_interface.any() for nd in fact.nodes.values())

    def test_shape_error(self):
        mesh = two_element_mesh(5)
        ops = MeshOperators(mesh)
        fact = build_factorization(ops, CoefficientField.laplace_beltrami())
        with pytest.raises(ShapeMismatchError):
            update_rhs(fact, [np.zeros(4)])


class TestTreeIndependence:
    def test_merge_associativity(self):
        mesh = flat_mesh(2, 2, 7)
        # elements: 0=(x0,y0) 1=(x0,y1) 2=(x1,y0) 3=(x1,y1)
        tree_a = MergeTree(
            levels=[[(0, 1), (2, 3)], [(4, 5)]],
            children={0: None, 1: None, 2: None, 3: None,
                      4: (0, 1), 5: (2, 3), 6: (4, 5)},
            cluster_elements={0: (0,), 1: (1,), 2: (2,), 3: (3,),
                              4: (0, 1), 5: (2, 3), 6: (0, 1, 2, 3)},
            root=6,
        )
        tree_b = MergeTree(
            levels=[[(0, 2), (1, 3)], [(4, 5)]],
            children={0: None, 1: None, 2: None, 3: None,
                      4: (0, 2), 5: (1, 3), 6: (4, 5)},
            cluster_elements={0: (0,), 1: (1,), 2: (2,), 3: (3,),
                              4: (0, 2), 5: (1, 3), 6: (0, 1, 2, 3)},
            root=6,
        )
        ops = MeshOperators(mesh)
        coeff = random_smooth_coefficients()
        f = [smooth_load(*eo.element.nodes.T) for eo in ops.elements]
        sol_a, _ = hierarchical_solution(ops, coeff, f, smooth_scalar, tree_a)
        sol_b, _ = hierarchical_solution(ops, coeff, f, smooth_scalar, tree_b)
        a, b = np.concatenate(sol_a.values), np.concatenate(sol_b.values)
        assert np.abs(a - b).max() <= 1e-10 * max(1, np.abs(a).max())

    def test_pass_through_cluster(self):
        mesh = flat_mesh(3, 1, 6)
        tree = MergeTree(
            levels=[[(0, 1)], [(3, 2)]],
            children={0: None, 1: None, 2: None, 3: (0, 1), 4: (3, 2)},
            cluster_elements={0: (0,), 1: (1,), 2: (2,),
                              3: (0, 1), 4: (0, 1, 2)},
            root=4,
        )
        assert oracle_match(mesh, variable_c_field(), g=smooth_scalar,
                            tree=tree) <= 1e-10


class TestSharpEdges:
    def test_cube_manufactured_solution(self):
        # per-face-smooth field with vanishing edge fluxes from both sides;
        # traces are cubic, so the discrete solution is exact
        phi = lambda t: t**3 - 3.0 * t
        dphi2 = lambda t: 6.0 * t

        mesh = generate_cube(0, 8)
        ops = MeshOperators(mesh)

        u_els, f_els = [], []
        for eo in ops.elements:
            pts = eo.element.nodes
            nrm = eo.metric.normal[0]
            axis = int(np.argmax(np.abs(nrm)))
            tang = [c for c in range(3) if c != axis]
            u_els.append(phi(pts[:, 0]) + phi(pts[:, 1]) + phi(pts[:, 2]))
            f_els.append(dphi2(pts[:, tang[0]]) + dphi2(pts[:, tang[1]]))

        fact = build_factorization(ops, CoefficientField.laplace_beltrami())
        update_rhs(fact, f_els)
        sol = solve(fact)
        err = []
        for u, ue in zip(sol.values, u_els):
            err.append(u - ue)
        mu = ops.mean(err)
        worst = max(np.abs(e - mu).max() for e in err)
        assert worst <= 1e-10


class TestSymmetry:
    def test_mirror_symmetric_solution(self):
        # mirror in x: mesh, data, and discretization are all symmetric for
        # polynomial data, so the solution must mirror exactly
        p = 8
        mesh = flat_mesh(2, 1, p)
        ops = MeshOperators(mesh)
        fact = build_factorization(ops, CoefficientField.laplace_beltrami())
        g = lambda x, y, z: x**2 - y**2
        c = fact.boundary_coords()
        sol = solve(fact, g(c[:, 0], c[:, 1], c[:, 2]))
        # element 0 is the mirror of element 1; node (i, j) -> (i, p-j)
        U0 = sol.values[0].reshape(p + 1, p + 1, order="F")
        U1 = sol.values[1].reshape(p + 1, p + 1, order="F")
        assert np.abs(U0 - U1[:, ::-1]).max() <= 1e-10 * np.abs(U0).max()


class TestSerialization:
    def test_roundtrip_solve(self, tmp_path):
        mesh = generate_cubed_sphere(0, 6)
        ops = MeshOperators(mesh)
        coeff = CoefficientField.laplace_beltrami()
        f = [smooth_load(*eo.element.nodes.T) for eo in ops.elements]
        mono = MonolithicSystem(ops, coeff)
        f = mono.project_consistent(f)
        fact = build_factorization(ops, coeff, f=f)
        sol = solve(fact)

        path = tmp_path / "fact.bin"
        save_factorization(fact, path, signature="test-sig")
        fact2 = load_factorization(path, ops, signature="test-sig")
        # stored operators round-trip bit-exactly
        for lf1, lf2 in zip(fact.leaves, fact2.leaves):
            assert np.array_equal(lf1.solution_op, lf2.solution_op)
            assert np.array_equal(lf1.dtn, lf2.dtn)
            assert np.array_equal(lf1.v, lf2.v)
        for cid, nd1 in fact.nodes.items():
            nd2 = fact2.nodes[cid]
            assert np.array_equal(nd1.interface_op, nd2.interface_op)
            assert np.array_equal(nd1.v_interface, nd2.v_interface)
        assert fact2.root_keys == fact.root_keys
        # solves agree to rounding (matmuls on fresh buffers may differ by ulps)
        sol2 = solve(fact2)
        a, b = np.concatenate(sol.values), np.concatenate(sol2.values)
        assert np.abs(a - b).max() <= 1e-14 * max(1, np.abs(a).max())

        update_rhs(fact2, f)
        sol3 = solve(fact2)
        a, b = np.concatenate(sol.values), np.concatenate(sol3.values)
        assert np.abs(a - b).max() <= 1e-13

    def test_signature_mismatch(self, tmp_path):
        mesh = two_element_mesh(4)
        ops = MeshOperators(mesh)
        fact = build_factorization(ops, CoefficientField.laplace_beltrami())
        path = tmp_path / "fact.bin"
        save_factorization(fact, path, signature="a")
        with pytest.raises(FactorizationCacheError):
            load_factorization(path, ops, signature="b")

    def test_not_a_cache(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"garbage")
        mesh = two_element_mesh(4)
        ops = MeshOperators(mesh)
        with pytest.raises(FactorizationCacheError):
            load_factorization(path, ops)


def test_single_element_factorization():
    mesh = flat_mesh(1, 1, 6)
    ops = MeshOperators(mesh)
    fact = build_factorization(ops, CoefficientField.laplace_beltrami())
    assert not fact.nodes
    sol = solve(fact, smooth_scalar)
    # boundary data interpolates the smooth function; interior solves it
    assert np.isfinite(sol.values[0]).all()


def test_depth_and_memory_accounting():
    mesh = generate_torus(2.0, 1.0, 4, 4, 5)
    ops = MeshOperators(mesh)
    tree = build_merge_tree(mesh)
    fact = build_factorization(ops, CoefficientField.laplace_beltrami(), tree)
    assert len(fact.nodes) == mesh.n_elements - 1
    assert fact.nbytes() > 0
