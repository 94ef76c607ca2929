"""Fast direct solver for elliptic PDEs on high-order quadrilateral surface meshes."""

from .exceptions import (
    AmbiguousMeshError,
    BoundaryDataError,
    CoefficientEvaluationError,
    DegenerateElementError,
    DivergenceError,
    FactorizationCacheError,
    InvalidOrderError,
    MeshError,
    MeshParseError,
    MultipleComponentsError,
    NonconformingMeshError,
    ShapeMismatchError,
    SingularLeafError,
    SingularMergeError,
    StaleFactorizationError,
    SurfaceSolverError,
    TangencyError,
)
from .spectral import (
    Grid1D,
    cc_weights,
    cheb1_nodes,
    cheb2_nodes,
    diff_matrix,
    fejer1_weights,
    interp_matrix,
    tensor_diff,
)
from .mesh import (
    EAST,
    NORTH,
    SOUTH,
    WEST,
    EdgeRef,
    Element,
    MergeTree,
    SurfaceMesh,
    build_connectivity,
    build_merge_tree,
    generate_cube,
    generate_cubed_sphere,
    generate_torus,
    load_mesh,
    save_mesh,
    square_cross_section,
)
from .surface_ops import (
    CoefficientField,
    MeshOperators,
    MetricData,
    assemble_operator,
    binormal_operator,
    compute_metric,
    get_reference_ops,
    surface_diff_matrices,
)
from .leaf import LeafOperators, factor_leaf, leaf_particular
from .hierarchy import (
    Factorization,
    MergeNode,
    build_factorization,
    load_factorization,
    merge_pair,
    save_factorization,
    update_rhs,
)
from .solve import Solution, evaluate, interface_mismatch, solve, write_pointcloud
from .apps import (
    ImexIntegrator,
    ImexScheme,
    ReactionModel,
    TangentField,
    cross_normal,
    ginzburg_landau_model,
    hodge_decompose,
    imex_bdf_step,
    imex_factorization,
    laplace_beltrami_factorization,
    project_mean_zero,
    random_smooth_field,
    random_tangent_field,
    simulate_cgl,
    simulate_turing,
    solve_laplace_beltrami,
    surface_divergence,
    surface_gradient,
    turing_model,
)

__version__ = "0.1.0"
