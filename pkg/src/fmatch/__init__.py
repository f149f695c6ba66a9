"""Functional-map shape correspondence."""

from .descriptors import CombinationWeights, DescriptorSet, combine, hks, load_descriptors, positional, wks
from .evaluation import ErrorSummary, evaluate_map, geodesic_distances
from .fmap import (
    FmapSolveOptions,
    FunctionalMap,
    LossReport,
    ShapePair,
    energy_bijectivity,
    energy_lap_commutativity,
    energy_orthogonality,
    solve_fmap,
    total_loss,
    train_weights,
)
from .mesh import PoseNormalization, TriMesh, load_mesh, normalize_pose, save_mesh, vertex_areas
from .p2p import PointMap, fmap_to_p2p, p2p_to_fmap, zoomout
from .partial import (
    AlignmentMatrix,
    PartialConfig,
    PartialPair,
    estimate_rank,
    offdiag_energy,
    partial_p2p,
    partial_train_weights,
    solve_alignment,
)
from .report import write_report
from .spectral import (
    LaplacianPair,
    SpectralBasis,
    build_laplacian,
    eigenbasis,
    mesh_eigenbasis,
    project,
    reconstruct,
)

__version__ = "0.1.0"
