"""Multi-objective 3D deformable image registration on dual dynamic
tetrahedral grids, with fold-free constraints, partial evaluations, a
multi-resolution schedule and an approximation-front archive."""

from .geometry import (
    barycentric,
    map_point,
    point_outside_border_polygon,
    point_outside_star,
    rasterize_tet,
    voxel_in_tet,
)
from .mesh import (
    GridTopology,
    Solution,
    build_topology,
    incident_tets,
    init_identity_solution,
    lattice_points,
    link_faces,
    refine_solution,
    transform_points,
)
from .multires import ScheduleResult, run_schedule
from .objectives import (
    ObjectiveVector,
    PartialEvalContext,
    check_feasibility,
    eval_all,
    eval_deformation,
    eval_dissimilarity,
    eval_guidance,
)
from .optimizer import (
    ElitistArchive,
    FosElement,
    Population,
    StageConfig,
    archive_insert,
    build_fos,
    dominates,
    gom_generation,
    hypervolume,
    initialize_population,
    run_optimization,
)
from .volume import (
    EMPTY_THRESHOLD,
    GuidanceSet,
    ImageVolume,
    RegistrationProblem,
    SyntheticConfig,
    dice,
    generate_synthetic_pair,
    load_guidance,
    load_volume,
    save_guidance,
    save_volume,
    trilinear_sample,
)

__version__ = "0.1.0"
