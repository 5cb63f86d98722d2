"""First-order system least-squares FEM with adaptivity and exact ReLU/BiSU network emulation."""
from .adapt import ConvergenceRecord, afem_run, mark_doerfler, mark_maximum
from .fespace import ProductSpace, make_product, make_space
from .lsq import assemble, error_norm, estimate, ls_value, solve
from .mesh import SimplicialMesh, build_reference_mesh, make_mesh, refine_nvb, refine_uniform
from .systems import SystemOperator, make_system

__version__ = "0.1.0"

__all__ = [
    "ConvergenceRecord", "afem_run", "mark_doerfler", "mark_maximum", "ProductSpace", "make_product",
    "make_space", "assemble", "error_norm", "estimate", "ls_value", "solve", "SimplicialMesh",
    "build_reference_mesh", "make_mesh", "refine_nvb", "refine_uniform", "SystemOperator", "make_system",
]
