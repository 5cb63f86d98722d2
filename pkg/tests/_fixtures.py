"""Small problems with polynomial data, one per system, shared across tests."""
import numpy as np

from fosls.fespace import make_product
from fosls.fields import expression_field
from fosls.mesh import build_reference_mesh, refine_uniform
from fosls.systems import make_system


def _xy(text):
    return expression_field(text)


def _tx(text):
    return expression_field(text, spacetime=True)


def fixture(name, refine=1):
    """(system, product space) for a named fixture."""
    if name == "poisson":
        mesh, sys = "unit_square", make_system("poisson", f=_xy("1 + x*y"))
    elif name == "helmholtz":
        mesh, sys = "unit_square", make_system("poisson", k=2.0, f=_xy("x - y"), g=[_xy("y"), _xy("0")])
    elif name == "elasticity":
        mesh, sys = "unit_square", make_system("elasticity", lam=1.5, mu=0.7, f=[_xy("1"), _xy("x")])
    elif name == "heat":
        mesh, sys = "spacetime_rect", make_system("heat", f=_tx("t*x"), u0=_tx("x*(1 - x)"))
    elif name == "wave":
        mesh, sys = "spacetime_rect", make_system("wave", f=_tx("x"), v0=_tx("x*(1 - x)"), sigma0=_tx("x"))
    elif name == "ocp_poisson":
        mesh, sys = "unit_square", make_system("ocp_poisson", lam_ocp=0.5, f=_xy("1"), z=_xy("x"))
    else:
        raise KeyError(name)
    m = refine_uniform(build_reference_mesh(mesh), refine)
    return sys, make_product(m, sys.tag)


FIXTURES = ("poisson", "helmholtz", "elasticity", "heat", "wave", "ocp_poisson")
PRODUCTS = ("poisson", "elasticity", "heat", "wave", "ocp_poisson")


def interior_points(mesh, n, rng):
    """n random barycentric points strictly inside every triangle: (points (nt*n, 2), owning triangle)."""
    lam = rng.dirichlet(np.ones(3), size=n)
    x = mesh.to_physical(np.arange(mesh.n_triangles), lam).reshape(-1, 2)
    return x, np.repeat(np.arange(mesh.n_triangles), n)


def fe_field(space, coeffs, comp, deriv=0, degree=1):
    """Field given by one jet entry of a discrete function (located pointwise)."""
    from fosls.fields import Field

    return Field(lambda x: space.evaluate(coeffs, x)[:, comp, deriv], degree, f"fe[{comp},{deriv}]")


def discrete_poisson_data(space, rng, with_u=True):
    """Random discrete pair (u*, sigma*) and data ``f = -div sigma*``, ``g = grad u* - sigma*``.

    The Poisson FoSLS residual of the pair vanishes identically.
    """
    from fosls.fields import Field

    c = rng.standard_normal(space.total_dim)
    if not with_u:
        c[:space.offsets[1]] = 0.0
    f = Field(lambda x: -(lambda j: j[:, 1, 1] + j[:, 2, 2])(space.evaluate(c, x)), 0, "-div")
    g = [Field(lambda x, d=d: (lambda j: j[:, 0, 1 + d] - j[:, 1 + d, 0])(space.evaluate(c, x)), 1, "g")
         for d in range(2)]
    return c, f, g
