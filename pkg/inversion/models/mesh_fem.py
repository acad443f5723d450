"""1D piecewise linear finite element kernels.

All nodal fields are 1-D ``numpy.ndarray`` objects with one value per mesh
node. Space-time fields are 2-D arrays of shape ``(levels, nodes)``.
"""
import dataclasses

import numpy as np
import scipy.linalg


class SingularMatrixError(ArithmeticError):
    """Raised when a tridiagonal system has a zero pivot."""

    def __init__(self, message, level=None):
        if level is not None:
            message = f"{message} (time level {level})"
        super().__init__(message)
        self.level = level


@dataclasses.dataclass(frozen=True)
class Mesh1D:
    """Uniform mesh of the interval [left_endpoint, right_endpoint]."""

    left_endpoint: float
    right_endpoint: float
    node_coords: np.ndarray
    element_count: int

    @property
    def node_count(self):
        return self.element_count + 1

    @property
    def h(self):
        return (self.right_endpoint - self.left_endpoint) / self.element_count

    @property
    def midpoints(self):
        return 0.5 * (self.node_coords[:-1] + self.node_coords[1:])


@dataclasses.dataclass(frozen=True)
class TriDiagMatrix:
    """Tridiagonal matrix stored by its three diagonals.

    Parameters
    ----------
    lower: np.ndarray
        Sub-diagonal, ``lower[i] = A[i + 1, i]``.
    diag: np.ndarray
        Main diagonal.
    upper: np.ndarray
        Super-diagonal, ``upper[i] = A[i, i + 1]``.
    """

    lower: np.ndarray
    diag: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        n = len(self.diag)
        if len(self.lower) != n - 1 or len(self.upper) != n - 1:
            raise ValueError(
                f"Inconsistent diagonals: main has {n} entries, "
                f"lower {len(self.lower)} and upper {len(self.upper)}."
            )

    @property
    def size(self):
        return len(self.diag)

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n - 1), np.zeros(n), np.zeros(n - 1))

    def __matmul__(self, vector):
        vector = np.asarray(vector, dtype=float)
        out = self.diag * vector
        out[:-1] += self.upper * vector[1:]
        out[1:] += self.lower * vector[:-1]
        return out

    def __add__(self, other):
        return TriDiagMatrix(
            self.lower + other.lower, self.diag + other.diag, self.upper + other.upper
        )

    def __sub__(self, other):
        return self + (-1.0) * other

    def __mul__(self, scalar):
        return TriDiagMatrix(scalar * self.lower, scalar * self.diag, scalar * self.upper)

    __rmul__ = __mul__

    def __abs__(self):
        return TriDiagMatrix(np.abs(self.lower), np.abs(self.diag), np.abs(self.upper))

    @property
    def T(self):
        return TriDiagMatrix(self.upper.copy(), self.diag.copy(), self.lower.copy())

    def to_banded(self):
        """Return the (3, n) layout expected by ``scipy.linalg.solve_banded``."""
        ab = np.zeros((3, self.size))
        ab[0, 1:] = self.upper
        ab[1, :] = self.diag
        ab[2, :-1] = self.lower
        return ab

    def to_dense(self):
        return (
            np.diag(self.diag) + np.diag(self.upper, k=1) + np.diag(self.lower, k=-1)
        )


def build_mesh(a, b, h, rtol=1e-9):
    """Build a uniform mesh of [a, b] with spacing h.

    Parameters
    ----------
    a: float
        Left endpoint.
    b: float
        Right endpoint.
    h: float
        Mesh size. (b - a) / h must be an integer up to ``rtol``.

    Returns
    -------
    Mesh1D
        The uniform mesh.
    """
    if not a < b:
        raise ValueError(f"Interval endpoints must satisfy a < b, got a={a}, b={b}.")
    if not h > 0:
        raise ValueError(f"Mesh size must be positive, got h={h}.")
    ratio = (b - a) / h
    element_count = int(round(ratio))
    if element_count < 1 or abs(ratio - element_count) > rtol * max(1.0, ratio):
        raise ValueError(
            f"Mesh size h={h} does not divide the interval [{a}, {b}] "
            f"((b - a) / h = {ratio})."
        )
    node_coords = np.linspace(a, b, element_count + 1)
    return Mesh1D(float(a), float(b), node_coords, element_count)


def assemble_mass(mesh):
    """Assemble the consistent P1 mass matrix (exact integration)."""
    h = mesh.h
    n = mesh.node_count
    diag = np.full(n, 2.0 * h / 3.0)
    diag[0] = diag[-1] = h / 3.0
    off = np.full(n - 1, h / 6.0)
    return TriDiagMatrix(off, diag, off.copy())


def assemble_weighted_stiffness(mesh, elem_weights):
    """Assemble the P1 stiffness matrix with one constant weight per element.

    Parameters
    ----------
    mesh: Mesh1D
        The mesh.
    elem_weights: np.ndarray
        Weight per element (length ``element_count``).

    Returns
    -------
    TriDiagMatrix
        Symmetric matrix with zero row sums.
    """
    weights = np.broadcast_to(np.asarray(elem_weights, dtype=float), (mesh.element_count,))
    if not np.all(np.isfinite(weights)):
        raise ValueError("Element weights must be finite.")
    scaled = weights / mesh.h
    diag = np.zeros(mesh.node_count)
    diag[:-1] += scaled
    diag[1:] += scaled
    off = -scaled
    return TriDiagMatrix(off.copy(), diag, off.copy())


def assemble_stiffness(mesh):
    """Unit-weight stiffness matrix."""
    return assemble_weighted_stiffness(mesh, np.ones(mesh.element_count))


def element_gradient(mesh, f):
    """Per-element constant gradient of a P1 field."""
    return np.diff(np.asarray(f, dtype=float)) / mesh.h


def element_midpoint_values(f):
    """P1 field evaluated at element midpoints."""
    f = np.asarray(f, dtype=float)
    return 0.5 * (f[:-1] + f[1:])


def solve_tridiagonal(A, rhs, level=None):
    """Solve ``A x = rhs`` with a banded LU factorization.

    Parameters
    ----------
    A: TriDiagMatrix
        Nonsingular system matrix.
    rhs: np.ndarray
        Right hand side (one value per row).
    level: Optional[int]
        Time level, only used to annotate failures.

    Returns
    -------
    np.ndarray
        The solution.

    Raises
    ------
    SingularMatrixError
        If the factorization meets a zero pivot or produces non-finite values.
    """
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape != (A.size,):
        raise ValueError(f"Right hand side has shape {rhs.shape}, expected ({A.size},).")
    try:
        x = scipy.linalg.solve_banded((1, 1), A.to_banded(), rhs)
    except (np.linalg.LinAlgError, ValueError) as err:
        raise SingularMatrixError(f"Tridiagonal solve failed: {err}", level=level) from err
    if not np.all(np.isfinite(x)):
        raise SingularMatrixError("Tridiagonal solve produced non-finite values", level=level)
    return x


def apply_dirichlet(A, rhs, nodes, values):
    """Impose Dirichlet values by row/column elimination.

    The eliminated columns are moved to the right hand side and the rows
    are replaced by identity rows, so the returned system stays symmetric
    when ``A`` is.

    Parameters
    ----------
    A: TriDiagMatrix
        System matrix.
    rhs: np.ndarray
        Right hand side.
    nodes: Sequence[int]
        Constrained node indices.
    values: Sequence[float]
        Prescribed values, one per node.

    Returns
    -------
    Tuple[TriDiagMatrix, np.ndarray]
        The modified matrix and right hand side.
    """
    lower, diag, upper = A.lower.copy(), A.diag.copy(), A.upper.copy()
    rhs = np.asarray(rhs, dtype=float).copy()
    n = A.size
    for node, value in zip(nodes, values):
        node = int(node) % n
        if node > 0:
            rhs[node - 1] -= upper[node - 1] * value
            upper[node - 1] = 0.0
            lower[node - 1] = 0.0
        if node < n - 1:
            rhs[node + 1] -= lower[node] * value
            lower[node] = 0.0
            upper[node] = 0.0
        diag[node] = 1.0
        rhs[node] = value
    return TriDiagMatrix(lower, diag, upper), rhs


def helmholtz_smooth(mesh, raw):
    """Solve ``(K + M) s = raw`` under homogeneous Neumann conditions.

    ``raw`` is an assembled dual vector; the result is the nodal H1 Riesz
    representative.
    """
    system = assemble_stiffness(mesh) + assemble_mass(mesh)
    return solve_tridiagonal(system, raw)


def l2_inner(mesh, f, g):
    return float(np.dot(f, assemble_mass(mesh) @ g))


def h1_semi_inner(mesh, f, g):
    return float(np.dot(f, assemble_stiffness(mesh) @ g))


def l2_norm(mesh, f):
    return np.sqrt(max(l2_inner(mesh, f, f), 0.0))


def h1_seminorm(mesh, f):
    return np.sqrt(max(h1_semi_inner(mesh, f, f), 0.0))


def h1_norm(mesh, f):
    """Full discrete H1 norm, the one induced by ``K + M``."""
    return np.sqrt(l2_norm(mesh, f) ** 2 + h1_seminorm(mesh, f) ** 2)


def trapezoid_weights(level_count, dt):
    """Composite trapezoid weights over ``level_count`` equispaced levels."""
    weights = np.full(level_count, dt)
    weights[0] = weights[-1] = 0.5 * dt
    return weights


def space_time_inner(mesh, dt, F, G, spatial=None):
    """Trapezoid-in-time integral of spatial inner products.

    Parameters
    ----------
    mesh: Mesh1D
        The mesh.
    dt: float
        Uniform time step.
    F, G: np.ndarray
        Space-time fields of shape (levels, nodes).
    spatial: Optional[TriDiagMatrix]
        Spatial Gram matrix, the mass matrix when omitted.
    """
    F = np.atleast_2d(F)
    G = np.atleast_2d(G)
    gram = assemble_mass(mesh) if spatial is None else spatial
    level_values = np.array([np.dot(f, gram @ g) for f, g in zip(F, G)])
    return float(np.dot(trapezoid_weights(len(level_values), dt), level_values))


def space_time_l2(mesh, grid, F):
    """L2(0, T; L2) norm, trapezoidal in time."""
    return np.sqrt(max(space_time_inner(mesh, grid.dt, F, F), 0.0))


def space_time_h1(mesh, grid, F):
    """L2(0, T; H1) norm, trapezoidal in time."""
    gram = assemble_stiffness(mesh) + assemble_mass(mesh)
    return np.sqrt(max(space_time_inner(mesh, grid.dt, F, F, spatial=gram), 0.0))
