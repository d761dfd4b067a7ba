"""D3Q27 lattice constants, flat-index maps for monomial variables, and
solid/fluid geometry oracles.

Everything in this module is exact integer (or rational) arithmetic on
zero-based grid coordinates; physical units never enter here.  The flat
ordering of the distribution variables f_i(x) is

    mu = Q * (x + n_x*y + n_x*n_y*z) + i,

extended lexicographically to second- and third-order monomial products.
Periodic wrap is applied on all three axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

Q = 27

#: Solid/fluid classification labels produced by :func:`classify`.
FLUID, SOLID = 0, 1


def velocity_component(i: int) -> np.ndarray:
    """Velocity vector c_i computed from the index alone.

    The x, y, z components cycle through {1, -1, 0} with periods 3, 9
    and 27 respectively; i=26 is the rest direction (0,0,0).
    """
    if not 0 <= i < Q:
        raise ValueError(f"direction index {i} outside [0, {Q})")
    return np.array(
        [
            (i + 2) % 3 - 1,
            (i // 3 + 2) % 3 - 1,
            (i // 9 + 2) % 3 - 1,
        ],
        dtype=np.int64,
    )


VELOCITIES = np.array([velocity_component(i) for i in range(Q)])
REST_INDEX = 26

_WEIGHT_BY_SPEED = {0: Fraction(8, 27), 1: Fraction(2, 27), 2: Fraction(1, 54), 3: Fraction(1, 216)}
WEIGHTS_EXACT = tuple(_WEIGHT_BY_SPEED[int(c @ c)] for c in VELOCITIES)
WEIGHTS = np.array([float(w) for w in WEIGHTS_EXACT])

#: i -> index of the opposite direction (c_opp = -c_i); an involution.
OPPOSITE = np.array(
    [i + VELOCITIES[i, 0] + 3 * VELOCITIES[i, 1] + 9 * VELOCITIES[i, 2] for i in range(Q)]
)

SPEED_OF_SOUND_SQ = Fraction(1, 3)


@dataclass(frozen=True)
class VelocitySet:
    """The D3Q27 velocity set: vectors, weights and the opposite map."""

    vectors: np.ndarray = field(default_factory=lambda: VELOCITIES.copy())
    weights: tuple = WEIGHTS_EXACT
    opposite: np.ndarray = field(default_factory=lambda: OPPOSITE.copy())
    speed_of_sound_sq: Fraction = SPEED_OF_SOUND_SQ

    def validate(self) -> None:
        assert sum(self.weights) == 1
        assert all(w > 0 for w in self.weights)
        for i in range(Q):
            j = int(self.opposite[i])
            assert int(self.opposite[j]) == i
            assert np.array_equal(self.vectors[j], -self.vectors[i])


@dataclass(frozen=True)
class GridSpec:
    """Node counts of the periodic simulation box (n stays a derived value)."""

    nx: int
    ny: int
    nz: int
    periodic: bool = True

    def __post_init__(self):
        if min(self.nx, self.ny, self.nz) < 1:
            raise ValueError("grid dimensions must be >= 1")

    @property
    def n(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def nq(self) -> int:
        return self.n * Q

    def shape(self) -> tuple[int, int, int]:
        """Array shape (nz, ny, nx) whose C-order flattening matches lx_index."""
        return (self.nz, self.ny, self.nx)

    def wrap(self, x) -> tuple[int, int, int]:
        return (x[0] % self.nx, x[1] % self.ny, x[2] % self.nz)

    def contains(self, x) -> bool:
        return 0 <= x[0] < self.nx and 0 <= x[1] < self.ny and 0 <= x[2] < self.nz


def lx_index(grid: GridSpec, x) -> int:
    """Position index alpha = x + n_x*y + n_x*n_y*z."""
    if not grid.contains(x):
        raise ValueError(f"node {tuple(x)} outside grid {grid.shape()[::-1]}")
    return int(x[0] + grid.nx * x[1] + grid.nx * grid.ny * x[2])


def lx_inverse(grid: GridSpec, alpha: int) -> tuple[int, int, int]:
    if not 0 <= alpha < grid.n:
        raise ValueError(f"position index {alpha} outside [0, {grid.n})")
    return (alpha % grid.nx, (alpha // grid.nx) % grid.ny, alpha // (grid.nx * grid.ny))


def l1_index(grid: GridSpec, x, i: int) -> int:
    """Flat index of the first-order variable f_i(x)."""
    if not 0 <= i < Q:
        raise ValueError(f"direction index {i} outside [0, {Q})")
    return Q * lx_index(grid, x) + i


def l1_inverse(grid: GridSpec, mu: int) -> tuple[tuple[int, int, int], int]:
    if not 0 <= mu < grid.nq:
        raise ValueError(f"variable index {mu} outside [0, {grid.nq})")
    return lx_inverse(grid, mu // Q), mu % Q


# Monomials are (node, direction) pairs; products of monomials index the
# columns of the quadratic and cubic collision matrices.
Monomial = tuple[tuple[int, int, int], int]


def l2_index(grid: GridSpec, m1: Monomial, m2: Monomial) -> int:
    """Flat index of the second-order monomial f_j(x_b) * f_k(x_g)."""
    (xb, j), (xg, k) = m1, m2
    if not (0 <= j < Q and 0 <= k < Q):
        raise ValueError("direction index outside [0, 27)")
    return Q * Q * (grid.n * lx_index(grid, xb) + lx_index(grid, xg)) + Q * j + k


def l2_inverse(grid: GridSpec, idx: int) -> tuple[Monomial, Monomial]:
    if not 0 <= idx < grid.nq**2:
        raise ValueError(f"second-order index {idx} out of range")
    k = idx % Q
    j = (idx // Q) % Q
    pos = idx // (Q * Q)
    beta, gamma = pos // grid.n, pos % grid.n
    return (lx_inverse(grid, beta), j), (lx_inverse(grid, gamma), k)


def l3_index(grid: GridSpec, m1: Monomial, m2: Monomial, m3: Monomial) -> int:
    """Flat index of the third-order monomial f_j(x_b) f_k(x_g) f_l(x_d)."""
    (xb, j), (xg, k), (xd, l) = m1, m2, m3
    if not (0 <= j < Q and 0 <= k < Q and 0 <= l < Q):
        raise ValueError("direction index outside [0, 27)")
    pos = (grid.n**2) * lx_index(grid, xb) + grid.n * lx_index(grid, xg) + lx_index(grid, xd)
    return Q**3 * pos + Q * Q * j + Q * k + l


def l3_inverse(grid: GridSpec, idx: int) -> tuple[Monomial, Monomial, Monomial]:
    if not 0 <= idx < grid.nq**3:
        raise ValueError(f"third-order index {idx} out of range")
    l = idx % Q
    k = (idx // Q) % Q
    j = (idx // (Q * Q)) % Q
    pos = idx // Q**3
    delta = pos % grid.n
    gamma = (pos // grid.n) % grid.n
    beta = pos // (grid.n**2)
    return (lx_inverse(grid, beta), j), (lx_inverse(grid, gamma), k), (lx_inverse(grid, delta), l)


# ---------------------------------------------------------------------------
# geometry oracles


@dataclass(frozen=True)
class SphereSolid:
    """Solid ball: nodes with |x - center|^2 <= radius^2 (H(0)=1 convention)."""

    center: tuple[float, float, float]
    radius: float
    kind: str = "sphere"

    def is_solid(self, x) -> bool:
        d2 = sum((float(a) - float(c)) ** 2 for a, c in zip(x, self.center))
        return self.radius**2 - d2 >= 0.0

    def solid_mask(self, grid: GridSpec) -> np.ndarray:
        zz, yy, xx = np.meshgrid(
            np.arange(grid.nz), np.arange(grid.ny), np.arange(grid.nx), indexing="ij"
        )
        d2 = (
            (xx - self.center[0]) ** 2
            + (yy - self.center[1]) ** 2
            + (zz - self.center[2]) ** 2
        )
        return self.radius**2 - d2 >= 0.0


@dataclass(frozen=True)
class PrismSolid:
    """Rectangular prism spanning origin to origin+extents.

    A node exactly on the lower face is solid, exactly on the upper face
    fluid; both follow from the H(0)=1 step convention.
    """

    origin: tuple[float, float, float]
    extents: tuple[float, float, float]
    kind: str = "prism"

    def is_solid(self, x) -> bool:
        return all(
            o <= float(a) < o + e for a, o, e in zip(x, self.origin, self.extents)
        )

    def solid_mask(self, grid: GridSpec) -> np.ndarray:
        zz, yy, xx = np.meshgrid(
            np.arange(grid.nz), np.arange(grid.ny), np.arange(grid.nx), indexing="ij"
        )
        m = np.ones(grid.shape(), dtype=bool)
        for arr, o, e in zip((xx, yy, zz), self.origin, self.extents):
            m &= (arr >= o) & (arr < o + e)
        return m


@dataclass(frozen=True)
class UnionOfPrisms:
    prisms: tuple[PrismSolid, ...]
    kind: str = "union_of_prisms"

    def is_solid(self, x) -> bool:
        return any(p.is_solid(x) for p in self.prisms)

    def solid_mask(self, grid: GridSpec) -> np.ndarray:
        m = np.zeros(grid.shape(), dtype=bool)
        for p in self.prisms:
            m |= p.solid_mask(grid)
        return m


@dataclass(frozen=True)
class AllFluid:
    kind: str = "all_fluid"

    def is_solid(self, x) -> bool:
        return False

    def solid_mask(self, grid: GridSpec) -> np.ndarray:
        return np.zeros(grid.shape(), dtype=bool)


def oracle_from_dict(spec: dict):
    """Build a geometry oracle from its JSON description (lattice coordinates)."""
    kind = spec.get("kind")
    if kind == "sphere":
        return SphereSolid(tuple(spec["center"]), float(spec["radius"]))
    if kind == "prism":
        return PrismSolid(tuple(spec["origin"]), tuple(spec["extents"]))
    if kind == "union_of_prisms":
        return UnionOfPrisms(
            tuple(PrismSolid(tuple(p["origin"]), tuple(p["extents"])) for p in spec["prisms"])
        )
    if kind == "all_fluid" or kind is None:
        return AllFluid()
    raise ValueError(f"unknown geometry kind {kind!r}")


def classify(oracle, x) -> int:
    """0 for a fluid node, 1 for a solid node."""
    return SOLID if oracle.is_solid(x) else FLUID


def solid_count(oracle, grid: GridSpec) -> int:
    return int(oracle.solid_mask(grid).sum())


def boundary_links(grid: GridSpec, oracle) -> set[tuple[tuple[int, int, int], int]]:
    """All (x, i) with x fluid and x + c_i solid, with periodic wrap.

    These are the links across which momentum is exchanged with the solid
    during one streaming step.
    """
    solid = oracle.solid_mask(grid)
    links: set[tuple[tuple[int, int, int], int]] = set()
    if not solid.any():
        return links
    fluid = ~solid
    for i in range(Q):
        c = VELOCITIES[i]
        if not c.any():
            continue
        # neighbor_solid[z,y,x] <=> node at x + c_i is solid
        neighbor_solid = np.roll(solid, shift=(-int(c[2]), -int(c[1]), -int(c[0])), axis=(0, 1, 2))
        zz, yy, xx = np.nonzero(fluid & neighbor_solid)
        for z, y, x in zip(zz, yy, xx):
            links.add(((int(x), int(y), int(z)), i))
    return links


def boundary_nodes(grid: GridSpec, oracle) -> set[tuple[int, int, int]]:
    """Fluid nodes adjacent to at least one solid node."""
    return {x for (x, _) in boundary_links(grid, oracle)}
