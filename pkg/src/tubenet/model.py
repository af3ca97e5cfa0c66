"""Subsystem/network data model: local dynamics, coupling graph, constraints.

A Network is a value object; the pnp module rebuilds it on topology changes
rather than mutating a live one mid-simulation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .geometry import HPolytope, VAggregate, VPolytope, linear_image, vertices_of

__all__ = [
    "ModelError",
    "NotControllableError",
    "Subsystem",
    "Coupling",
    "Network",
    "controllability_index",
    "disturbance_set",
    "discretize_exact",
    "build_truck_network",
    "build_mass_array",
    "truck_continuous_matrices",
]


class ModelError(ValueError):
    pass


class NotControllableError(ModelError):
    pass


def controllability_index(A, B, tol: float = 1e-9) -> int:
    """Smallest k with rank [B, AB, ..., A^(k-1) B] equal to the state dimension."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    n = A.shape[0]
    blocks = []
    term = B
    for k in range(1, n + 1):
        blocks.append(term)
        mat = np.hstack(blocks)
        if np.linalg.matrix_rank(mat, tol=tol) == n:
            return k
        term = A @ term
    raise NotControllableError(f"pair is not controllable (rank stalls below {n})")


@dataclass
class Subsystem:
    """One node of the network: x+ = A x + B u + w, x in X, u in U.

    The optional load channel (L, load gains) feeds known exogenous signals
    in as  x+ += L * load  with the tracked equilibrium shifted accordingly.
    """

    id: str
    A: np.ndarray
    B: np.ndarray
    X: HPolytope
    U: HPolytope
    x_vertices: VPolytope | None = None   # V-rep of X, required when n > 3
    L: np.ndarray | None = None           # discrete load-input matrix (n x 1)
    setpoint_state_gain: np.ndarray | None = None  # x_ref = gain * load
    setpoint_input_gain: np.ndarray | None = None  # u_ref = gain * load

    def __post_init__(self):
        self.id = str(self.id)
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ModelError(f"subsystem {self.id}: A must be square, got {self.A.shape}")
        if self.B.shape[0] != n:
            raise ModelError(f"subsystem {self.id}: B row count {self.B.shape[0]} != n={n}")
        if self.X.n != n:
            raise ModelError(f"subsystem {self.id}: state constraint dimension mismatch")
        if self.U.n != self.B.shape[1]:
            raise ModelError(f"subsystem {self.id}: input constraint dimension mismatch")
        controllability_index(self.A, self.B)  # raises when not controllable
        if not self.X.has_origin_interior():
            raise ModelError(f"subsystem {self.id}: X must contain the origin in its interior")
        if not self.U.has_origin_interior():
            raise ModelError(f"subsystem {self.id}: U must contain the origin in its interior")
        if self.L is not None:
            self.L = np.asarray(self.L, dtype=float).reshape(n, -1)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def state_vertices(self) -> VPolytope:
        """Vertices of X; auto-enumerated up to dimension 3, else must be supplied."""
        if self.x_vertices is None:
            if self.n > 3:
                raise ModelError(
                    f"subsystem {self.id}: supply explicit X vertices for n={self.n} "
                    "(automatic enumeration stops at dimension 3)")
            self.x_vertices = vertices_of(self.X)
        return self.x_vertices


@dataclass
class Coupling:
    """Directed influence: state of `src` enters the dynamics of `dst`."""

    src: str
    dst: str
    A: np.ndarray

    def __post_init__(self):
        self.src = str(self.src)
        self.dst = str(self.dst)
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        if self.src == self.dst:
            raise ModelError("coupling must connect two distinct subsystems")
        if not np.any(self.A):
            raise ModelError(f"coupling {self.src}->{self.dst} has an all-zero matrix")


class Network:
    """Subsystem map plus coupling list with derived predecessor/successor sets."""

    def __init__(self, subsystems, couplings=()):
        self.subsystems: dict[str, Subsystem] = {}
        for sub in subsystems:
            if sub.id in self.subsystems:
                raise ModelError(f"duplicate subsystem id {sub.id}")
            self.subsystems[sub.id] = sub
        self.couplings: list[Coupling] = []
        for c in couplings:
            self._check_coupling(c)
            self.couplings.append(c)

    def _check_coupling(self, c: Coupling):
        if c.src not in self.subsystems or c.dst not in self.subsystems:
            raise ModelError(f"coupling {c.src}->{c.dst} references unknown subsystem")
        ni = self.subsystems[c.dst].n
        nj = self.subsystems[c.src].n
        if c.A.shape != (ni, nj):
            raise ModelError(
                f"coupling {c.src}->{c.dst} matrix is {c.A.shape}, expected ({ni}, {nj})")

    @property
    def ids(self) -> list[str]:
        return list(self.subsystems.keys())

    def predecessors(self, i: str) -> dict[str, np.ndarray]:
        """Map j -> A_ij over subsystems whose state drives i."""
        return {c.src: c.A for c in self.couplings if c.dst == str(i)}

    def successors(self, i: str) -> list[str]:
        return sorted({c.dst for c in self.couplings if c.src == str(i)})

    def copy(self) -> "Network":
        subs = [Subsystem(s.id, s.A.copy(), s.B.copy(), s.X.copy(), s.U.copy(),
                          x_vertices=None if s.x_vertices is None else VPolytope(s.x_vertices.vertices.copy()),
                          L=None if s.L is None else s.L.copy(),
                          setpoint_state_gain=None if s.setpoint_state_gain is None else np.array(s.setpoint_state_gain),
                          setpoint_input_gain=None if s.setpoint_input_gain is None else np.array(s.setpoint_input_gain))
                for s in self.subsystems.values()]
        return Network(subs, [Coupling(c.src, c.dst, c.A.copy()) for c in self.couplings])


def disturbance_set(net: Network, i: str) -> VAggregate:
    """Coupling disturbance seen by subsystem i: the sum of mapped neighbor
    constraint sets, one block per predecessor; {0} when i is uncoupled."""
    i = str(i)
    preds = net.predecessors(i)
    n = net.subsystems[i].n
    if not preds:
        return VAggregate([VPolytope.origin(n)], 1.0)
    blocks = []
    for j in sorted(preds):
        blocks.append(linear_image(preds[j], net.subsystems[j].state_vertices()))
    return VAggregate(blocks, 1.0)


def discretize_exact(Ac, Bc, Ec=None, T: float = 1.0):
    """Zero-order-hold discretization via the block-augmented matrix exponential.

    Returns (Ad, Bd) or (Ad, Bd, Ed) when an exogenous-input matrix is given.
    """
    if T <= 0:
        raise ModelError("sample time must be positive")
    Ac = np.atleast_2d(np.asarray(Ac, dtype=float))
    Bc = np.atleast_2d(np.asarray(Bc, dtype=float))
    n = Ac.shape[0]
    cols = [Bc]
    if Ec is not None:
        cols.append(np.atleast_2d(np.asarray(Ec, dtype=float)))
    In = np.hstack(cols)
    m = In.shape[1]
    M = np.zeros((n + m, n + m))
    M[:n, :n] = Ac
    M[:n, n:] = In
    E = expm(M * T)
    if not np.all(np.isfinite(E)):
        raise ModelError("matrix exponential produced non-finite entries")
    Ad = E[:n, :n]
    blk = E[:n, n:]
    Bd = blk[:, : Bc.shape[1]]
    if Ec is None:
        return Ad, Bd
    return Ad, Bd, blk[:, Bc.shape[1]:]


def truck_continuous_matrices(m1=2.0, m2=4.0, k12=0.4, h12=0.3):
    """Continuous-time blocks of the two-truck spring/damper chain."""
    def local(m):
        return np.array([[0.0, 1.0], [-k12 / m, -h12 / m]])

    def cross(m):
        return np.array([[0.0, 0.0], [k12 / m, h12 / m]])

    def gain(m):
        return np.array([[0.0], [100.0 / m]])

    return {
        "A11": local(m1), "A22": local(m2),
        "A12": cross(m1), "A21": cross(m2),
        "B1": gain(m1), "B2": gain(m2),
    }


def _truck_constraints():
    X = HPolytope.symmetric_box([4.5, 2.0])
    U = HPolytope.symmetric_box([1.5])
    return X, U


def build_truck_network(m1=2.0, m2=4.0, k12=0.4, h12=0.3, ts=0.1) -> Network:
    """Two trucks coupled by a spring and damper, exactly discretized at ts.

    Control inputs and neighbor states are treated as exogenous signals during
    discretization, which preserves the input-decoupled block structure.
    """
    blk = truck_continuous_matrices(m1, m2, k12, h12)
    A11d, B1d, A12d = discretize_exact(blk["A11"], blk["B1"], blk["A12"], ts)
    A22d, B2d, A21d = discretize_exact(blk["A22"], blk["B2"], blk["A21"], ts)
    subs = []
    for sid, Ad, Bd in (("1", A11d, B1d), ("2", A22d, B2d)):
        X, U = _truck_constraints()
        subs.append(Subsystem(sid, Ad, Bd, X, U))
    return Network(subs, [Coupling("2", "1", A12d), Coupling("1", "2", A21d)])


def _mass_constraints(beta: float):
    X = HPolytope.symmetric_box([1.5, 0.8, 1.5, 0.8])
    U = HPolytope.symmetric_box([beta, beta])
    x_verts = VPolytope(_box_vertex_array([1.5, 0.8, 1.5, 0.8]))
    return X, U, x_verts


def _box_vertex_array(hw):
    from .geometry import box_vertices

    hw = np.asarray(hw, dtype=float)
    return box_vertices(-hw, hw)


def build_mass_array(rows: int, cols: int, seed: int = 0, ts: float = 0.2,
                     spring: float = 0.5, damper: float = 0.5) -> Network:
    """Planar grid of masses joined to their grid neighbors by spring/damper
    pairs; horizontal links drive the horizontal states, vertical links the
    vertical ones. Masses are drawn from [5, 10] and input boxes from
    [1, 1.5], reproducibly from the seed.
    """
    if rows < 1 or cols < 1:
        raise ModelError("grid must be at least 1x1")
    rng = np.random.default_rng(seed)
    masses = rng.uniform(5.0, 10.0, size=(rows, cols))
    betas = rng.uniform(1.0, 1.5, size=(rows, cols))

    def sid(r, c):
        return str(r * cols + c + 1)

    def neighbors(r, c):
        out = []
        if c > 0:
            out.append((r, c - 1, "h"))
        if c < cols - 1:
            out.append((r, c + 1, "h"))
        if r > 0:
            out.append((r - 1, c, "v"))
        if r < rows - 1:
            out.append((r + 1, c, "v"))
        return out

    subs = []
    couplings = []
    for r in range(rows):
        for c in range(cols):
            m = masses[r, c]
            nbrs = neighbors(r, c)
            kh = spring * sum(1 for _, _, axis in nbrs if axis == "h")
            hh = damper * sum(1 for _, _, axis in nbrs if axis == "h")
            kv = spring * sum(1 for _, _, axis in nbrs if axis == "v")
            hv = damper * sum(1 for _, _, axis in nbrs if axis == "v")
            Ac = np.zeros((4, 4))
            Ac[0, 1] = 1.0
            Ac[1, 0], Ac[1, 1] = -kh / m, -hh / m
            Ac[2, 3] = 1.0
            Ac[3, 2], Ac[3, 3] = -kv / m, -hv / m
            Bc = np.zeros((4, 2))
            Bc[1, 0] = 100.0 / m
            Bc[3, 1] = 100.0 / m
            # exogenous block: one 4-column slab per neighbor
            Ecs = []
            for (rr, cc, axis) in nbrs:
                Eij = np.zeros((4, 4))
                if axis == "h":
                    Eij[1, 0], Eij[1, 1] = spring / m, damper / m
                else:
                    Eij[3, 2], Eij[3, 3] = spring / m, damper / m
                Ecs.append(Eij)
            if Ecs:
                Ad, Bd, Ed = discretize_exact(Ac, Bc, np.hstack(Ecs), ts)
            else:
                Ad, Bd = discretize_exact(Ac, Bc, None, ts)
                Ed = np.zeros((4, 0))
            X, U, xv = _mass_constraints(betas[r, c])
            subs.append(Subsystem(sid(r, c), Ad, Bd, X, U, x_vertices=xv))
            for k, (rr, cc, _) in enumerate(nbrs):
                couplings.append(Coupling(sid(rr, cc), sid(r, c), Ed[:, 4 * k:4 * (k + 1)]))
    return Network(subs, couplings)
