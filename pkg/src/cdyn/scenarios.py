"""Scenario library: pendulum, differentiator circuit, bouncing ball, disk pile."""
from __future__ import annotations

import numpy as np
import numba
import scipy.sparse as sp

from .core import MechanicalSystem, SystemState
from .errors import ContractError, PackingError
from .linear_dae import LinearDae, SourceTerm


def _positive(**kw):
    for name, val in kw.items():
        if not val > 0.0:
            raise ContractError(f"{name} must be positive, got {val}")


# --------------------------------------------------------------------------
# pendulum


def build_pendulum(gamma=9.81, alpha0=0.0, omega0=0.0):
    """Unit-mass pendulum of unit length in Cartesian coordinates.

    The initial state is the consistent state at angle ``alpha0`` from the
    downward vertical with angular velocity ``omega0``.
    """
    _positive(gamma=gamma)
    sys = MechanicalSystem(
        n_q=2, n_lambda=1,
        mass=lambda q: np.eye(2),
        force=lambda q, v, t: np.array([0.0, -gamma]),
        bilateral=lambda q: np.array([q[0] ** 2 + q[1] ** 2 - 1.0]),
        bilateral_jacobian=lambda q: np.array([[2.0 * q[0], 2.0 * q[1]]]),
        curvature=lambda q, v: np.array([2.0 * (v[0] ** 2 + v[1] ** 2)]),
        potential=lambda q: gamma * q[1],
        name="pendulum",
    )
    q0 = np.array([np.sin(alpha0), -np.cos(alpha0)])
    v0 = omega0 * np.array([np.cos(alpha0), np.sin(alpha0)])
    return sys, SystemState.initial(sys, q0, v0)


def pendulum_angle(q):
    """Angle from the downward vertical for (stacked) Cartesian positions."""
    q = np.asarray(q)
    return np.arctan2(q[..., 0], -q[..., 1])


def pendulum_reference(gamma, alpha0, omega0, times, substeps=100):
    """RK4 solution of ``alpha'' = -gamma sin(alpha)`` at ``tau / substeps`` on ``times``."""
    times = np.asarray(times, dtype=float)

    def rhs(y):
        return np.array([y[1], -gamma * np.sin(y[0])])

    y = np.array([alpha0, omega0], dtype=float)
    out = np.empty(times.size)
    out[0] = y[0]
    for i in range(1, times.size):
        h = (times[i] - times[i - 1]) / substeps
        for _ in range(substeps):
            k1 = rhs(y)
            k2 = rhs(y + 0.5 * h * k1)
            k3 = rhs(y + 0.5 * h * k2)
            k4 = rhs(y + h * k3)
            y = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[i] = y[0]
    return out


# --------------------------------------------------------------------------
# differentiator circuit

DIFFERENTIATOR_VARIABLES = ("V1", "V2", "V3", "I", "I_L", "I_V")


def sine_source(amplitude=1.0, omega=1.0):
    """``V(t) = a sin(w t)`` with all derivatives."""
    def ev(t, k):
        phase = [np.sin, np.cos, lambda x: -np.sin(x), lambda x: -np.cos(x)][k % 4]
        return np.array([amplitude * omega ** k * phase(omega * t)])
    return SourceTerm(ev, max_order=10 ** 6, n=1)


def build_differentiator(R=1.0, L=1.0, source: SourceTerm | None = None):
    """Op-amp differentiator with ``x = (V1, V2, V3, I, I_L, I_V)``.

    Rows: current balance at node 1 and node 2, inductor/amplifier current,
    input voltage ``V1 = V(t)``, virtual ground ``V2 = 0`` and the inductor
    law ``L I_L' = V2 - V3``.
    """
    _positive(R=R, L=L)
    source = sine_source() if source is None else source
    if source.n != 1 or source.max_order < 1:
        raise ContractError("circuit source must be scalar with at least one derivative")
    E = np.zeros((6, 6))
    E[5, 4] = L
    H = np.array([
        [1 / R, -1 / R, 0, 1, 0, 0],
        [-1 / R, 1 / R, 0, 0, 1, 0],
        [0, 0, 0, 0, -1, 1],
        [1, 0, 0, 0, 0, 0],
        [0, 1, 0, 0, 0, 0],
        [0, -1, 1, 0, 0, 0],
    ], dtype=float)

    def ev(t, k):
        c = np.zeros(6)
        c[3] = source(t, k)[0]
        return c

    return LinearDae(E, H, SourceTerm(ev, max_order=source.max_order, n=6))


def differentiator_initial(R, L, source: SourceTerm, t0=0.0):
    """Consistent state: ``I_L = V/R`` and ``V3 = -(L/R) V'``."""
    V, dV = source(t0, 0)[0], source(t0, 1)[0]
    return np.array([V, 0.0, -L / R * dV, -V / R, V / R, V / R])


# --------------------------------------------------------------------------
# bouncing ball


def build_bouncing_ball(gamma=9.81, height=1.0, mass=1.0, velocity=0.0):
    """Point mass above the ground ``q >= 0``."""
    _positive(gamma=gamma, height=height, mass=mass)
    sys = MechanicalSystem(
        n_q=1, n_u=1,
        mass=lambda q: np.array([[mass]]),
        force=lambda q, v, t: np.array([-mass * gamma]),
        unilateral=lambda q: np.array([q[0]]),
        unilateral_jacobian=lambda q: np.array([[1.0]]),
        potential=lambda q: mass * gamma * q[0],
        name="bouncing_ball",
    )
    return sys, SystemState.initial(sys, [height], [velocity])


# --------------------------------------------------------------------------
# disk pile


@numba.njit(cache=True)
def _grid_pairs(x, y, radius, margin):
    """Pairs (i < j) with ``|c_i - c_j| - 2r <= margin`` using a uniform grid."""
    n = x.size
    cell = 2.0 * radius + max(margin, 0.0)
    x0, y0 = x.min(), y.min()
    cx = np.empty(n, np.int64)
    cy = np.empty(n, np.int64)
    for i in range(n):
        cx[i] = int((x[i] - x0) / cell)
        cy[i] = int((y[i] - y0) / cell)
    nx = cx.max() + 1
    ny = cy.max() + 1
    key = cy * nx + cx
    order = np.argsort(key, kind="mergesort")
    start = np.zeros(nx * ny + 1, np.int64)
    for i in range(n):
        start[key[i] + 1] += 1
    for c in range(nx * ny):
        start[c + 1] += start[c]
    reach = 2.0 * radius + margin
    out_i = []
    out_j = []
    for i in range(n):
        for dy in range(-1, 2):
            gy = cy[i] + dy
            if gy < 0 or gy >= ny:
                continue
            for dx in range(-1, 2):
                gx = cx[i] + dx
                if gx < 0 or gx >= nx:
                    continue
                c = gy * nx + gx
                for s in range(start[c], start[c + 1]):
                    j = order[s]
                    if j <= i:
                        continue
                    ddx = x[j] - x[i]
                    ddy = y[j] - y[i]
                    if np.sqrt(ddx * ddx + ddy * ddy) <= reach:
                        out_i.append(i)
                        out_j.append(j)
    return np.array(out_i, dtype=np.int64), np.array(out_j, dtype=np.int64)


class DiskPile:
    """Geometry of ``n`` equal frictionless disks in an open-top box ``[0, width]``.

    Unilateral ids: the ``n(n-1)/2`` pairs in lexicographic order, then the
    floor, left-wall and right-wall contact of every disk.
    """

    def __init__(self, n, radius, width, mass, gamma):
        self.n, self.radius, self.width = n, radius, width
        self.mass, self.gamma = mass, gamma
        self.n_pairs = n * (n - 1) // 2
        iu, ju = np.triu_indices(n, 1)
        self.pair_i, self.pair_j = iu.astype(np.int64), ju.astype(np.int64)

    def pair_id(self, i, j):
        n = self.n
        return i * n - i * (i + 1) // 2 + (j - i - 1)

    def candidates(self, q, margin):
        n, r = self.n, self.radius
        x, y = q[0::2], q[1::2]
        margin = float(min(margin, 1e300))
        ii, jj = _grid_pairs(np.ascontiguousarray(x), np.ascontiguousarray(y), r, margin)
        pairs = self.pair_id(ii, jj)
        base = self.n_pairs
        idx = np.arange(n)
        walls = np.concatenate([
            base + idx[y - r <= margin],
            base + n + idx[x - r <= margin],
            base + 2 * n + idx[self.width - x - r <= margin],
        ])
        return np.sort(np.concatenate([pairs, walls]))

    def rows(self, q, ids):
        """Gaps and CSR Jacobian rows for ``ids``."""
        n, r = self.n, self.radius
        ids = np.asarray(ids, dtype=np.int64)
        m = ids.size
        gaps = np.empty(m)
        cols = np.empty((m, 4), dtype=np.int64)
        vals = np.zeros((m, 4))
        is_pair = ids < self.n_pairs
        pid = ids[is_pair]
        i, j = self.pair_i[pid], self.pair_j[pid]
        d = np.stack([q[2 * j] - q[2 * i], q[2 * j + 1] - q[2 * i + 1]], axis=1)
        dist = np.linalg.norm(d, axis=1)
        nrm = d / np.maximum(dist, 1e-300)[:, None]
        gaps[is_pair] = dist - 2 * r
        cols[is_pair] = np.stack([2 * i, 2 * i + 1, 2 * j, 2 * j + 1], axis=1)
        vals[is_pair] = np.concatenate([-nrm, nrm], axis=1)
        w = ids[~is_pair] - self.n_pairs
        kind, k = w // n, w % n
        xk, yk = q[2 * k], q[2 * k + 1]
        gaps[~is_pair] = np.where(kind == 0, yk - r, np.where(kind == 1, xk - r, self.width - xk - r))
        wc = np.where(kind == 0, 2 * k + 1, 2 * k)
        cols[~is_pair] = np.stack([wc, wc, wc, wc], axis=1)
        wv = np.zeros((w.size, 4))
        wv[:, 0] = np.where(kind == 2, -1.0, 1.0)
        vals[~is_pair] = wv
        J = sp.csr_matrix((vals.ravel(), cols.ravel(), np.arange(0, 4 * m + 1, 4)),
                          shape=(m, 2 * n))
        J.sum_duplicates()
        return gaps, J

    def all_gaps(self, q):
        return self.rows(q, np.arange(self.n_pairs + 3 * self.n))[0]

    def all_rows_jacobian(self, q):
        return self.rows(q, np.arange(self.n_pairs + 3 * self.n))[1]


def pack_disks(n, radius, width, height, seed, spacing=2.2, max_attempts=100):
    """Seeded rejection sampling on a jittered lattice inside ``[0, width] x [0, height]``.

    Lattice sites are filled row by row from the bottom; each disk is jittered
    around its site and redrawn while it overlaps an earlier disk.
    """
    rng = np.random.default_rng(seed)
    s = spacing * radius
    ncols = int((width - 2 * radius) // s) + 1
    nrows = int((height - 2 * radius) // s) + 1
    if ncols < 1 or nrows < 1 or ncols * nrows < n:
        raise PackingError(f"box {width} x {height} holds {max(ncols, 0) * max(nrows, 0)} "
                           f"lattice sites, {n} disks requested")
    jitter = 0.5 * (s - 2 * radius)
    pos = np.empty((n, 2))
    for k in range(n):
        row, col = divmod(k, ncols)
        site = np.array([radius + jitter + col * s, radius + jitter + row * s])
        for _ in range(max_attempts):
            c = site + rng.uniform(-jitter, jitter, size=2)
            if k == 0 or np.min(np.linalg.norm(pos[:k] - c, axis=1)) > 2 * radius:
                break
        else:
            raise PackingError(f"could not place disk {k} after {max_attempts} attempts")
        pos[k] = c
    if np.any(pos[:, 0] < radius) or np.any(pos[:, 0] > width - radius) or np.any(pos[:, 1] < radius):
        raise PackingError("packing left the box")
    return pos


def build_disk_pile(n_disks=100, radius=1.0, box=(20.0, 30.0), seed=0, gamma=9.81,
                    mass=1.0, positions=None, pack_width=None):
    """Frictionless rotationless disks under gravity in an open-top box.

    ``box = (width, height)``; disks are packed into ``[0, pack_width] x
    [0, height]`` (default the whole width) unless explicit ``positions``
    are given.
    """
    _positive(radius=radius, gamma=gamma, mass=mass)
    if n_disks < 1:
        raise ContractError("n_disks must be >= 1")
    width, height = float(box[0]), float(box[1])
    if positions is None:
        pos = pack_disks(n_disks, radius, pack_width or width, height, seed)
    else:
        pos = np.asarray(positions, dtype=float).reshape(n_disks, 2)
    geo = DiskPile(n_disks, radius, width, mass, gamma)
    n_q = 2 * n_disks
    mass_matrix = sp.diags(np.full(n_q, float(mass)), format="csr")
    grav = np.zeros(n_q)
    grav[1::2] = -mass * gamma
    sys = MechanicalSystem(
        n_q=n_q,
        n_u=geo.n_pairs + 3 * n_disks,
        mass=lambda q: mass_matrix,
        force=lambda q, v, t: grav,
        unilateral=geo.all_gaps,
        unilateral_jacobian=geo.all_rows_jacobian,
        potential=lambda q: mass * gamma * float(np.sum(q[1::2])),
        contact_candidates=geo.candidates,
        unilateral_rows=geo.rows,
        name="disk_pile",
    )
    object.__setattr__(sys, "geometry", geo)
    state = SystemState.initial(sys, pos.ravel(), np.zeros(n_q))
    return sys, state
