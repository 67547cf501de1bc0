"""Reference construction and linear-time-varying MPC tracking.

The planner path is time-parameterized with per-segment trapezoidal speed
profiles, then tracked by an MPC that linearizes the kinematic bicycle
about the reference window, condenses the horizon onto the control
variables, and solves the resulting box-constrained QP with a projected
Newton method.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import angle_diff
from .vehicle import Pose2D, VehicleParams, VehicleState


class QpNotConverged(Exception):
    """Box-QP iteration cap hit with the KKT residual above tolerance."""


@dataclass(frozen=True)
class MpcParams:
    horizon: int = 15                 # prediction steps N
    dt: float = 0.1                   # [s] sampling time
    q: tuple[float, float, float, float] = (1.0, 1.0, 0.5, 0.5)  # x, y, yaw, v
    r: tuple[float, float] = (0.1, 0.1)                          # accel, steer
    rd: float = 0.5                   # steer-rate weight
    accel_min: float = -3.0           # [m/s^2]
    accel_max: float = 2.0            # [m/s^2]
    steer_limit: float = 0.6          # [rad]
    v_min: float = -2.0               # [m/s]
    v_max: float = 3.0                # [m/s]
    lin_iters: int = 2                # successive linearization passes
    qp_max_iter: int = 500
    qp_tol: float = 1e-8

    def __post_init__(self):
        if self.horizon < 2 or self.dt <= 0.0:
            raise ValueError("horizon must be >= 2 and dt positive")
        if any(w < 0 for w in self.q) or any(w < 0 for w in self.r) or self.rd < 0:
            raise ValueError("weights must be non-negative")
        if not (self.accel_min < 0.0 < self.accel_max):
            raise ValueError("accel bounds must straddle zero")


@dataclass(frozen=True)
class SpeedProfile:
    v_fwd_max: float = 1.5    # [m/s]
    v_rev_max: float = 1.0    # [m/s]
    accel: float = 1.0        # [m/s^2] ramp acceleration


@dataclass
class RefTrajectory:
    """Time-parameterized reference at fixed dt.

    Arrays are index-aligned; yaw_unwrapped is continuous across samples so
    windows can be interpolated and differenced without wrap seams. The
    direction annotation is the motion direction arriving at each sample;
    segment_boundaries mark the direction switches, where v == 0.
    """

    dt: float
    xs: np.ndarray
    ys: np.ndarray
    yaw_unwrapped: np.ndarray
    vs: np.ndarray
    dirs: np.ndarray                  # int, +1 / -1
    a_ref: np.ndarray
    steer_ref: np.ndarray
    segment_boundaries: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.xs)

    @property
    def samples(self) -> list[tuple[Pose2D, float, int]]:
        return [(Pose2D(self.xs[i], self.ys[i], self.yaw_unwrapped[i]),
                 float(self.vs[i]), int(self.dirs[i]))
                for i in range(len(self.xs))]

    @property
    def duration(self) -> float:
        return (len(self.xs) - 1) * self.dt


def _trapezoid_times(length: float, v_max: float, a: float) -> float:
    """Total duration of a rest-to-rest trapezoidal profile."""
    if length <= 0.0:
        return 0.0
    ramp = v_max * v_max / (2.0 * a)
    if length > 2.0 * ramp:
        return length / v_max + v_max / a
    peak = math.sqrt(a * length)
    return 2.0 * peak / a


def _trapezoid_state(t: float, length: float, v_max: float,
                     a: float) -> tuple[float, float, float]:
    """(distance, speed, accel) at time t along the profile."""
    total = _trapezoid_times(length, v_max, a)
    if t >= total or length <= 0.0:
        return length, 0.0, 0.0
    ramp = v_max * v_max / (2.0 * a)
    if length > 2.0 * ramp:
        t_ramp = v_max / a
        if t < t_ramp:
            return 0.5 * a * t * t, a * t, a
        t_cruise = total - 2.0 * t_ramp
        if t < t_ramp + t_cruise:
            return ramp + v_max * (t - t_ramp), v_max, 0.0
        td = total - t
        return length - 0.5 * a * td * td, a * td, -a
    peak_t = 0.5 * total
    if t < peak_t:
        return 0.5 * a * t * t, a * t, a
    td = total - t
    return length - 0.5 * a * td * td, a * td, -a


def build_reference(path, vehicle: VehicleParams, params: MpcParams,
                    profile: SpeedProfile = SpeedProfile()) -> RefTrajectory:
    """Time-parameterize a planned path at the MPC sampling time.

    Each direction segment ramps at the profile acceleration, is capped at
    the segment speed limit, and decelerates to an exact stop at the
    segment end; poses are interpolated along the path by arc length.
    """
    pts = list(path.points)
    if not pts:
        raise ValueError("path must be non-empty")
    if len(pts) == 1:
        pose = pts[0][0]
        return RefTrajectory(
            dt=params.dt,
            xs=np.array([pose.x]), ys=np.array([pose.y]),
            yaw_unwrapped=np.array([pose.yaw]), vs=np.zeros(1),
            dirs=np.array([pts[0][1]], dtype=int),
            a_ref=np.zeros(1), steer_ref=np.zeros(1),
            segment_boundaries=())

    # group edges (i-1, i) into direction runs
    edge_dirs = [pts[i][1] for i in range(1, len(pts))]
    runs = []
    a = 0
    for i in range(1, len(edge_dirs)):
        if edge_dirs[i] != edge_dirs[a]:
            runs.append((a, i))      # edges [a, i) share a direction
            a = i
    runs.append((a, len(edge_dirs)))

    xs, ys, yaws, vs, dirs, accs, steers = [], [], [], [], [], [], []
    boundaries = []
    for run_no, (e0, e1) in enumerate(runs):
        d = edge_dirs[e0]
        poly = pts[e0:e1 + 1]
        px = np.array([p.x for p, _ in poly])
        py = np.array([p.y for p, _ in poly])
        pyaw = np.unwrap(np.array([p.yaw for p, _ in poly]))
        seg = np.hypot(np.diff(px), np.diff(py))
        s = np.concatenate([[0.0], np.cumsum(seg)])
        length = float(s[-1])
        v_cap = profile.v_fwd_max if d > 0 else profile.v_rev_max
        total = _trapezoid_times(length, v_cap, profile.accel)
        n = max(1, math.ceil(total / params.dt - 1e-9))
        # curvature of the polyline vs arc length, for the steer feedforward
        with np.errstate(divide="ignore", invalid="ignore"):
            kappa_e = np.where(seg > 1e-9, np.diff(pyaw) / np.maximum(seg, 1e-9), 0.0)
        t0 = 1 if run_no > 0 else 0   # the shared boundary sample already exists
        for k in range(t0, n + 1):
            t = k * params.dt
            dist, spd, acc = _trapezoid_state(t, length, v_cap, profile.accel)
            xs.append(float(np.interp(dist, s, px)))
            ys.append(float(np.interp(dist, s, py)))
            yaws.append(float(np.interp(dist, s, pyaw)))
            vs.append(d * spd)
            dirs.append(d)
            accs.append(d * acc)
            e = min(np.searchsorted(s, dist, side="right") - 1, len(kappa_e) - 1)
            e = max(e, 0)
            steers.append(math.atan(vehicle.wheelbase * d * kappa_e[e])
                          if len(kappa_e) else 0.0)
        if run_no < len(runs) - 1:
            boundaries.append(len(xs) - 1)

    yaw_arr = np.unwrap(np.array(yaws))
    return RefTrajectory(
        dt=params.dt, xs=np.array(xs), ys=np.array(ys),
        yaw_unwrapped=yaw_arr, vs=np.array(vs),
        dirs=np.array(dirs, dtype=int), a_ref=np.array(accs),
        steer_ref=np.array(steers), segment_boundaries=tuple(boundaries))


def solve_box_qp(H: np.ndarray, g: np.ndarray, lower: np.ndarray,
                 upper: np.ndarray, x0: np.ndarray | None = None,
                 max_iter: int = 500, tol: float = 1e-8) -> np.ndarray:
    """Minimize 0.5 x'Hx + g'x subject to lower <= x <= upper.

    Projected Newton with an active-set split and Armijo backtracking;
    converged when the projected-gradient KKT residual is within tol.
    """
    n = len(g)
    x = np.clip(x0 if x0 is not None else np.zeros(n), lower, upper)
    fval = 0.5 * x @ H @ x + g @ x
    for _ in range(max_iter):
        grad = H @ x + g
        if np.max(np.abs(x - np.clip(x - grad, lower, upper))) <= tol:
            return x
        clamped = (((x <= lower + 1e-14) & (grad > 0.0))
                   | ((x >= upper - 1e-14) & (grad < 0.0)))
        free = ~clamped
        if not free.any():
            return x
        step_dir = np.zeros(n)
        try:
            step_dir[free] = -np.linalg.solve(H[np.ix_(free, free)], grad[free])
        except np.linalg.LinAlgError:
            step_dir[free] = -grad[free]
        step = 1.0
        accepted = False
        while step > 1e-12:
            xc = np.clip(x + step * step_dir, lower, upper)
            fc = 0.5 * xc @ H @ xc + g @ xc
            if fc <= fval + 0.1 * grad @ (xc - x):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        x, fval = xc, fc
    grad = H @ x + g
    if np.max(np.abs(x - np.clip(x - grad, lower, upper))) <= tol:
        return x
    raise QpNotConverged("projected Newton did not reach the KKT tolerance")


@dataclass
class MpcDiagnostics:
    predicted: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    cost: float = 0.0
    window_start: int = 0


def _linearize(zbar: np.ndarray, ubar: np.ndarray, wheelbase: float,
               dt: float):
    """Euler-discretized LTV matrices about a state/control trajectory."""
    N = ubar.shape[1]
    A = np.tile(np.eye(4), (N, 1, 1))
    B = np.zeros((N, 4, 2))
    yaw = zbar[2, :N]
    v = zbar[3, :N]
    delta = ubar[1]
    cy, sy = np.cos(yaw), np.sin(yaw)
    tan_d = np.tan(delta)
    sec2 = 1.0 + tan_d * tan_d
    A[:, 0, 2] = -dt * v * sy
    A[:, 0, 3] = dt * cy
    A[:, 1, 2] = dt * v * cy
    A[:, 1, 3] = dt * sy
    A[:, 2, 3] = dt * tan_d / wheelbase
    B[:, 2, 1] = dt * v * sec2 / wheelbase
    B[:, 3, 0] = dt
    fz = np.stack([v * cy, v * sy, v * tan_d / wheelbase, ubar[0]], axis=1)
    w = zbar[:, :N].T + dt * fz - zbar[:, 1:].T
    return A, B, w


def _rollout(state_vec: np.ndarray, u: np.ndarray, wheelbase: float,
             dt: float) -> np.ndarray:
    """Nonlinear Euler rollout of the bicycle model, shape (4, N+1)."""
    N = u.shape[1]
    z = np.zeros((4, N + 1))
    z[:, 0] = state_vec
    for k in range(N):
        x, y, yaw, v = z[:, k]
        z[0, k + 1] = x + dt * v * math.cos(yaw)
        z[1, k + 1] = y + dt * v * math.sin(yaw)
        z[2, k + 1] = yaw + dt * v * math.tan(u[1, k]) / wheelbase
        z[3, k + 1] = v + dt * u[0, k]
    return z


def control_step(state: VehicleState, ref: RefTrajectory, ref_index: int,
                 vehicle: VehicleParams,
                 params: MpcParams) -> tuple[float, float, MpcDiagnostics]:
    """One receding-horizon solve; returns the first control of the last pass.

    Tracks the reference window starting at ref_index under box bounds on
    acceleration, steering, and (via per-step acceleration tightening)
    speed. Yaw errors are wrapped before weighting.
    """
    if not (0 <= ref_index < len(ref)):
        raise IndexError("ref_index outside the reference")
    N = params.horizon
    dt = params.dt
    idx = np.clip(np.arange(ref_index, ref_index + N + 1), 0, len(ref) - 1)
    zref = np.stack([ref.xs[idx], ref.ys[idx], ref.yaw_unwrapped[idx],
                     ref.vs[idx]])
    uref = np.stack([ref.a_ref[idx[:N]], ref.steer_ref[idx[:N]]])
    zref[2] += round((state.pose.yaw - zref[2, 0]) / (2 * math.pi)) * 2 * math.pi

    state_vec = np.array([state.pose.x, state.pose.y,
                          zref[2, 0] + angle_diff(state.pose.yaw, zref[2, 0]),
                          state.v])
    zbar = zref.copy()
    ubar = uref.copy()
    Q = np.asarray(params.q)
    R = np.asarray(params.r)
    qdiag = np.tile(Q, N)
    rdiag = np.tile(R, N)
    # first-difference operator on the steering coordinates
    D = np.zeros((N, 2 * N))
    for k in range(N):
        D[k, 2 * k + 1] = 1.0
        if k > 0:
            D[k, 2 * k - 1] = -1.0
    b_prev = np.zeros(N)
    b_prev[0] = state.steer

    u = ubar.copy()
    diag = MpcDiagnostics(window_start=ref_index)
    for _ in range(max(1, params.lin_iters)):
        A, B, w = _linearize(zbar, ubar, vehicle.wheelbase, dt)
        dz0 = state_vec - zbar[:, 0]
        # condense: dz_{k+1} = A_k dz_k + B_k du_k + w_k
        G = np.zeros((4 * N, 2 * N))
        dvec = np.zeros(4 * N)
        d = dz0
        for k in range(N):
            if k > 0:
                G[4 * k:4 * k + 4] = A[k] @ G[4 * (k - 1):4 * k]
            G[4 * k:4 * k + 4, 2 * k:2 * k + 2] = B[k]
            d = A[k] @ d + w[k]
            dvec[4 * k:4 * k + 4] = d
        evec = (zbar[:, 1:] - zref[:, 1:]).T.reshape(-1)
        uvec = ubar.T.reshape(-1)
        urefvec = uref.T.reshape(-1)

        # R weighs deviation from the reference feedforward; an absolute
        # control penalty would drag steering off saturated-curvature arcs
        # and leave a steady-state yaw error.
        H = G.T @ (qdiag[:, None] * G)
        H[np.arange(2 * N), np.arange(2 * N)] += rdiag
        H += params.rd * (D.T @ D)
        gvec = (G.T @ (qdiag * (dvec + evec)) + rdiag * (uvec - urefvec)
                + params.rd * (D.T @ (D @ uvec - b_prev)))
        H = 0.5 * (H + H.T)

        # absolute bounds, tightened so predicted speeds stay in range
        vbar = zbar[3, :N]
        lo_a = np.maximum(params.accel_min, (params.v_min - vbar) / dt)
        hi_a = np.minimum(params.accel_max, (params.v_max - vbar) / dt)
        bad = lo_a > hi_a
        lo_a[bad] = np.where(vbar[bad] > params.v_max, params.accel_min,
                             params.accel_max)
        hi_a[bad] = lo_a[bad]
        lower = np.empty(2 * N)
        upper = np.empty(2 * N)
        lower[0::2] = lo_a - uvec[0::2]
        upper[0::2] = hi_a - uvec[0::2]
        lower[1::2] = -params.steer_limit - uvec[1::2]
        upper[1::2] = params.steer_limit - uvec[1::2]

        du = solve_box_qp(H, gvec, lower, upper,
                          max_iter=params.qp_max_iter, tol=params.qp_tol)
        # re-snap to the QP's own box so float summation cannot leak an ulp
        u = np.clip(uvec + du, lower + uvec, upper + uvec).reshape(N, 2).T
        zbar = _rollout(state_vec, u, vehicle.wheelbase, dt)
        ubar = u
        diag.cost = float(0.5 * du @ H @ du + gvec @ du)
        first_box = (float(lo_a[0]), float(hi_a[0]))

    diag.predicted = zbar.T
    accel = float(min(max(u[0, 0], first_box[0]), first_box[1]))
    steer = float(min(max(u[1, 0], -params.steer_limit), params.steer_limit))
    return accel, steer, diag
