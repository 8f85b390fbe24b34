"""Quasi-static locomotion simulator.

At every timestep the planar body twist (vx, vy, wz) is the one for which
the net ground-reaction force and yaw moment vanish (inertia is neglected).
Thrust arises from the interplay of the commanded body wave, the trot
stance pattern, and the depth-blended reaction-force law; joint torques are
extracted post hoc from the resolved element forces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import percept
from .errors import DegenerateSupportError, SolverError
from .gait import TWO_PI, BodyWave, GaitParams, LegId, leg_contact_fraction
from .model import GroundModel, RobotModel, TerrainProfile, blend_ratio

RESIDUAL_TOL = 1e-8      # nondimensional acceptance bound per step
NEWTON_TOL = 1e-11       # solver target, well inside the acceptance bound
MAX_NEWTON_ITERS = 50


# ---------------------------------------------------------------------------
# Kinematics

def chain_frames(pose, alphas, robot):
    """Segment headings, head-end positions, and joint positions.

    The head tip is the chain root at ``pose[:2]``; segments extend
    tail-ward.  Joint ``j`` (1-based) sits between segments ``j-1`` and
    ``j`` and bends every segment behind it.
    """
    x, y, theta = pose
    headings = np.empty(robot.n_segments)
    seg_start = np.empty((robot.n_segments, 2))
    joints = np.empty((robot.n_segments - 1, 2))
    h = theta
    p = np.array([x, y])
    for k in range(robot.n_segments):
        if k > 0:
            joints[k - 1] = p
            h = h + alphas[k - 1]
        headings[k] = h
        seg_start[k] = p
        p = p + robot.segment_length * np.array([-math.cos(h), -math.sin(h)])
    return headings, seg_start, joints


@dataclass
class ContactSet:
    """Flat arrays describing every ground contact at one instant."""

    pos: np.ndarray       # (n, 2) world positions
    axis: np.ndarray      # (n, 2) element long-axis unit vectors
    rho: np.ndarray       # (n,) granular-drag blend weight
    normal: np.ndarray    # (n,) normal load, N
    vshape: np.ndarray    # (n, 2) velocity from joint motion, body twist frozen
    seg: np.ndarray       # (n,) segment index, for torque attribution
    is_foot: np.ndarray   # (n,) bool
    ref: np.ndarray       # (2,) twist reference point (head tip)


def build_contacts(pose, alphas, alpha_rates, cycle_phase, params, robot,
                   terrain, rho_override=None):
    """Assemble contact geometry, blend weights, and normal loads.

    Weight support is local: each belly element carries its own share of
    body weight, interpolated between the rigid-ground belly fraction
    (``belly_weight_frac`` collectively) and near-full granular support as
    its local blend ratio rises; the stance feet carry whatever the belly
    does not, split by contact fraction.  Keeping support local means a
    body straddling a flat-to-granular boundary does not drain normal
    load (and hence thrust) from the feet still on rigid ground.
    """
    headings, seg_start, joints = chain_frames(pose, alphas, robot)
    n_per = robot.belly_elements_per_segment
    L = robot.segment_length

    pos_list, axis_list, seg_list, foot_list, w_list = [], [], [], [], []

    fracs = (np.arange(n_per) + 0.5) / n_per
    for k in range(robot.n_segments):
        h = headings[k]
        d = np.array([-math.cos(h), -math.sin(h)])
        pts = seg_start[k] + np.outer(fracs * L, d)
        pos_list.append(pts)
        axis_list.append(np.tile([math.cos(h), math.sin(h)], (n_per, 1)))
        seg_list.append(np.full(n_per, k))
        foot_list.append(np.zeros(n_per, dtype=bool))

    n_belly = robot.n_segments * n_per
    bf = robot.belly_weight_frac

    for leg in LegId:
        s = leg_contact_fraction(leg, cycle_phase, params)
        if s <= 0.0:
            continue
        att = robot.leg_attach[leg]
        h = headings[att.segment]
        d = np.array([-math.cos(h), -math.sin(h)])
        left = np.array([-math.sin(h), math.cos(h)])
        p = seg_start[att.segment] + att.along * d + att.lateral * left
        pos_list.append(p[None, :])
        axis_list.append(np.array([[math.cos(h), math.sin(h)]]))
        seg_list.append(np.array([att.segment]))
        foot_list.append(np.array([True]))
        w_list.append(s)

    pos = np.concatenate(pos_list)
    axis = np.concatenate(axis_list)
    seg = np.concatenate(seg_list)
    is_foot = np.concatenate(foot_list)

    if rho_override is None:
        depth = np.asarray(terrain.depth_at(pos[:n_belly, 0]))
        rho_belly = np.minimum(depth / 40.0, 1.0)
    else:
        rho_belly = np.full(n_belly, float(rho_override))
    rho = np.zeros(len(pos))
    rho[:n_belly] = rho_belly

    # Local support: element i carries (W/n_belly)*(bf + rho_i*(1-f_gm-bf)),
    # so the belly bears bf*W on rigid ground and (1-f_gm)*W fully immersed.
    f_gm = robot.foot_gm_weight_frac
    normal = np.empty(len(pos))
    normal[:n_belly] = (robot.weight / n_belly) * (
        bf + rho_belly * (1.0 - f_gm - bf))
    belly_total = float(normal[:n_belly].sum())
    feet_total = robot.weight - belly_total
    s_sum = float(np.sum(w_list)) if w_list else 0.0
    if s_sum > 1e-12:
        normal[n_belly:] = feet_total * np.asarray(w_list) / s_sum
    elif feet_total > 1e-12 * robot.weight:
        if belly_total <= 1e-12:
            raise DegenerateSupportError("no ground contact supports the robot")
        normal[:n_belly] *= robot.weight / belly_total

    # Shape velocity: joint j spins every point on segments >= j about its pivot.
    vshape = np.zeros_like(pos)
    for j in range(1, robot.n_segments):
        mask = seg >= j
        r = pos[mask] - joints[j - 1]
        vshape[mask] += alpha_rates[j - 1] * np.stack([-r[:, 1], r[:, 0]], axis=1)

    return ContactSet(pos, axis, rho, normal, vshape, seg, is_foot,
                      np.array(pose[:2], dtype=float))


# ---------------------------------------------------------------------------
# Force balance

def _velocities(xi, c):
    r = c.pos - c.ref
    spin = xi[2] * np.stack([-r[:, 1], r[:, 0]], axis=1)
    return xi[:2] + spin + c.vshape


def contact_forces(v, c, gm, mu):
    """Blended reaction force on every contact for given point velocities."""
    speed = np.linalg.norm(v, axis=1)
    f_coulomb = -mu * c.normal[:, None] * v / (speed + gm.slip_eps)[:, None]
    v_par = np.einsum("ij,ij->i", v, c.axis)
    v_perp = v - v_par[:, None] * c.axis
    f_rft = -gm.rft_par * v_par[:, None] * c.axis - gm.rft_perp * v_perp
    return (1.0 - c.rho)[:, None] * f_coulomb + c.rho[:, None] * f_rft


def _residual(xi, c, gm, robot):
    v = _velocities(xi, c)
    F = contact_forces(v, c, gm, robot.friction)
    r = c.pos - c.ref
    f_scale = robot.friction * robot.weight
    net_f = F.sum(axis=0) / f_scale
    net_m = float(np.sum(r[:, 0] * F[:, 1] - r[:, 1] * F[:, 0]))
    net_m /= f_scale * robot.body_length
    return np.array([net_f[0], net_f[1], net_m]), F, v


def _jacobian(xi, c, gm, robot):
    """Analytic 3x3 Jacobian of the nondimensional residual in the twist."""
    v = _velocities(xi, c)
    speed = np.linalg.norm(v, axis=1)
    n = len(c.pos)
    eye = np.broadcast_to(np.eye(2), (n, 2, 2))

    se = speed + gm.slip_eps
    u = v / se[:, None]          # |u| <= 1, safe for any slip speed
    uuT = np.einsum("ni,nj->nij", u, u)
    inv_speed = np.where(speed > 1e-300, 1.0 / np.maximum(speed, 1e-300), 0.0)
    d_coulomb = -robot.friction * c.normal[:, None, None] * (
        eye / se[:, None, None] - uuT * inv_speed[:, None, None]
    )
    aaT = np.einsum("ni,nj->nij", c.axis, c.axis)
    d_rft = -gm.rft_par * aaT - gm.rft_perp * (eye - aaT)
    D = (1.0 - c.rho)[:, None, None] * d_coulomb + c.rho[:, None, None] * d_rft

    r = c.pos - c.ref
    B = np.zeros((n, 2, 3))
    B[:, 0, 0] = 1.0
    B[:, 1, 1] = 1.0
    B[:, 0, 2] = -r[:, 1]
    B[:, 1, 2] = r[:, 0]

    DB = np.einsum("nij,njk->nik", D, B)
    f_scale = robot.friction * robot.weight
    J = np.empty((3, 3))
    J[:2] = DB.sum(axis=0) / f_scale
    lever = np.stack([-r[:, 1], r[:, 0]], axis=1)
    J[2] = np.einsum("ni,nik->k", lever, DB) / (f_scale * robot.body_length)
    return J


def _grid_search(c, gm, robot, box_v=1.0, box_w=4.0, n=13, center=None):
    """Coarse brute-force minimizer of the residual norm over twist space."""
    if center is None:
        center = np.zeros(3)
    vx = center[0] + np.linspace(-box_v, box_v, n)
    vy = center[1] + np.linspace(-box_v, box_v, n)
    wz = center[2] + np.linspace(-box_w, box_w, n)
    best, best_norm = None, np.inf
    for a in vx:
        for b in vy:
            for w in wz:
                res, _, _ = _residual(np.array([a, b, w]), c, gm, robot)
                nrm = float(res @ res)
                if nrm < best_norm:
                    best_norm, best = nrm, np.array([a, b, w])
    return best


def solve_quasistatic_velocity(contacts, gm, robot, xi0=None):
    """Twist at which net force and yaw moment vanish.

    Damped Newton with an analytic Jacobian, warm-started from ``xi0``;
    falls back to a refined grid search if Newton stalls.  Returns the
    twist plus the per-contact forces, velocities, and residual inf-norm.
    """
    xi = np.zeros(3) if xi0 is None else np.array(xi0, dtype=float)

    def newton(xi):
        res, F, v = _residual(xi, contacts, gm, robot)
        for _ in range(MAX_NEWTON_ITERS):
            nrm = np.abs(res).max()
            if nrm < NEWTON_TOL:
                break
            J = _jacobian(xi, contacts, gm, robot)
            try:
                step = np.linalg.solve(J, -res)
            except np.linalg.LinAlgError:
                break
            lam = 1.0
            base = res @ res
            improved = False
            for _ in range(30):
                trial = xi + lam * step
                res_t, F_t, v_t = _residual(trial, contacts, gm, robot)
                if res_t @ res_t < base:
                    xi, res, F, v = trial, res_t, F_t, v_t
                    improved = True
                    break
                lam *= 0.5
            if not improved:
                break
        return xi, res, F, v

    xi, res, F, v = newton(xi)
    if np.abs(res).max() > RESIDUAL_TOL:
        # Continuation: relax the Coulomb slip regularization, then tighten
        # it back down, warm-starting each stage.
        soft = np.zeros(3)
        for factor in (1e3, 1e2, 1e1, 1.0):
            gm_soft = GroundModel(gm.rft_par, gm.rft_perp,
                                  gm.slip_eps * factor)
            def newton_soft(x, g=gm_soft):
                res0, F0, v0 = _residual(x, contacts, g, robot)
                for _ in range(MAX_NEWTON_ITERS):
                    if np.abs(res0).max() < NEWTON_TOL:
                        break
                    J = _jacobian(x, contacts, g, robot)
                    try:
                        step = np.linalg.solve(J, -res0)
                    except np.linalg.LinAlgError:
                        break
                    lam, base, ok = 1.0, res0 @ res0, False
                    for _ in range(30):
                        trial = x + lam * step
                        r_t, F_t, v_t = _residual(trial, contacts, g, robot)
                        if r_t @ r_t < base:
                            x, res0, F0, v0 = trial, r_t, F_t, v_t
                            ok = True
                            break
                        lam *= 0.5
                    if not ok:
                        break
                return x, res0
            soft, _ = newton_soft(soft)
        xi, res, F, v = newton(soft)
    if np.abs(res).max() > RESIDUAL_TOL:
        guess = _grid_search(contacts, gm, robot)
        guess = _grid_search(contacts, gm, robot, box_v=0.2, box_w=0.8,
                             center=guess)
        xi, res, F, v = newton(guess)
        if np.abs(res).max() > RESIDUAL_TOL:
            raise SolverError(
                f"force balance did not converge (residual {np.abs(res).max():.3e})",
                residual=float(np.abs(res).max()),
            )
    return xi, F, v, float(np.abs(res).max())


def compute_joint_torques(pose, alphas, contacts, forces, robot):
    """Nondimensional torque about each body joint from the resolved forces.

    Joint ``j`` carries the net moment of every reaction force acting
    tail-ward of it, normalized by mu * m * g * BL.
    """
    _, _, joints = chain_frames(pose, alphas, robot)
    scale = robot.friction * robot.weight * robot.body_length
    tau = np.zeros(3)
    for j in range(1, 4):
        mask = contacts.seg >= j
        if not mask.any():
            continue
        r = contacts.pos[mask] - joints[j - 1]
        f = forces[mask]
        tau[j - 1] = np.sum(r[:, 0] * f[:, 1] - r[:, 1] * f[:, 0]) / scale
    return tau


# ---------------------------------------------------------------------------
# Trial integration

@dataclass
class TrialRecord:
    """Everything recorded from one simulated trial."""

    times: np.ndarray            # (N,)
    poses: np.ndarray            # (N + 1, 3) head-tip pose
    centers: np.ndarray          # (N + 1, 2) body-center position
    joint_angles: np.ndarray     # (N, 3)
    torques: np.ndarray          # (N, 3) nondimensional, joints 1..3
    loads: np.ndarray            # (N, 3) noisy load signal, % of stall
    cycle_speed_blc: np.ndarray  # (C,)
    cycle_median_load: np.ndarray  # (C, 3) filtered+rectified cycle medians
    cycle_phi: np.ndarray        # (C,) phase offset commanded during each cycle
    steps_per_cycle: int
    seed: int
    max_residual: float
    max_power: float             # max over steps/elements of F . v (<= 0 ideal)
    clamp_events: int


JOINT_NAMES = ("upper", "lower", "tail")


def body_center(pose, alphas, robot):
    headings, seg_start, _ = chain_frames(pose, alphas, robot)
    mids = seg_start + 0.5 * robot.segment_length * np.stack(
        [-np.cos(headings), -np.sin(headings)], axis=1
    )
    return mids.mean(axis=0)


def default_initial_pose(robot):
    """Head-tip pose placing the (straight) body center at the origin."""
    return np.array([robot.body_length / 2.0, 0.0, 0.0])


def simulate_trial(params, terrain, n_cycles, seed=0, robot=None, ground=None,
                   steps_per_cycle=100, controller=None,
                   load_cfg=None, mirror=False, rho_override=None,
                   initial_pose=None, clamp_limit="default", blend_frac=0.1):
    """Run ``n_cycles`` gait cycles and record the full trial.

    ``controller``, when given, is called once per cycle boundary with that
    cycle's median lower-joint load and must return the phase offset to
    command for the next cycle.  Identical inputs and seed reproduce the
    record bit for bit.
    """
    robot = robot or RobotModel()
    ground = ground or GroundModel()
    load_cfg = load_cfg or percept.LoadPipelineConfig()
    if n_cycles < 1:
        raise ValueError(f"n_cycles must be >= 1, got {n_cycles}")

    if mirror:
        # Reflection across the x-axis: leg attachments flip sides while
        # keeping their stance timing, and the body wave negates.
        robot = robot.mirrored()

    from .gait import BODY_JOINT_LIMIT
    limit = BODY_JOINT_LIMIT if clamp_limit == "default" else clamp_limit
    wave = BodyWave(params, clamp_limit=limit, blend_frac=blend_frac,
                    mirror=mirror)

    rng = np.random.default_rng(seed)
    omega = params.frequency
    dt = TWO_PI / omega / steps_per_cycle
    n_steps = n_cycles * steps_per_cycle

    pose = np.array(initial_pose if initial_pose is not None
                    else default_initial_pose(robot), dtype=float)

    times = np.empty(n_steps)
    poses = np.empty((n_steps + 1, 3))
    centers = np.empty((n_steps + 1, 2))
    joint_angles = np.empty((n_steps, 3))
    torques = np.empty((n_steps, 3))
    loads = np.empty((n_steps, 3))
    cycle_speed = np.empty(n_cycles)
    cycle_median = np.empty((n_cycles, 3))
    cycle_phi = np.empty(n_cycles)

    filt = percept.OnlineLoadPipeline(load_cfg, rng)
    xi_prev = None
    max_residual = 0.0
    max_power = -np.inf

    for k in range(n_steps):
        t = k * dt
        times[k] = t
        alphas, rates = wave.angles_and_rates(t)
        cycle_phase = (omega * t) % TWO_PI
        contacts = build_contacts(pose, alphas, rates, cycle_phase, params,
                                  robot, terrain, rho_override)
        try:
            xi, F, v, res = solve_quasistatic_velocity(contacts, ground,
                                                       robot, xi_prev)
        except SolverError as err:
            cyc = k // steps_per_cycle
            raise SolverError(
                f"cycle {cyc}, step {k % steps_per_cycle}: {err}",
                residual=err.residual,
            ) from err
        xi_prev = xi
        max_residual = max(max_residual, res)
        max_power = max(max_power, float(np.einsum("ij,ij->i", F, v).max()))

        poses[k] = pose
        centers[k] = body_center(pose, alphas, robot)
        joint_angles[k] = alphas
        torques[k] = compute_joint_torques(pose, alphas, contacts, F, robot)
        loads[k] = filt.push_raw(torques[k])

        # Midpoint rule: re-balance at the half step so the pose update is
        # second-order accurate in dt.
        t_mid = t + 0.5 * dt
        pose_half = pose + 0.5 * dt * xi
        alphas_m, rates_m = wave.angles_and_rates(t_mid)
        contacts_m = build_contacts(pose_half, alphas_m, rates_m,
                                    (omega * t_mid) % TWO_PI, params, robot,
                                    terrain, rho_override)
        try:
            xi_mid, F_m, v_m, res_m = solve_quasistatic_velocity(
                contacts_m, ground, robot, xi)
        except SolverError as err:
            cyc = k // steps_per_cycle
            raise SolverError(
                f"cycle {cyc}, step {k % steps_per_cycle} (midpoint): {err}",
                residual=err.residual,
            ) from err
        xi_prev = xi_mid
        max_residual = max(max_residual, res_m)
        max_power = max(max_power,
                        float(np.einsum("ij,ij->i", F_m, v_m).max()))
        pose = pose + dt * xi_mid

        if (k + 1) % steps_per_cycle == 0:
            c = k // steps_per_cycle
            lo = c * steps_per_cycle
            cycle_phi[c] = wave.phi
            cycle_median[c] = filt.cycle_median(lo, k + 1)
            if controller is not None and c < n_cycles - 1:
                new_phi = controller(cycle_median[c, 1])
                wave.set_phase(new_phi, omega * (t + dt))

    alphas, _ = wave.angles_and_rates(n_steps * dt)
    poses[n_steps] = pose
    centers[n_steps] = body_center(pose, alphas, robot)
    for c in range(n_cycles):
        dx = centers[(c + 1) * steps_per_cycle, 0] - centers[c * steps_per_cycle, 0]
        cycle_speed[c] = dx / robot.body_length

    return TrialRecord(
        times=times, poses=poses, centers=centers, joint_angles=joint_angles,
        torques=torques, loads=loads,
        cycle_speed_blc=cycle_speed, cycle_median_load=cycle_median,
        cycle_phi=cycle_phi, steps_per_cycle=steps_per_cycle, seed=seed,
        max_residual=max_residual, max_power=max_power,
        clamp_events=wave.clamp_events,
    )


def speed_bl_per_cycle(record):
    """Per-cycle forward speed (BL/C) and its mean over the trial."""
    if len(record.cycle_speed_blc) < 1:
        raise ValueError("record contains no complete cycle")
    per_cycle = record.cycle_speed_blc
    return per_cycle, float(per_cycle.mean())


def torque_vs_rft_ratio(phi, ratios, robot=None, ground=None,
                        steps_per_cycle=100, params=None):
    """Median |tau~| per joint for each fixed drag/Coulomb blend ratio.

    One noise-free cycle per ratio; output rows follow the input order.
    """
    robot = robot or RobotModel()
    ground = ground or GroundModel()
    out = []
    for rho in ratios:
        if not 0 <= rho <= 1:
            raise ValueError(f"blend ratio must lie in [0, 1], got {rho}")
        base = params or GaitParams()
        g = GaitParams(base.amplitude, base.frequency, phi, base.beta_land,
                       base.beta_lift, base.duty, base.stance_offset,
                       base.ramp_frac)
        rec = simulate_trial(
            g, TerrainProfile.flat(), n_cycles=1, seed=0, robot=robot,
            ground=ground, steps_per_cycle=steps_per_cycle,
            rho_override=rho,
            load_cfg=percept.LoadPipelineConfig(noise_cov=0.0),
        )
        medians = np.median(np.abs(rec.torques), axis=0)
        out.append((rho, medians))
    return out
