"""Flow control of interacting particle densities by forward-backward sweeps.

The objective is a misfit-plus-control-cost functional: half the squared
distance of the densities from target profiles plus beta/2 times the squared
control field, integrated over space and time.

Both the state and the adjoint equations are collocated in time on a
Chebyshev-Lobatto grid (matching quadrature weights give the time
integrals), so one space-time residual system describes each solve: the
state system is solved by Newton, the adjoint system is linear. Gradients
of the discrete cost are exact via the transposed state linearization,
which is what the finite-difference consistency check exercises.

The outer optimizer is a relaxed fixed-point sweep on the stationarity
equation w = -(1/beta) sum_a rho_a grad q_a, tracking the best iterate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .chebyshev import cheb_lobatto_nodes, clenshaw_curtis_weights, diff_matrix, interp_matrix_1d
from .convolution import convolution_matrix_pair
from .dae import StepperConfig
from .ddft import (
    DynamicsOperators,
    SpeciesParams,
    interaction_gradient_kernels,
)
from .errors import NumericError


@dataclass(eq=False)
class TimeGrid:
    """Chebyshev-Lobatto nodes on [0, T], ascending, with weights and D_t."""

    t_final: float
    n: int
    nodes: np.ndarray = field(init=False)
    weights: np.ndarray = field(init=False)
    diff: np.ndarray = field(init=False)
    _nodeset: object = field(init=False, repr=False)

    def __post_init__(self):
        if self.n < 3:
            raise ValueError("need at least 3 time nodes")
        ns = cheb_lobatto_nodes(self.n)
        self.nodes = 0.5 * (1.0 - ns.nodes) * self.t_final
        self.weights = 0.5 * self.t_final * clenshaw_curtis_weights(ns)
        self.diff = -(2.0 / self.t_final) * diff_matrix(ns)
        self._nodeset = ns

    def interp_row(self, t: float) -> np.ndarray:
        comp = 1.0 - 2.0 * t / self.t_final
        return interp_matrix_1d(self._nodeset, np.array([comp]))[0]

    def interpolant(self, values: np.ndarray):
        def evaluate(t):
            return np.tensordot(self.interp_row(float(t)), values, axes=(0, 0))

        return evaluate


@dataclass(eq=False)
class OCPConfig:
    dom: object
    params: SpeciesParams
    beta: float
    time: TimeGrid
    targets: np.ndarray  # (ns, n_time, M)
    rho_ic: np.ndarray  # (ns, M) mass-normalized start densities
    stepper: StepperConfig = None  # kept for interface parity; inner solves are collocated
    relaxation: float = 0.3
    max_outer: int = 60
    tol: float = 1e-6
    newton_tol: float = 1e-11
    max_newton: int = 30

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("regularization parameter must be positive")
        self.targets = np.asarray(self.targets, dtype=float)
        self.rho_ic = np.atleast_2d(np.asarray(self.rho_ic, dtype=float))


@dataclass(eq=False)
class OCPSolution:
    rho: np.ndarray  # (ns, n_time, M)
    adjoint: np.ndarray  # (ns, n_time, M)
    control: np.ndarray  # (n_time, 2M), element-frame components
    j_value: float
    j_uncontrolled: float
    history: list  # rows (iter, J, grad_residual)
    converged: bool


class SpaceTimeSystem:
    """Shared machinery for the collocated state and adjoint systems.

    Unknowns are ordered state-node-major: index (a, k) holds species a at
    time node k, flattened to (a * n_t + k) * M + space.
    """

    def __init__(self, config: OCPConfig):
        self.config = config
        self.dom = config.dom
        self.params = config.params
        self.ops = DynamicsOperators(self.dom, self.params)
        self.m = self.dom.num_points
        self.ns = self.params.n_species
        self.nt = config.time.n
        self.dim = self.ns * self.nt * self.m
        mask = np.ones(self.m)
        mask[self.dom.algebraic_nodes()] = 0.0
        self.space_mask = mask
        # start state: the mass-preserving smooth projection at zero control,
        # fixed once so the discrete cost's control-gradient stays exact
        from .dae import DAESystem
        from .ddft import _smooth_consistent_init

        proj_sys = DAESystem(
            dim=self.ns * self.m,
            rhs=self.ops.rhs,
            mass_mask=np.tile(mask, self.ns),
            jacobian=self.ops.jacobian,
        )
        self.rho_ic_proj = _smooth_consistent_init(
            self.ops, proj_sys, config.rho_ic.ravel(), 0.0, 1e-10
        ).reshape(self.ns, self.m)
        # gradient-of-potential convolutions, Cartesian components
        self.grad_conv = [
            [
                convolution_matrix_pair(
                    self.dom, *interaction_gradient_kernels(self.params, a, b)
                )
                for b in range(self.ns)
            ]
            for a in range(self.ns)
        ]
        self._frame = _frame_rows(self.dom)

    def block(self, a: int, k: int) -> slice:
        start = (a * self.nt + k) * self.m
        return slice(start, start + self.m)

    # -- state ---------------------------------------------------------------

    def state_residual(self, traj: np.ndarray, control: np.ndarray) -> np.ndarray:
        """traj (ns, nt, M); rows: IC at node 0, collocation elsewhere."""
        cfg = self.config
        out = np.empty(self.dim)
        dtraj = np.einsum("kl,alm->akm", cfg.time.diff, traj)
        for k in range(self.nt):
            state_k = traj[:, k, :].ravel()
            f_k = self.ops.rhs_with_control(state_k, control[k])
            for a in range(self.ns):
                if k == 0:
                    rows = traj[a, 0] - self.rho_ic_proj[a]
                else:
                    rows = self.space_mask * dtraj[a, k] - f_k[a * self.m : (a + 1) * self.m]
                out[self.block(a, k)] = rows
        return out

    def state_jacobian(self, traj: np.ndarray, control: np.ndarray) -> np.ndarray:
        cfg = self.config
        jac = np.zeros((self.dim, self.dim))
        dt = cfg.time.diff
        m = self.m
        interior = np.flatnonzero(self.space_mask == 1.0)
        for k in range(self.nt):
            if k == 0:
                for a in range(self.ns):
                    sl = self.block(a, 0)
                    jac[sl, sl] = np.eye(m)
                continue
            state_k = traj[:, k, :].ravel()
            jf = self.ops.jacobian_with_control(state_k, control[k])
            for a in range(self.ns):
                rows = self.block(a, k)
                for b in range(self.ns):
                    jac[rows, self.block(b, k)] -= jf[a * m : (a + 1) * m, b * m : (b + 1) * m]
                for l in range(self.nt):
                    jac[rows.start + interior, self.block(a, l).start + interior] += dt[k, l]
        return jac

    def state_solve(self, control: np.ndarray, guess: np.ndarray = None) -> np.ndarray:
        cfg = self.config
        traj = (
            np.tile(self.rho_ic_proj[:, None, :], (1, self.nt, 1))
            if guess is None
            else np.array(guess, dtype=float)
        )
        scale = max(1.0, float(np.max(np.abs(cfg.rho_ic))))
        for it in range(cfg.max_newton):
            res = self.state_residual(traj, control)
            if np.max(np.abs(res)) <= cfg.newton_tol * scale:
                return traj
            jac = self.state_jacobian(traj, control)
            try:
                delta = scipy.linalg.solve(jac, res)
            except (ValueError, scipy.linalg.LinAlgError) as exc:
                raise NumericError("state collocation system is singular") from exc
            traj = traj - delta.reshape(self.ns, self.nt, self.m)
        res = self.state_residual(traj, control)
        if np.max(np.abs(res)) <= 1e3 * cfg.newton_tol * scale:
            return traj
        raise NumericError(
            f"state solve did not converge (residual {np.max(np.abs(res)):.3e})"
        )

    def control_jacobian_block(self, traj: np.ndarray, k: int) -> np.ndarray:
        """d residual(nodes k) / d control_k, shape (ns*M, 2M)."""
        state_k = traj[:, k, :].ravel()
        if k == 0:
            return np.zeros((self.ns * self.m, 2 * self.m))
        return -self.ops.control_jacobian(state_k)

    # -- cost and exact gradient ----------------------------------------------

    def cost(self, traj: np.ndarray, control: np.ndarray) -> float:
        cfg = self.config
        dom = self.dom
        m = self.m
        misfit = 0.0
        ctrl = 0.0
        for k, wt in enumerate(cfg.time.weights):
            for a in range(self.ns):
                diff = traj[a, k] - cfg.targets[a, k]
                misfit += wt * (dom.int_row @ diff**2)
            w_k = control[k]
            ctrl += wt * (dom.int_row @ (w_k[:m] ** 2 + w_k[m:] ** 2))
        return float(0.5 * misfit + 0.5 * cfg.beta * ctrl)

    def cost_state_gradient(self, traj: np.ndarray) -> np.ndarray:
        cfg = self.config
        out = np.empty(self.dim)
        for a in range(self.ns):
            for k in range(self.nt):
                out[self.block(a, k)] = (
                    cfg.time.weights[k]
                    * self.dom.int_row
                    * (traj[a, k] - cfg.targets[a, k])
                )
        return out

    def discrete_adjoint(self, traj: np.ndarray, control: np.ndarray) -> np.ndarray:
        """Multipliers of the collocated state system for the discrete cost."""
        jac = self.state_jacobian(traj, control)
        rhs = self.cost_state_gradient(traj)
        try:
            return scipy.linalg.solve(jac.T, rhs)
        except (ValueError, scipy.linalg.LinAlgError) as exc:
            raise NumericError("adjoint (transpose) system is singular") from exc

    def cost_gradient(self, traj: np.ndarray, control: np.ndarray) -> np.ndarray:
        """Exact gradient of the discrete cost w.r.t. the nodal control."""
        cfg = self.config
        lam = self.discrete_adjoint(traj, control)
        m = self.m
        grad = np.empty_like(control)
        for k in range(self.nt):
            w_k = control[k]
            explicit = cfg.beta * cfg.time.weights[k] * np.concatenate(
                [self.dom.int_row * w_k[:m], self.dom.int_row * w_k[m:]]
            )
            lam_k = np.concatenate(
                [lam[self.block(a, k)] for a in range(self.ns)]
            )
            grad[k] = explicit - self.control_jacobian_block(traj, k).T @ lam_k
        return grad

    # -- adjoint PDE (collocated) ----------------------------------------------

    def adjoint_solve(self, traj: np.ndarray, control: np.ndarray) -> np.ndarray:
        """Collocated solve of the adjoint PDE system; q(T) = 0 exactly.

        The system is linear in q: diffusion run backward, transport by the
        flow and external force, the density misfit as source, and the
        non-local exchange coupling all species' adjoints. Boundary rows
        impose a vanishing normal derivative; interface rows impose value
        continuity on the lower-element side and normal-derivative matching
        on the other.
        """
        dom = self.dom
        m, ns, nt = self.m, self.ns, self.nt
        cfg = self.config
        dt = cfg.time.diff
        interior = np.flatnonzero(self.space_mask == 1.0)
        cart_x, cart_y = self._frame
        cart_grad_x = cart_x @ dom.grad
        cart_grad_y = cart_y @ dom.grad
        normal_grad = self.ops.normal_op @ dom.grad
        a_mat = np.zeros((self.dim, self.dim))
        b_vec = np.zeros(self.dim)
        last = nt - 1
        for a in range(ns):
            sl = self.block(a, last)
            a_mat[sl, sl] = np.eye(m)
        for k in range(last):
            rhos_k = traj[:, k, :]
            w_k = control[k]
            for a in range(ns):
                rows = self.block(a, k)
                row_int = rows.start + interior
                adv = w_k - self.params.v_ext_grad[a]
                # dq_a/dt = L q + source; collocation: sum_l dt[k,l] q_a(l) - L q(k) = source
                spatial = -dom.lap - (
                    adv[:m, None] * dom.grad[:m] + adv[m:, None] * dom.grad[m:]
                )
                for b in range(ns):
                    force = self.grad_conv[a][b] @ rhos_k[b]
                    spatial += force[:m, None] * cart_grad_x + force[m:, None] * cart_grad_y
                a_mat[np.ix_(row_int, np.arange(rows.start, rows.stop))] -= spatial[interior]
                for b in range(ns):
                    cross = -(
                        self.grad_conv[a][b][:m] @ (rhos_k[b][:, None] * cart_grad_x)
                        + self.grad_conv[a][b][m:] @ (rhos_k[b][:, None] * cart_grad_y)
                    )
                    cols = self.block(b, k)
                    a_mat[np.ix_(row_int, np.arange(cols.start, cols.stop))] -= cross[interior]
                for l in range(nt):
                    a_mat[row_int, self.block(a, l).start + interior] += dt[k, l]
                b_vec[row_int] = (cfg.targets[a, k] - rhos_k[a])[interior]
                # condition rows
                off = rows.start
                a_mat[off + dom.bound, :] = 0.0
                a_mat[np.ix_(off + dom.bound, np.arange(rows.start, rows.stop))] = normal_grad
                b_vec[off + dom.bound] = 0.0
                for spec in dom.intersections:
                    sel = dom._cached_selector(spec, "i") + dom._cached_selector(spec, "j")
                    a_mat[off + spec.nodes_i, :] = 0.0
                    a_mat[off + spec.nodes_i, off + spec.nodes_i] = 1.0
                    a_mat[off + spec.nodes_i, off + spec.nodes_j] = -1.0
                    b_vec[off + spec.nodes_i] = 0.0
                    a_mat[off + spec.nodes_j, :] = 0.0
                    a_mat[np.ix_(off + spec.nodes_j, np.arange(rows.start, rows.stop))] = (
                        sel @ dom.grad
                    )
                    b_vec[off + spec.nodes_j] = 0.0
        try:
            sol = scipy.linalg.solve(a_mat, b_vec)
        except (ValueError, scipy.linalg.LinAlgError) as exc:
            raise NumericError("adjoint collocation system is singular") from exc
        return sol.reshape(ns, nt, m)


def _frame_rows(dom):
    """(M, 2M) selectors turning an element-frame vector field Cartesian."""
    m = dom.num_points
    cart_x = np.zeros((m, 2 * m))
    cart_y = np.zeros((m, 2 * m))
    idx = np.arange(m)
    c11, c12, c21, c22 = dom.frame_coefficients(idx)
    cart_x[idx, idx] = c11
    cart_x[idx, idx + m] = c12
    cart_y[idx, idx] = c21
    cart_y[idx, idx + m] = c22
    return cart_x, cart_y


# -- public operations --------------------------------------------------------


def state_solve(config: OCPConfig, control: np.ndarray, system: SpaceTimeSystem = None):
    system = system or SpaceTimeSystem(config)
    return system.state_solve(control)


def adjoint_solve(config: OCPConfig, traj, control, system: SpaceTimeSystem = None):
    system = system or SpaceTimeSystem(config)
    return system.adjoint_solve(traj, control)


def cost(config: OCPConfig, traj, control, system: SpaceTimeSystem = None) -> float:
    system = system or SpaceTimeSystem(config)
    return system.cost(traj, control)


def gradient_equation(config: OCPConfig, traj: np.ndarray, q_traj: np.ndarray) -> np.ndarray:
    """Stationarity control w = -(1/beta) sum_a rho_a grad q_a per time node."""
    dom = config.dom
    m = dom.num_points
    nt = config.time.n
    out = np.zeros((nt, 2 * m))
    for k in range(nt):
        acc = np.zeros(2 * m)
        for a in range(config.params.n_species):
            rho2 = np.concatenate([traj[a, k], traj[a, k]])
            acc += rho2 * (dom.grad @ q_traj[a, k])
        out[k] = -acc / config.beta
    return out


def _control_norm(config: OCPConfig, field: np.ndarray) -> float:
    """Space-time L2 norm of a nodal control-shaped field."""
    m = config.dom.num_points
    total = 0.0
    for k, wt in enumerate(config.time.weights):
        total += wt * (config.dom.int_row @ (field[k, :m] ** 2 + field[k, m:] ** 2))
    return float(np.sqrt(max(total, 0.0)))


def gradient_residual(config: OCPConfig, traj, q_traj, control) -> float:
    """Space-time norm of beta*w + sum_a rho_a grad q_a."""
    dom = config.dom
    m = dom.num_points
    total = 0.0
    for k, wt in enumerate(config.time.weights):
        res = config.beta * control[k].copy()
        for a in range(config.params.n_species):
            rho2 = np.concatenate([traj[a, k], traj[a, k]])
            res += rho2 * (dom.grad @ q_traj[a, k])
        total += wt * (dom.int_row @ (res[:m] ** 2 + res[m:] ** 2))
    return float(np.sqrt(max(total, 0.0)))


def directional_derivative_adjoint(config: OCPConfig, control, direction, system=None) -> float:
    """dJ/dw in a direction, from the (discrete) adjoint representation."""
    system = system or SpaceTimeSystem(config)
    traj = system.state_solve(control)
    grad = system.cost_gradient(traj, control)
    return float(np.sum(grad * direction))


def solve_ocp(config: OCPConfig, w_init: np.ndarray = None) -> OCPSolution:
    """Relaxed forward-backward sweep; returns the best iterate by cost.

    The relaxation factor backtracks whenever the stationarity update would
    increase the cost (small beta makes the raw update violent), so accepted
    iterates are non-increasing in J.
    """
    system = SpaceTimeSystem(config)
    m = config.dom.num_points
    control = (
        np.zeros((config.time.n, 2 * m)) if w_init is None else np.array(w_init, dtype=float)
    )
    traj = system.state_solve(control)
    j_val = system.cost(traj, control)
    q_traj = system.adjoint_solve(traj, control)
    history = [(0, j_val, gradient_residual(config, traj, q_traj, control))]
    j_uncontrolled = j_val if w_init is None else None
    best = (j_val, traj, q_traj, control.copy())
    converged = False
    for it in range(1, config.max_outer + 1):
        w_new = gradient_equation(config, traj, q_traj)
        gamma = config.relaxation
        accepted = False
        for _ in range(12):
            trial = (1.0 - gamma) * control + gamma * w_new
            try:
                traj_t = system.state_solve(trial, guess=traj)
            except NumericError:
                gamma *= 0.5
                continue
            j_t = system.cost(traj_t, trial)
            # allow cost-neutral moves: near the fixed point J is flat along
            # the sweep direction while w still has to converge
            if j_t <= j_val + 1e-12 * (1.0 + abs(j_val)):
                accepted = True
                break
            gamma *= 0.5
        if not accepted:
            break  # no acceptable move along the sweep direction
        w_scale = np.max(np.abs(trial)) + 1e-30
        w_change = np.max(np.abs(trial - control)) / w_scale
        j_change = abs(j_t - j_val) / (abs(j_val) + 1e-30)
        control, traj, j_val = trial, traj_t, j_t
        q_traj = system.adjoint_solve(traj, control)
        resid = gradient_residual(config, traj, q_traj, control)
        history.append((it, j_val, resid))
        if j_val <= best[0]:
            best = (j_val, traj, q_traj, control.copy())
        norm_bw = _control_norm(config, config.beta * control)
        if resid <= config.tol * norm_bw + 1e-9:
            converged = True
            break
        if j_change <= config.tol and w_change <= config.tol:
            converged = True
            break
    j_best, rho_best, q_best, w_best = best
    if j_uncontrolled is None:
        j_uncontrolled = history[0][1]
    return OCPSolution(
        rho=rho_best,
        adjoint=q_best,
        control=w_best,
        j_value=j_best,
        j_uncontrolled=j_uncontrolled,
        history=history,
        converged=converged,
    )


def make_targets_from_flow(dom, params, time_grid, rho_ic, flow_control):
    """Forward collocated solve under a prescribed flow, as target profiles."""
    cfg = OCPConfig(
        dom=dom,
        params=params,
        beta=1.0,
        time=time_grid,
        targets=np.zeros((params.n_species, time_grid.n, dom.num_points)),
        rho_ic=rho_ic,
    )
    return SpaceTimeSystem(cfg).state_solve(flow_control)
