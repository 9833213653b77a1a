"""Shared closed-loop machinery for the linear adaptive tracking designs.

One engine drives every linear controller structure, in both time domains.
The single-output designs are run through the same code path as the
multivariable ones with one I/O channel, so their discrete-time traces agree
bit for bit when the gain slots carry equal values.

Update law slots (basic normalized gradient, unified over domains):

    dTheta = -(Gz zeta) (Sp eps)^T / m^2      (DT: increment, CT: derivative)
    dPsi   = -(Gpsi eps) xi^T / m^2

The single-output law puts its adaptation-gain matrix in the zeta-side slot
Gz and sign(kp) in Sp; the multivariable law puts its known gain matrix in
Sp with Gz the identity.  Both yield the same certificate

    V = tr[Theta~^T Gz^-1 Theta~ Gp] + tr[Psi~^T Gpsi^-1 Psi~],
    Gp = Kp^T Sp^-1,

non-increasing along discrete-time runs and with dV/dt = -2 |eps|^2 / m^2 in
continuous time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import GainBoundViolation
from .linsys import (
    DiagonalInteractor,
    FilterBank,
    Polynomial,
    RationalFilter,
    StateSpace,
    rk4_step,
)


class Structure(Enum):
    SF_XM = "sf_xm"  # state feedback, reference state available
    SF_YM = "sf_ym"  # state feedback, reference input/output only
    OF_XM = "of_xm"  # output feedback, reference state available
    OF_YM = "of_ym"  # output feedback, reference input/output only


def regressor_dim(structure, n, m, nu=None, nbe=None):
    """Regressor length for a controller structure (n states, m channels)."""
    if structure is Structure.SF_XM:
        return 2 * n + m
    if structure is Structure.SF_YM:
        return n + 2 * m * nbe + 2 * m
    if structure is Structure.OF_XM:
        return 2 * m * (nu - 1) + m + n + m
    if structure is Structure.OF_YM:
        return 2 * m * (nu - 1) + m + 2 * m * nbe + 2 * m
    raise ValueError(structure)


def assemble_regressor(structure, parts):
    """Stack the structure's regressor from named signal blocks.

    parts keys: x, xm, y, ym, um, w1, w2, wum, wym (only those the structure
    uses need to be present).
    """
    s = Structure(structure)
    if s is Structure.SF_XM:
        blocks = (parts["x"], parts["xm"], parts["um"])
    elif s is Structure.SF_YM:
        blocks = (parts["x"], parts["wum"], parts["wym"], parts["ym"], parts["um"])
    elif s is Structure.OF_XM:
        blocks = (parts["w1"], parts["w2"], parts["y"], parts["xm"], parts["um"])
    else:
        blocks = (
            parts["w1"],
            parts["w2"],
            parts["y"],
            parts["wum"],
            parts["wym"],
            parts["ym"],
            parts["um"],
        )
    return np.concatenate([np.atleast_1d(b) for b in blocks])


@dataclass
class Frame:
    """Per-step estimation-error signals."""

    omega: np.ndarray
    zeta: np.ndarray
    xi: np.ndarray
    ebar: np.ndarray
    eps: np.ndarray
    m: float

    @property
    def m2(self):
        return self.m * self.m


def gradient_rhs(gz, sp, gpsi, zeta, xi, eps, m2):
    """Right-hand sides of the normalized-gradient law (see module docstring)."""
    dtheta = -np.outer(gz @ zeta, sp @ eps) / m2
    dpsi = -np.outer(gpsi @ eps, xi) / m2
    return dtheta, dpsi


def certificate(theta, psi, theta_star, kp, gz, sp, gpsi):
    """Lyapunov certificate V(Theta~, Psi~) for the gradient law."""
    tht = theta - theta_star
    psit = psi - kp
    gp = kp.T @ np.linalg.inv(sp)
    vt = np.trace(tht.T @ np.linalg.solve(gz, tht) @ gp)
    vp = np.trace(psit.T @ np.linalg.solve(gpsi, psit))
    return vt + vp


@dataclass
class GradientLaw:
    """Gain slots of the basic normalized-gradient law."""

    gz: np.ndarray  # (q, q) zeta-side gain
    sp: np.ndarray  # (m, m) eps-side gain
    gpsi: np.ndarray  # (m, m) Psi gain

    def __post_init__(self):
        self.gz = np.atleast_2d(np.asarray(self.gz, dtype=float))
        self.sp = np.atleast_2d(np.asarray(self.sp, dtype=float))
        self.gpsi = np.atleast_2d(np.asarray(self.gpsi, dtype=float))

    def check_dt_bounds(self, kp_bound=None):
        """Admissibility for discrete time; kp_bound scales the zeta-side check."""
        eig_gpsi = np.max(np.linalg.eigvalsh(0.5 * (self.gpsi + self.gpsi.T)))
        if eig_gpsi >= 2.0 or eig_gpsi <= 0.0:
            raise GainBoundViolation("Psi gain must satisfy 0 < Gpsi < 2I in discrete time")
        if kp_bound is not None:
            eig_gz = np.max(np.linalg.eigvalsh(0.5 * (self.gz + self.gz.T)))
            if eig_gz >= 2.0 / kp_bound or eig_gz <= 0.0:
                raise GainBoundViolation(
                    "zeta-side gain must satisfy 0 < Gz < (2/kp_bound) I in discrete time"
                )


@dataclass
class Rd1Law:
    """Lyapunov-design law for relative-degree-one continuous-time plants.

    dTheta^T = -S^T P e omega^T with P A0 + A0^T P = -Q, A0 = -P0.
    """

    s: np.ndarray
    p: np.ndarray
    q: np.ndarray

    def rhs(self, e, omega):
        return -np.outer(omega, self.s.T @ (self.p @ e))


@dataclass
class SimTrace:
    """Uniform-grid record of a closed-loop run."""

    t: np.ndarray
    y: np.ndarray
    ym: np.ndarray
    e: np.ndarray
    u: np.ndarray
    m: np.ndarray
    eps: np.ndarray
    v: np.ndarray
    theta_norm: np.ndarray
    guard_events: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def n_samples(self):
        return self.t.size

    @property
    def n_channels(self):
        return self.y.shape[1]


class _Recorder:
    def __init__(self, n, m):
        self.t = np.zeros(n)
        self.y = np.zeros((n, m))
        self.ym = np.zeros((n, m))
        self.e = np.zeros((n, m))
        self.u = np.zeros((n, m))
        self.m = np.zeros(n)
        self.eps = np.zeros((n, m))
        self.v = np.full(n, np.nan)
        self.theta_norm = np.zeros(n)
        self.l2_eps = np.zeros(n)
        self.l2_dtheta = np.zeros(n)
        self.k = 0

    def push(self, t, y, ym, e, u, m, eps, v, theta_norm, l2e, l2d):
        k = self.k
        self.t[k] = t
        self.y[k] = y
        self.ym[k] = ym
        self.e[k] = e
        self.u[k] = u
        self.m[k] = m
        self.eps[k] = eps
        if v is not None:
            self.v[k] = v
        self.theta_norm[k] = theta_norm
        self.l2_eps[k] = l2e
        self.l2_dtheta[k] = l2d
        self.k += 1

    def trace(self, guard_events=None, extra=None):
        k = self.k
        ex = {"l2_eps_cum": self.l2_eps[:k], "l2_dtheta_cum": self.l2_dtheta[:k]}
        if extra:
            ex.update(extra)
        return SimTrace(
            t=self.t[:k],
            y=self.y[:k],
            ym=self.ym[:k],
            e=self.e[:k],
            u=self.u[:k],
            m=self.m[:k],
            eps=self.eps[:k],
            v=self.v[:k],
            theta_norm=self.theta_norm[:k],
            guard_events=list(guard_events or []),
            extra=ex,
        )


@dataclass
class LoopSpec:
    """Everything the closed-loop engine needs for one run.

    The controller side (structure, design polynomials, gains, theta0) never
    reads the plant matrices; they appear only through the simulated signals.
    """

    plant: StateSpace
    refmodel: StateSpace
    um: object  # callable t -> (m,) input of the reference system
    structure: Structure
    interactor: DiagonalInteractor
    fpoly: Polynomial
    lam: Polynomial = None
    nu: int = None
    lam_e: Polynomial = None
    nbe: int = None
    theta0: np.ndarray = None
    psi0: np.ndarray = None
    x0: np.ndarray = None
    xm0: np.ndarray = None

    @property
    def n(self):
        return self.plant.n

    @property
    def m(self):
        return self.plant.n_outputs

    @property
    def q(self):
        return regressor_dim(self.structure, self.n, self.m, self.nu, self.nbe)


class ClosedLoop:
    """Stateful closed loop: plant, reference system, filters, adaptation."""

    def __init__(self, spec, law=None):
        self.spec = spec
        self.law = law  # None = nominal (frozen parameters)
        self.domain = spec.plant.domain
        n, m, q = spec.n, spec.m, spec.q
        s = spec.structure
        self.x = np.zeros(n) if spec.x0 is None else np.asarray(spec.x0, dtype=float).copy()
        self.xm = (
            np.zeros(spec.refmodel.n)
            if spec.xm0 is None
            else np.asarray(spec.xm0, dtype=float).copy()
        )
        self.theta = np.zeros((q, m)) if spec.theta0 is None else np.array(spec.theta0, dtype=float)
        if self.theta.shape != (q, m):
            raise ValueError(f"theta0 shape {self.theta.shape} != {(q, m)}")
        self.psi = np.zeros((m, m)) if spec.psi0 is None else np.array(spec.psi0, dtype=float)
        self.bank_u = self.bank_y = self.bank_um = self.bank_ym = None
        if s in (Structure.OF_XM, Structure.OF_YM):
            self.bank_u = FilterBank(range(spec.nu - 1), spec.lam, self.domain, width=m)
            self.bank_y = FilterBank(range(spec.nu - 1), spec.lam, self.domain, width=m)
        if s in (Structure.SF_YM, Structure.OF_YM):
            self.bank_um = FilterBank(range(spec.nbe), spec.lam_e, self.domain, width=m)
            self.bank_ym = FilterBank(range(spec.nbe), spec.lam_e, self.domain, width=m)
        self.zeta_f = RationalFilter([1.0], spec.fpoly, self.domain, width=q)
        self.eta_f = RationalFilter([1.0], spec.fpoly, self.domain, width=m)
        self.ebar_f = [
            RationalFilter(d, spec.fpoly, self.domain, width=1)
            for d in spec.interactor.rows
        ]
        # cumulative L2 bookkeeping
        self.l2_eps = 0.0
        self.l2_dtheta = 0.0

    # -- algebraic pipeline ------------------------------------------------

    def _parts(self, t, x, xm, bank_states):
        plant, ref = self.spec.plant, self.spec.refmodel
        y = plant.output(x)
        ym = ref.output(xm)
        umt = np.atleast_1d(self.spec.um(t))
        parts = {"x": x, "xm": xm, "y": y, "ym": ym, "um": umt}
        if self.bank_u is not None:
            parts["w1"] = self.bank_u.output_from(bank_states["w1"])
            parts["w2"] = self.bank_y.output_from(bank_states["w2"])
        if self.bank_um is not None:
            parts["wum"] = self.bank_um.output_from(bank_states["wum"], umt)
            parts["wym"] = self.bank_ym.output_from(bank_states["wym"], ym)
        return parts

    def _algebra(self, t, x, xm, bank_states, filt_states, theta, psi):
        parts = self._parts(t, x, xm, bank_states)
        e = parts["y"] - parts["ym"]
        omega = assemble_regressor(self.spec.structure, parts)
        zeta = self.zeta_f.output_from(filt_states["zeta"])
        u = theta.T @ omega
        xi = theta.T @ zeta - self.eta_f.output_from(filt_states["eta"])
        ebar = np.concatenate(
            [
                f.output_from(st, e[i : i + 1])
                for i, (f, st) in enumerate(zip(self.ebar_f, filt_states["ebar"]))
            ]
        )
        eps = ebar + psi @ xi
        m2 = 1.0 + zeta @ zeta + xi @ xi
        frame = Frame(omega, zeta, xi, ebar, eps, np.sqrt(m2))
        return parts, e, u, frame

    def _live_bank_states(self):
        st = {}
        if self.bank_u is not None:
            st["w1"] = self.bank_u.state
            st["w2"] = self.bank_y.state
        if self.bank_um is not None:
            st["wum"] = self.bank_um.state
            st["wym"] = self.bank_ym.state
        return st

    def _live_filt_states(self):
        return {
            "zeta": self.zeta_f.state,
            "eta": self.eta_f.state,
            "ebar": [f.state for f in self.ebar_f],
        }

    def measure(self, t):
        """Algebraic pipeline at the current stored state."""
        return self._algebra(
            t, self.x, self.xm, self._live_bank_states(), self._live_filt_states(),
            self.theta, self.psi,
        )

    def _update_rhs(self, e, frame):
        if self.law is None:
            return np.zeros_like(self.theta), np.zeros_like(self.psi)
        if isinstance(self.law, Rd1Law):
            return self.law.rhs(e, frame.omega), np.zeros_like(self.psi)
        return gradient_rhs(
            self.law.gz, self.law.sp, self.law.gpsi,
            frame.zeta, frame.xi, frame.eps, frame.m2,
        )

    # -- discrete-time stepping ---------------------------------------------

    def dt_step(self, t):
        parts, e, u, frame = self.measure(t)
        dtheta, dpsi = self._update_rhs(e, frame)
        # advance dynamic states with current inputs
        self.x = self.spec.plant.step(self.x, u)
        self.xm = self.spec.refmodel.step(self.xm, parts["um"])
        if self.bank_u is not None:
            self.bank_u.step(u)
            self.bank_y.step(parts["y"])
        if self.bank_um is not None:
            self.bank_um.step(parts["um"])
            self.bank_ym.step(parts["ym"])
        self.zeta_f.step(frame.omega)
        self.eta_f.step(u)
        for i, f in enumerate(self.ebar_f):
            f.step(e[i : i + 1])
        self.theta = self.theta + dtheta
        self.psi = self.psi + dpsi
        self.l2_eps += float(frame.eps @ frame.eps) / frame.m2
        self.l2_dtheta += float(np.sum(dtheta * dtheta) + np.sum(dpsi * dpsi))
        return parts, e, u, frame

    # -- continuous-time stepping -------------------------------------------

    def _pack(self):
        pieces = [self.x, self.xm]
        for b in (self.bank_u, self.bank_y, self.bank_um, self.bank_ym):
            if b is not None:
                pieces.append(b.state.ravel())
        pieces.append(self.zeta_f.state.ravel())
        pieces.append(self.eta_f.state.ravel())
        for f in self.ebar_f:
            pieces.append(f.state.ravel())
        pieces.append(self.theta.ravel())
        pieces.append(self.psi.ravel())
        return np.concatenate(pieces)

    def _unpack(self, flat):
        spec = self.spec
        n, m, q = spec.n, spec.m, spec.q
        i = 0

        def take(k):
            nonlocal i
            out = flat[i : i + k]
            i += k
            return out

        x = take(n)
        xm = take(spec.refmodel.n)
        bank_states = {}
        for name, b in (
            ("w1", self.bank_u), ("w2", self.bank_y),
            ("wum", self.bank_um), ("wym", self.bank_ym),
        ):
            if b is not None:
                bank_states[name] = take(b.state.size).reshape(b.state.shape)
        filt_states = {
            "zeta": take(self.zeta_f.state.size).reshape(self.zeta_f.state.shape),
            "eta": take(self.eta_f.state.size).reshape(self.eta_f.state.shape),
            "ebar": [take(f.state.size).reshape(f.state.shape) for f in self.ebar_f],
        }
        theta = take(q * m).reshape((q, m))
        psi = take(m * m).reshape((m, m))
        return x, xm, bank_states, filt_states, theta, psi

    def _restore(self, flat):
        x, xm, bank_states, filt_states, theta, psi = self._unpack(flat)
        self.x, self.xm = x.copy(), xm.copy()
        for name, b in (
            ("w1", self.bank_u), ("w2", self.bank_y),
            ("wum", self.bank_um), ("wym", self.bank_ym),
        ):
            if b is not None:
                b.state = bank_states[name].copy()
        self.zeta_f.state = filt_states["zeta"].copy()
        self.eta_f.state = filt_states["eta"].copy()
        for f, st in zip(self.ebar_f, filt_states["ebar"]):
            f.state = st.copy()
        self.theta, self.psi = theta.copy(), psi.copy()

    def _deriv_from(self, x, xm, bank_states, filt_states, theta, psi, parts, e, u, frame):
        dtheta, dpsi = self._update_rhs(e, frame)
        pieces = [self.spec.plant.deriv(x, u), self.spec.refmodel.deriv(xm, parts["um"])]
        for name, b, inp in (
            ("w1", self.bank_u, u),
            ("w2", self.bank_y, parts["y"]),
            ("wum", self.bank_um, parts["um"]),
            ("wym", self.bank_ym, parts["ym"]),
        ):
            if b is not None:
                pieces.append(b.deriv(bank_states[name], inp).ravel())
        pieces.append(self.zeta_f.deriv(filt_states["zeta"], frame.omega).ravel())
        pieces.append(self.eta_f.deriv(filt_states["eta"], u).ravel())
        for i, f in enumerate(self.ebar_f):
            pieces.append(f.deriv(filt_states["ebar"][i], e[i : i + 1]).ravel())
        pieces.append(dtheta.ravel())
        pieces.append(dpsi.ravel())
        return np.concatenate(pieces)

    def _rhs(self, t, flat):
        x, xm, bank_states, filt_states, theta, psi = self._unpack(flat)
        parts, e, u, frame = self._algebra(t, x, xm, bank_states, filt_states, theta, psi)
        return self._deriv_from(x, xm, bank_states, filt_states, theta, psi, parts, e, u, frame)

    def ct_step(self, t):
        parts, e, u, frame = self.measure(t)
        k1 = self._deriv_from(
            self.x, self.xm, self._live_bank_states(), self._live_filt_states(),
            self.theta, self.psi, parts, e, u, frame,
        )
        flat = rk4_step(self._rhs, t, self._pack(), self.domain.step, k1=k1)
        theta_prev, psi_prev = self.theta, self.psi
        self._restore(flat)
        h = self.domain.step
        self.l2_eps += h * float(frame.eps @ frame.eps) / frame.m2
        dth = self.theta - theta_prev
        dps = self.psi - psi_prev
        self.l2_dtheta += float(np.sum(dth * dth) + np.sum(dps * dps)) / h
        return parts, e, u, frame


def run_closed_loop(spec, law=None, horizon=1000, vprobe=None, probes=None):
    """Run the loop for `horizon` steps; returns a SimTrace.

    vprobe, when given, is called as vprobe(theta, psi, e) with the
    parameters in effect at each grid point and its value recorded in the V
    column (test mode only).  probes maps names to callables
    f(theta, psi, frame, e) whose per-step values land in trace.extra.
    Row k of the trace holds the time-t_k values of every signal, with
    parameters as used by u(t_k).
    """
    loop = ClosedLoop(spec, law=law)
    rec = _Recorder(horizon, spec.m)
    probes = probes or {}
    probe_vals = {name: np.zeros(horizon) for name in probes}
    h = 1.0 if loop.domain.is_dt else loop.domain.step
    for k in range(horizon):
        t = k * h
        theta_now, psi_now = loop.theta, loop.psi
        tn = np.sqrt(np.sum(theta_now**2) + np.sum(psi_now**2))
        if loop.domain.is_dt:
            parts, e, u, frame = loop.dt_step(t)
        else:
            parts, e, u, frame = loop.ct_step(t)
        v = vprobe(theta_now, psi_now, e) if vprobe is not None else None
        for name, fn in probes.items():
            probe_vals[name][k] = fn(theta_now, psi_now, frame, e)
        rec.push(t, parts["y"], parts["ym"], e, u, frame.m, frame.eps, v, tn,
                 loop.l2_eps, loop.l2_dtheta)
    return rec.trace(extra=probe_vals)
