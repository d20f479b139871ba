"""Per-frame Levenberg-Marquardt retargeting with warm starting, plus mocap file handling."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import KinematicModel, exp_so3, log_so3

log = logging.getLogger(__name__)

ACCEPT_RATIO = 0.25


@dataclass
class RetargetProblem:
    model: KinematicModel
    mapping: dict  # target frame name -> keypoint name
    alpha: float = 0.005
    q_neutral: np.ndarray | None = None

    def __post_init__(self):
        if not self.mapping:
            raise ValueError("mapping must name at least one frame")
        names = set(self.model.frame_names)
        for frame in self.mapping:
            if frame not in names:
                raise ValueError(f"mapping refers to unknown frame {frame!r}")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        self.q_neutral = (
            self.model.neutral() if self.q_neutral is None else np.asarray(self.q_neutral, dtype=np.float64)
        )
        if self.q_neutral.shape != (self.model.dof,):
            raise ValueError(f"q_neutral has shape {self.q_neutral.shape}, expected ({self.model.dof},)")
        self._rows = np.array([self.model.frame_index(f) for f in self.mapping])

    @property
    def frames(self) -> list:
        return list(self.mapping)

    def keypoint_order(self, keypoint_names) -> np.ndarray:
        """Index of each mapped keypoint inside ``keypoint_names``; raises naming a missing one."""
        pos = {n: i for i, n in enumerate(keypoint_names)}
        out = []
        for frame, kp in self.mapping.items():
            if kp not in pos:
                raise KeyError(f"keypoint {kp!r} (for frame {frame!r}) is missing from the mocap data")
            out.append(pos[kp])
        return np.array(out)

    def objective(self, q, targets) -> float:
        """Sum of squared keypoint errors plus alpha times squared joint deviation from neutral."""
        p = self.model.forward_kinematics(q)[self._rows]
        d = self.model.joints_of(q) - self.model.joints_of(self.q_neutral)
        return float(np.sum((p - targets) ** 2) + self.alpha * np.sum(d * d))


@dataclass
class SolveReport:
    cost: float
    keypoint_rms: float
    iterations: int
    accepted: int
    converged: bool
    cost_history: list = field(default_factory=list)  # cost after each accepted step, starting value first
    clamped: list = field(default_factory=list)


def _residuals(problem, q, targets, R0):
    model = problem.model
    pos, J = model.jacobians(q, R0)
    pos, J = pos[problem._rows], J[problem._rows]
    r_kp = (pos - targets).reshape(-1)
    J_kp = J.reshape(-1, model.dof)
    nb = model.base_dof
    s = np.sqrt(problem.alpha)
    r_reg = s * (q[nb:] - problem.q_neutral[nb:])
    J_reg = np.zeros((model.n_joints, model.dof))
    J_reg[:, nb:] = s * np.eye(model.n_joints)
    return np.concatenate([r_kp, r_reg]), np.vstack([J_kp, J_reg])


def solve_frame(problem: RetargetProblem, targets, q_init, max_iter=100, step_tol=1e-10, lam0=1e-3):
    """Minimise the retargeting objective for one frame from ``q_init``.

    The base orientation is re-parameterised locally: the solver works with
    a rotation increment around the initial orientation and converts back at
    the end. Returns ``(q, SolveReport)``; a run that hits ``max_iter`` returns
    its best iterate with ``converged`` false.
    """
    model = problem.model
    targets = np.asarray(targets, dtype=np.float64).reshape(len(problem._rows), 3)
    q = np.array(q_init, dtype=np.float64)
    if q.shape != (model.dof,) or not np.all(np.isfinite(q)):
        raise ValueError("q_init must be a finite configuration of the model's dimension")
    R0 = None
    if model.floating_base:
        R0 = exp_so3(q[3:6])
        q[3:6] = 0.0
    r, J = _residuals(problem, q, targets, R0)
    if not np.all(np.isfinite(r)):
        raise FloatingPointError("non-finite residual at the initial configuration")
    cost = float(r @ r)
    history = [cost]
    lam = lam0
    it = accepted = 0
    converged = False
    while it < max_iter:
        it += 1
        g = J.T @ r
        H = J.T @ J
        step = -np.linalg.solve(H + lam * np.eye(model.dof), g)
        if np.linalg.norm(step) < step_tol:
            converged = True
            break
        q_new = q + step
        r_new, J_new = _residuals(problem, q_new, targets, R0)
        if not np.all(np.isfinite(r_new)):
            raise FloatingPointError(f"non-finite residual after iteration {it}")
        cost_new = float(r_new @ r_new)
        # accept only steps that realise a fair share of the decrease the linear model predicts;
        # plain "any decrease" crawls on large-residual frames where Gauss-Newton overshoots
        predicted = -(2.0 * g @ step + step @ H @ step)
        if cost_new < cost and cost - cost_new >= ACCEPT_RATIO * predicted:
            q, r, J, cost = q_new, r_new, J_new, cost_new
            lam *= 0.1
            accepted += 1
            history.append(cost)
        else:
            lam *= 10.0
            if lam > 1e16:
                # no descent direction left at machine precision
                converged = True
                break
    if model.floating_base:
        q[3:6] = log_so3(R0 @ exp_so3(q[3:6]))
    q, clamped = model.clamp_to_limits(q)
    if clamped:
        log.warning("clamped joints to limits: %s", ", ".join(clamped))
    p = model.forward_kinematics(q)[problem._rows]
    rms = float(np.sqrt(np.mean(np.sum((p - targets) ** 2, axis=1))))
    report = SolveReport(problem.objective(q, targets), rms, it, accepted, converged, history, clamped)
    if not converged:
        log.warning("solver stopped after %d iterations without meeting the step tolerance", it)
    return q, report


def retarget_sequence(problem: RetargetProblem, targets_seq, q_start=None):
    """Solve every frame, warm-starting each from the previous solution.

    ``targets_seq`` has shape (T, K, 3) ordered like ``problem.mapping``.
    Frame 0 starts from ``q_start`` (default: the neutral configuration).
    Returns ``(configurations (T, dof), reports)``.
    """
    targets_seq = np.asarray(targets_seq, dtype=np.float64)
    if targets_seq.ndim != 3 or len(targets_seq) == 0:
        raise ValueError("sequence must be a non-empty (T, K, 3) array")
    q = problem.q_neutral.copy() if q_start is None else np.asarray(q_start, dtype=np.float64)
    out, reports = [], []
    for t, targets in enumerate(targets_seq):
        try:
            q, rep = solve_frame(problem, targets, q)
        except FloatingPointError as exc:
            raise FloatingPointError(f"frame {t}: {exc}") from None
        log.debug("frame %d: rms %.3e, %d iterations", t, rep.keypoint_rms, rep.iterations)
        out.append(q)
        reports.append(rep)
    return np.array(out), reports


def summarize(reports) -> dict:
    rms = np.array([r.keypoint_rms for r in reports])
    return {
        "frames": len(reports),
        "rms_keypoint_residual": float(np.sqrt(np.mean(rms ** 2))),
        "max_frame_rms": float(rms.max()),
        "not_converged": [i for i, r in enumerate(reports) if not r.converged],
    }


# mocap files -----------------------------------------------------------------------

@dataclass
class MocapSequence:
    fps: float
    keypoints: list
    points: np.ndarray  # (T, K, 3)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if self.points.ndim != 3 or self.points.shape[1:] != (len(self.keypoints), 3):
            raise ValueError(f"points shape {self.points.shape} does not match {len(self.keypoints)} keypoints")

    def select(self, order) -> np.ndarray:
        return self.points[:, order]


def resample(seq: MocapSequence, fps=50.0) -> MocapSequence:
    """Linear interpolation of every keypoint coordinate onto a uniform ``fps`` grid."""
    T = seq.points.shape[0]
    t_src = np.arange(T) / seq.fps
    n_out = int(np.floor(t_src[-1] * fps + 1e-9)) + 1
    t_dst = np.arange(n_out) / fps
    flat = seq.points.reshape(T, -1)
    out = np.stack([np.interp(t_dst, t_src, flat[:, c]) for c in range(flat.shape[1])], axis=1)
    return MocapSequence(fps, list(seq.keypoints), out.reshape(n_out, *seq.points.shape[1:]))


def write_mocap(seq: MocapSequence, path):
    with open(path, "w") as fh:
        fh.write(json.dumps({"fps": seq.fps, "keypoints": list(seq.keypoints)}) + "\n")
        for t, pts in enumerate(seq.points):
            fh.write(json.dumps({"t": t, "points": pts.tolist()}) + "\n")


def read_mocap(path) -> MocapSequence:
    path = Path(path)
    with open(path) as fh:
        lines = [(i, l) for i, l in enumerate(fh, 1) if l.strip()]
    if not lines:
        raise ValueError(f"{path}: empty mocap file")
    try:
        header = json.loads(lines[0][1])
        fps, names = float(header["fps"]), list(header["keypoints"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError):
        raise ValueError(f"{path}:{lines[0][0]}: header must be {{\"fps\": number, \"keypoints\": [names]}}") from None
    frames = []
    for expected, (lineno, line) in enumerate(lines[1:]):
        try:
            rec = json.loads(line)
            t, pts = int(rec["t"]), np.asarray(rec["points"], dtype=np.float64)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError):
            raise ValueError(f"{path}:{lineno}: malformed frame record") from None
        if t != expected:
            raise ValueError(f"{path}:{lineno}: frame index {t}, expected {expected}")
        if pts.shape != (len(names), 3):
            raise ValueError(f"{path}:{lineno}: expected {len(names)} points of 3 coordinates")
        frames.append(pts)
    if not frames:
        raise ValueError(f"{path}: no frames")
    return MocapSequence(fps, names, np.array(frames))
