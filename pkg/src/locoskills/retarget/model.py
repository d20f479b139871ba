"""Kinematic trees with an optional floating base, forward kinematics and analytic Jacobians.

Configuration layout for a floating-base model: base translation (3), base
orientation as an exponential-map vector (3), then one angle per revolute
joint in link order. Fixed-base models carry joint angles only.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation


def skew(v):
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def exp_so3(phi) -> np.ndarray:
    return Rotation.from_rotvec(np.asarray(phi, dtype=np.float64)).as_matrix()


def log_so3(R) -> np.ndarray:
    return Rotation.from_matrix(R).as_rotvec()


def right_jacobian_so3(phi) -> np.ndarray:
    """J_r with Exp(phi + d) ~= Exp(phi) Exp(J_r(phi) d)."""
    phi = np.asarray(phi, dtype=np.float64)
    theta = float(np.linalg.norm(phi))
    K = skew(phi)
    if theta < 1e-6:
        # series to second order keeps the small-angle branch accurate to ~1e-18
        return np.eye(3) - 0.5 * K + (1.0 / 6.0) * (K @ K)
    t2 = theta * theta
    return np.eye(3) - (1.0 - np.cos(theta)) / t2 * K + (theta - np.sin(theta)) / (t2 * theta) * (K @ K)


@dataclass
class Link:
    name: str
    parent: int  # -1 for the root
    offset_translation: np.ndarray
    offset_rotation: np.ndarray  # axis-angle
    joint_axis: np.ndarray | None = None  # revolute axis in the link frame, or fixed
    limits: tuple | None = None

    def __post_init__(self):
        self.offset_translation = np.asarray(self.offset_translation, dtype=np.float64).reshape(3)
        self.offset_rotation = np.asarray(self.offset_rotation, dtype=np.float64).reshape(3)
        if self.joint_axis is not None:
            a = np.asarray(self.joint_axis, dtype=np.float64).reshape(3)
            n = np.linalg.norm(a)
            if n == 0.0:
                raise ValueError(f"link {self.name!r}: zero joint axis")
            self.joint_axis = a / n
        self._offset_R = exp_so3(self.offset_rotation)


@dataclass
class TargetFrame:
    name: str
    link: int
    offset: np.ndarray

    def __post_init__(self):
        self.offset = np.asarray(self.offset, dtype=np.float64).reshape(3)


@dataclass
class KinematicModel:
    links: list
    frames: list
    floating_base: bool = True
    name: str = "robot"
    _joint_index: list = field(init=False, repr=False)

    def __post_init__(self):
        if not self.links:
            raise ValueError("model has no links")
        names = [l.name for l in self.links]
        if len(set(names)) != len(names):
            raise ValueError("link names must be unique")
        for i, l in enumerate(self.links):
            if i == 0:
                if l.parent != -1:
                    raise ValueError("first link must be the root (parent -1)")
            elif not 0 <= l.parent < i:
                # parents before children makes the tree acyclic by construction
                raise ValueError(f"link {l.name!r}: parent must be an earlier link")
        if self.floating_base and self.links[0].joint_axis is not None:
            raise ValueError("the floating base link cannot also carry a joint")
        fnames = [f.name for f in self.frames]
        if len(set(fnames)) != len(fnames):
            raise ValueError("target frame names must be unique")
        for f in self.frames:
            if not 0 <= f.link < len(self.links):
                raise ValueError(f"frame {f.name!r} refers to a missing link")
        self._joint_index = []
        j = 0
        for l in self.links:
            self._joint_index.append(j if l.joint_axis is not None else -1)
            j += l.joint_axis is not None
        self.n_joints = j
        # ancestors (including self) per link, for Jacobian sparsity
        self._ancestors = []
        for i, l in enumerate(self.links):
            chain = [i] if i == 0 else self._ancestors[l.parent] + [i]
            self._ancestors.append(chain)

    @property
    def base_dof(self) -> int:
        return 6 if self.floating_base else 0

    @property
    def dof(self) -> int:
        return self.base_dof + self.n_joints

    @property
    def frame_names(self) -> list:
        return [f.name for f in self.frames]

    def frame_index(self, name) -> int:
        for i, f in enumerate(self.frames):
            if f.name == name:
                return i
        raise KeyError(f"unknown target frame {name!r}")

    def joint_names(self) -> list:
        return [l.name for l in self.links if l.joint_axis is not None]

    def coordinate_names(self) -> list:
        base = ["base_x", "base_y", "base_z", "base_rx", "base_ry", "base_rz"] if self.floating_base else []
        return base + self.joint_names()

    def joints_of(self, q) -> np.ndarray:
        return np.asarray(q)[self.base_dof:]

    def neutral(self) -> np.ndarray:
        return np.zeros(self.dof)

    def clamp_to_limits(self, q):
        """Clamp joint angles to per-link limits; returns (q, names of clamped joints)."""
        q = np.array(q, dtype=np.float64)
        hit = []
        for i, l in enumerate(self.links):
            j = self._joint_index[i]
            if j < 0 or l.limits is None:
                continue
            k = self.base_dof + j
            v = np.clip(q[k], l.limits[0], l.limits[1])
            if v != q[k]:
                hit.append(l.name)
                q[k] = v
        return q, hit

    # kinematics ---------------------------------------------------------------

    def _check(self, q):
        q = np.asarray(q, dtype=np.float64)
        if q.shape != (self.dof,):
            raise ValueError(f"configuration has shape {q.shape}, model {self.name!r} expects ({self.dof},)")
        return q

    def link_transforms(self, q, base_R0=None):
        """World rotation and translation of every link.

        ``base_R0`` pre-multiplies the base orientation: the base rotation is
        ``base_R0 @ Exp(q[3:6])``. Also returns the world position and axis of
        each joint.
        """
        q = self._check(q)
        n = len(self.links)
        R = [None] * n
        p = [None] * n
        axes = [None] * n
        origins = [None] * n
        for i, l in enumerate(self.links):
            if i == 0:
                if self.floating_base:
                    Rb = exp_so3(q[3:6])
                    if base_R0 is not None:
                        Rb = base_R0 @ Rb
                    Rp, pp = Rb, q[0:3].copy()
                else:
                    Rp, pp = np.eye(3), np.zeros(3)
            else:
                Rp, pp = R[l.parent], p[l.parent]
            Ro = Rp @ l._offset_R
            po = pp + Rp @ l.offset_translation
            j = self._joint_index[i]
            if j >= 0:
                axes[i] = Ro @ l.joint_axis
                origins[i] = po
                Ro = Ro @ exp_so3(l.joint_axis * q[self.base_dof + j])
            R[i], p[i] = Ro, po
        return R, p, axes, origins

    def forward_kinematics(self, q, base_R0=None) -> np.ndarray:
        """World positions of all target frames, shape (n_frames, 3)."""
        R, p, _, _ = self.link_transforms(q, base_R0)
        return np.array([p[f.link] + R[f.link] @ f.offset for f in self.frames]).reshape(-1, 3)

    def jacobians(self, q, base_R0=None):
        """Positions (K, 3) and stacked analytic Jacobians (K, 3, dof) for all frames."""
        q = self._check(q)
        R, p, axes, origins = self.link_transforms(q, base_R0)
        K = len(self.frames)
        pos = np.zeros((K, 3))
        J = np.zeros((K, 3, self.dof))
        if self.floating_base:
            Rb = R[0]
            Jr = right_jacobian_so3(q[3:6])
        for k, f in enumerate(self.frames):
            x = p[f.link] + R[f.link] @ f.offset
            pos[k] = x
            if self.floating_base:
                J[k, :, 0:3] = np.eye(3)
                x_local = Rb.T @ (x - q[0:3])
                J[k, :, 3:6] = -Rb @ skew(x_local) @ Jr
            for i in self._ancestors[f.link]:
                j = self._joint_index[i]
                if j >= 0:
                    J[k, :, self.base_dof + j] = np.cross(axes[i], x - origins[i])
        return pos, J

    def fk_jacobian(self, q, frame) -> np.ndarray:
        """Analytic (3, dof) Jacobian of one named frame's world position."""
        _, J = self.jacobians(q)
        return J[self.frame_index(frame)]


# file format -------------------------------------------------------------------

def model_to_records(model: KinematicModel) -> list:
    recs = [{"type": "model", "name": model.name, "floating_base": model.floating_base}]
    for l in model.links:
        recs.append({
            "type": "link",
            "name": l.name,
            "parent": None if l.parent < 0 else model.links[l.parent].name,
            "offset_translation": l.offset_translation.tolist(),
            "offset_rotation": l.offset_rotation.tolist(),
            "joint_axis": None if l.joint_axis is None else l.joint_axis.tolist(),
            "limits": None if l.limits is None else list(l.limits),
        })
    for f in model.frames:
        recs.append({"type": "frame", "name": f.name, "link": model.links[f.link].name, "offset": f.offset.tolist()})
    return recs


def write_model(model: KinematicModel, path):
    with open(path, "w") as fh:
        for r in model_to_records(model):
            fh.write(json.dumps(r) + "\n")


def read_model(path) -> KinematicModel:
    """Parse a line-delimited model file; errors name the offending line."""
    path = Path(path)
    name, floating = path.stem, True
    links, frames, index = [], [], {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{where}: invalid JSON ({exc.msg})") from None
            kind = rec.get("type")
            try:
                if kind == "model":
                    name = rec.get("name", name)
                    floating = bool(rec.get("floating_base", True))
                elif kind == "link":
                    parent = rec.get("parent")
                    if parent is None:
                        pidx = -1
                    elif parent in index:
                        pidx = index[parent]
                    else:
                        raise ValueError(f"parent {parent!r} not defined before use")
                    limits = rec.get("limits")
                    links.append(Link(
                        rec["name"], pidx, rec.get("offset_translation", [0, 0, 0]),
                        rec.get("offset_rotation", [0, 0, 0]), rec.get("joint_axis"),
                        None if limits is None else (float(limits[0]), float(limits[1])),
                    ))
                    index[rec["name"]] = len(links) - 1
                elif kind == "frame":
                    if rec["link"] not in index:
                        raise ValueError(f"frame refers to unknown link {rec['link']!r}")
                    frames.append(TargetFrame(rec["name"], index[rec["link"]], rec.get("offset", [0, 0, 0])))
                else:
                    raise ValueError(f"unknown record type {kind!r}")
            except (KeyError, TypeError) as exc:
                raise ValueError(f"{where}: malformed {kind} record ({exc})") from None
            except ValueError as exc:
                raise ValueError(f"{where}: {exc}") from None
    return KinematicModel(links, frames, floating, name)


# reference model -----------------------------------------------------------------

def quadruped_model(body_length=0.4, body_width=0.2, thigh=0.16, shank=0.16, hip_offset=0.06) -> KinematicModel:
    """Floating-base quadruped: 3 revolute joints per leg (18 dof), shoulder and foot frames."""
    links = [Link("base", -1, [0, 0, 0], [0, 0, 0])]
    frames = []
    for leg, sx, sy in (("FL", 1, 1), ("FR", 1, -1), ("HL", -1, 1), ("HR", -1, -1)):
        hip = len(links)
        links.append(Link(f"{leg}_hip", 0, [sx * body_length / 2, sy * body_width / 2, 0], [0, 0, 0], [1, 0, 0],
                          (-1.2, 1.2)))
        links.append(Link(f"{leg}_thigh", hip, [0, sy * hip_offset, 0], [0, 0, 0], [0, 1, 0], (-2.5, 2.5)))
        links.append(Link(f"{leg}_shank", hip + 1, [0, 0, -thigh], [0, 0, 0], [0, 1, 0], (-2.8, 2.8)))
        frames.append(TargetFrame(f"{leg}_shoulder", 0, [sx * body_length / 2, sy * body_width / 2, 0]))
        frames.append(TargetFrame(f"{leg}_foot", hip + 2, [0, 0, -shank]))
    return KinematicModel(links, frames, True, "quadruped")


def random_tree(rng, n_links=6, floating_base=True, n_frames=3) -> KinematicModel:
    """Random revolute tree for property tests."""
    links = [Link("base", -1, [0, 0, 0], [0, 0, 0])]
    for i in range(1, n_links):
        axis = rng.normal(size=3)
        links.append(Link(f"l{i}", int(rng.integers(0, i)), rng.uniform(-0.5, 0.5, 3), rng.uniform(-1, 1, 3), axis))
    frames = [
        TargetFrame(f"f{k}", int(rng.integers(0, n_links)), rng.uniform(-0.3, 0.3, 3)) for k in range(n_frames)
    ]
    return KinematicModel(links, frames, floating_base, "random")
