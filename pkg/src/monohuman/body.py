"""Procedural skinned humanoids, forward kinematics and linear blend skinning.

The body is a 12-bone capsule figure standing in an A-pose, facing +Z, with
its bounding box centred on the origin. Each bone owns one closed capsule;
the capsules overlap at the joints.

Two posing routes exist on purpose:

* ``pose_scan`` moves every capsule rigidly with its own bone and drops the
  faces buried inside other capsules. This is the distortion-free "scan".
* ``lbs_deform`` blends the bone transforms with smooth skinning weights,
  which reproduces the usual collapse and stretching near twisted joints.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .mesh import TriangleMesh, compute_vertex_normals

BONE_NAMES = ("pelvis", "spine", "chest", "head",
              "upper_arm_l", "forearm_l", "upper_arm_r", "forearm_r",
              "thigh_l", "shin_l", "thigh_r", "shin_r")
N_BONES = len(BONE_NAMES)
PARENTS = (-1, 0, 1, 2, 2, 4, 2, 6, 0, 8, 0, 10)
N_SHAPE = 8
SHAPE_NAMES = ("height", "arm_length", "leg_length", "torso_width",
               "limb_girth", "belly", "head_size", "shoulder_width")
MAX_INFLUENCES = 4
SKIN_TAU = 0.012
SKIN_MAGIC = b"SATSKIN1"

# max |angle| in radians per bone, about the bone's local (bend, twist, side) axes
DEFAULT_LIMITS = np.array([
    [0.25, 0.50, 0.20],  # pelvis
    [0.30, 0.30, 0.20],  # spine
    [0.25, 0.30, 0.20],  # chest
    [0.40, 0.70, 0.30],  # head
    [1.00, 1.60, 0.90],  # upper arm l
    [1.90, 1.70, 0.10],  # forearm l
    [1.00, 1.60, 0.90],  # upper arm r
    [1.90, 1.70, 0.10],  # forearm r
    [0.90, 0.50, 0.40],  # thigh l
    [1.30, 0.30, 0.05],  # shin l
    [0.90, 0.50, 0.40],  # thigh r
    [1.30, 0.30, 0.05],  # shin r
])


@dataclass
class ShapeParams:
    beta: np.ndarray = field(default_factory=lambda: np.zeros(N_SHAPE))

    def __post_init__(self):
        b = np.asarray(self.beta, dtype=np.float64).reshape(-1)
        if len(b) != N_SHAPE:
            raise ValueError(f"expected {N_SHAPE} shape coefficients, got {len(b)}")
        self.beta = np.clip(b, -2.0, 2.0)


@dataclass
class PoseParams:
    """Per-bone world-axis axis-angle rotations about each joint plus a root translation."""

    rotations: np.ndarray = field(default_factory=lambda: np.zeros((N_BONES, 3)))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(-1, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.rotations.reshape(-1), self.translation])

    @staticmethod
    def from_vector(v) -> "PoseParams":
        v = np.asarray(v, dtype=np.float64)
        return PoseParams(v[:-3].reshape(-1, 3), v[-3:])

    def is_identity(self) -> bool:
        return not (self.rotations.any() or self.translation.any())


@dataclass
class SkeletonRig:
    parents: np.ndarray  # (m,) parent index, -1 for the root
    heads: np.ndarray  # (m, 3) rest joint positions
    tails: np.ndarray  # (m, 3)
    radii: np.ndarray  # (m, 2) capsule cross-section radii (side, depth)

    def __post_init__(self):
        self.parents = np.asarray(self.parents, dtype=np.int64)
        self.heads = np.asarray(self.heads, dtype=np.float64).reshape(-1, 3)
        self.tails = np.asarray(self.tails, dtype=np.float64).reshape(-1, 3)
        self.radii = np.asarray(self.radii, dtype=np.float64).reshape(-1, 2)
        self.validate()

    @property
    def n_bones(self) -> int:
        return len(self.parents)

    def validate(self) -> None:
        roots = np.nonzero(self.parents < 0)[0]
        if len(roots) != 1 or roots[0] != 0:
            raise ValueError("rig needs exactly one root, stored first")
        for j, p in enumerate(self.parents):
            if j > 0 and not 0 <= p < j:
                raise ValueError(f"bone {j} has parent {p}; parents must precede children")

    def frames(self) -> np.ndarray:
        return np.stack([bone_frame(h, t) for h, t in zip(self.heads, self.tails)])


@dataclass
class SkinnedMesh:
    mesh: TriangleMesh  # rest pose
    weights: np.ndarray  # (N, m), rows sum to 1, at most 4 non-zero
    rig: SkeletonRig
    part: np.ndarray  # (N,) bone owning each vertex's capsule
    shape: ShapeParams

    @property
    def colors(self) -> np.ndarray:
        return self.mesh.vertex_colors


def bone_frame(head: np.ndarray, tail: np.ndarray) -> np.ndarray:
    """Columns: bend axis, bone direction (twist axis), side axis."""
    y = tail - head
    y = y / np.linalg.norm(y)
    ref = np.array([0.0, 0.0, 1.0]) if abs(y[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    x = np.cross(y, ref)
    x /= np.linalg.norm(x)
    z = np.cross(x, y)
    return np.stack([x, y, z], axis=1)


# -- rig ----------------------------------------------------------------------

def build_rig(shape: ShapeParams | None = None) -> SkeletonRig:
    """A-pose rig, feet near y=0 before recentring on the origin."""
    b = (shape or ShapeParams()).beta
    hs = 1.0 + 0.05 * b[0]
    arm = 1.0 + 0.15 * b[1]
    leg = 1.0 + 0.08 * b[2]
    torso = 1.0 + 0.08 * b[3]
    girth = 1.0 + 0.12 * b[4]
    belly = 1.0 + 0.15 * b[5]
    head = 1.0 + 0.08 * b[6]
    shoulder = 1.0 + 0.10 * b[7]

    thigh_len, shin_len = 0.42 * leg, 0.42 * leg
    hip_y = 0.08 + thigh_len + shin_len
    j = {}
    j["pelvis"] = ((0, hip_y - 0.03, 0), (0, hip_y + 0.13, 0))
    j["spine"] = ((0, hip_y + 0.13, 0), (0, hip_y + 0.30, 0))
    j["chest"] = ((0, hip_y + 0.30, 0), (0, hip_y + 0.50, 0))
    neck = hip_y + 0.55
    j["head"] = ((0, neck + 0.02 * head, 0), (0, neck + 0.14 * head, 0))
    sh_y = hip_y + 0.47
    d = np.array([np.sin(np.radians(45)), -np.cos(np.radians(45)), 0.0])
    for side, sgn in (("l", 1.0), ("r", -1.0)):
        ds = d * [sgn, 1, 1]
        s0 = np.array([sgn * 0.18 * shoulder * torso, sh_y, 0.0])
        s1 = s0 + ds * 0.28 * arm
        s2 = s1 + ds * 0.26 * arm
        j[f"upper_arm_{side}"] = (s0, s1)
        j[f"forearm_{side}"] = (s1, s2)
        h0 = np.array([sgn * 0.09 * torso, hip_y, 0.0])
        h1 = h0 + [sgn * 0.01, -thigh_len, 0.0]
        h2 = h1 + [0.0, -shin_len, 0.0]
        j[f"thigh_{side}"] = (h0, h1)
        j[f"shin_{side}"] = (h1, h2)
    radii = {
        "pelvis": (0.15 * torso, 0.10 * torso * belly), "spine": (0.13 * torso, 0.095 * belly),
        "chest": (0.16 * torso, 0.10 * torso), "head": (0.09 * head, 0.09 * head),
    }
    for side in "lr":
        radii[f"upper_arm_{side}"] = (0.048 * girth, 0.048 * girth)
        radii[f"forearm_{side}"] = (0.040 * girth, 0.040 * girth)
        radii[f"thigh_{side}"] = (0.072 * girth, 0.072 * girth)
        radii[f"shin_{side}"] = (0.055 * girth, 0.055 * girth)
    heads = np.array([j[n][0] for n in BONE_NAMES], dtype=np.float64) * hs
    tails = np.array([j[n][1] for n in BONE_NAMES], dtype=np.float64) * hs
    rad = np.array([radii[n] for n in BONE_NAMES], dtype=np.float64) * hs
    # recentre the vertical extent (shin caps to head cap) on the origin
    lo = tails[9, 1] - rad[9].min()
    hi = tails[3, 1] + rad[3].min()
    shift = np.array([0.0, 0.5 * (lo + hi), 0.0])
    return SkeletonRig(np.array(PARENTS), heads - shift, tails - shift, rad)


# -- capsule geometry ---------------------------------------------------------

def capsule_mesh(head, tail, rx: float, rz: float, n_around: int = 16, n_cap: int = 5,
                 n_body: int = 4) -> TriangleMesh:
    """Closed capsule around head->tail with an elliptical cross-section."""
    head, tail = np.asarray(head, float), np.asarray(tail, float)
    frame = bone_frame(head, tail)
    length = np.linalg.norm(tail - head)
    rc = min(rx, rz)
    # profile: list of (axial position, radius factor)
    prof = []
    for i in range(1, n_cap + 1):
        a = -0.5 * np.pi + 0.5 * np.pi * i / (n_cap + 1)
        prof.append((rc * np.sin(a), np.cos(a)))
    for i in range(n_body + 1):
        prof.append((length * i / n_body, 1.0))
    for i in range(1, n_cap + 1):
        a = 0.5 * np.pi * i / (n_cap + 1)
        prof.append((length + rc * np.sin(a), np.cos(a)))
    theta = 2 * np.pi * np.arange(n_around) / n_around
    rings = []
    for y, r in prof:
        rings.append(np.stack([rx * r * np.cos(theta), np.full(n_around, y), rz * r * np.sin(theta)], axis=1))
    local = np.concatenate([[[0.0, -rc, 0.0]], np.concatenate(rings), [[0.0, length + rc, 0.0]]])
    verts = local @ frame.T + head
    n_r = len(prof)
    tris = []
    ring0 = 1
    for k in range(n_around):
        k1 = (k + 1) % n_around
        tris.append((0, ring0 + k1, ring0 + k))
    for r in range(n_r - 1):
        a0, b0 = 1 + r * n_around, 1 + (r + 1) * n_around
        for k in range(n_around):
            k1 = (k + 1) % n_around
            tris.append((a0 + k, a0 + k1, b0 + k))
            tris.append((a0 + k1, b0 + k1, b0 + k))
    top = len(verts) - 1
    last = 1 + (n_r - 1) * n_around
    for k in range(n_around):
        k1 = (k + 1) % n_around
        tris.append((last + k, last + k1, top))
    # reversed so faces wind counter-clockwise seen from outside
    return TriangleMesh(verts, np.array(tris, dtype=np.int64)[:, ::-1].copy())


def inside_capsule(pts: np.ndarray, head, tail, rx: float, rz: float, margin: float = 0.0) -> np.ndarray:
    frame = bone_frame(np.asarray(head, float), np.asarray(tail, float))
    loc = (pts - head) @ frame
    length = np.linalg.norm(np.asarray(tail, float) - head)
    rc = min(rx, rz)
    ty = loc[:, 1] - np.clip(loc[:, 1], 0.0, length)
    q = (loc[:, 0] / rx) ** 2 + (ty / rc) ** 2 + (loc[:, 2] / rz) ** 2
    return q < (1.0 - margin) ** 2


def _palette(seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    skin = np.array([0.95, 0.78, 0.65]) * rng.uniform(0.55, 1.0)
    return {"skin": skin, "shirt": rng.uniform(0.1, 0.95, 3), "stripe": rng.uniform(0.1, 0.95, 3),
            "pants": rng.uniform(0.05, 0.7, 3), "hair": rng.uniform(0.05, 0.35) * np.ones(3),
            "stripe_freq": rng.uniform(14.0, 30.0)}


def _part_colors(bone: int, verts: np.ndarray, rig: SkeletonRig, pal) -> np.ndarray:
    name = BONE_NAMES[bone]
    n = len(verts)
    if name == "head":
        up = (verts[:, 1] - rig.heads[3, 1]) > 0.6 * (rig.tails[3, 1] - rig.heads[3, 1])
        back = verts[:, 2] < rig.heads[3, 2] - 0.02
        return np.where((up | back)[:, None], pal["hair"], pal["skin"])
    if name.startswith("forearm"):
        t = (verts - rig.heads[bone]) @ (rig.tails[bone] - rig.heads[bone])
        t /= np.sum((rig.tails[bone] - rig.heads[bone]) ** 2)
        return np.where((t > 0.45)[:, None], pal["skin"], pal["shirt"])
    if name in ("spine", "chest") or name.startswith("upper_arm"):
        stripe = np.sin(verts[:, 1] * pal["stripe_freq"] * 2 * np.pi / 3.0) > 0.3
        return np.where(stripe[:, None], pal["stripe"], pal["shirt"])
    if name.startswith("shin"):
        low = verts[:, 1] < rig.tails[bone, 1] + 0.06
        return np.where(low[:, None], 0.15, pal["pants"])
    return np.broadcast_to(pal["pants"], (n, 3)).copy()


def _segment_distance(pts: np.ndarray, heads: np.ndarray, tails: np.ndarray) -> np.ndarray:
    ab = tails - heads  # (m, 3)
    ap = pts[:, None, :] - heads[None]  # (N, m, 3)
    t = np.clip(np.einsum("nmk,mk->nm", ap, ab) / np.sum(ab * ab, axis=1), 0.0, 1.0)
    closest = heads[None] + t[..., None] * ab[None]
    return np.linalg.norm(pts[:, None, :] - closest, axis=2)


def skinning_weights(verts: np.ndarray, part: np.ndarray, rig: SkeletonRig, tau: float = SKIN_TAU,
                     k: int = MAX_INFLUENCES) -> np.ndarray:
    """Distance-falloff weights relative to the owning bone, truncated to the top k and renormalised."""
    d = _segment_distance(verts, rig.heads, rig.tails)
    own = d[np.arange(len(verts)), part]
    w = np.exp(-np.maximum(d - own[:, None], 0.0) / tau)
    # only adjacent bones in the hierarchy blend, like a skinned body model
    m = rig.n_bones
    adj = np.eye(m, dtype=bool)
    for j, p in enumerate(rig.parents):
        if p >= 0:
            adj[j, p] = adj[p, j] = True
    w = np.where(adj[part], w, 0.0)
    if k < m:
        drop = np.argsort(-w, axis=1, kind="stable")[:, k:]
        np.put_along_axis(w, drop, 0.0, axis=1)
    return w / w.sum(axis=1, keepdims=True)


def make_humanoid(shape: ShapeParams | None = None, palette_seed: int = 0) -> SkinnedMesh:
    shape = shape or ShapeParams()
    rig = build_rig(shape)
    pal = _palette(palette_seed)
    parts, verts, tris, cols = [], [], [], []
    off = 0
    for j in range(rig.n_bones):
        rx, rz = rig.radii[j]
        cap = capsule_mesh(rig.heads[j], rig.tails[j], rx, rz)
        verts.append(cap.vertices)
        tris.append(cap.triangles + off)
        cols.append(_part_colors(j, cap.vertices, rig, pal))
        parts.append(np.full(cap.n_vertices, j))
        off += cap.n_vertices
    v = np.concatenate(verts)
    part = np.concatenate(parts)
    mesh = TriangleMesh(v, np.concatenate(tris), np.clip(np.concatenate(cols), 0, 1))
    return SkinnedMesh(mesh, skinning_weights(v, part, rig), rig, part, shape)


# -- kinematics ---------------------------------------------------------------

def forward_kinematics(rig: SkeletonRig, pose: PoseParams) -> tuple[np.ndarray, np.ndarray]:
    """Global per-bone (R, t) mapping rest positions to posed positions."""
    if len(pose.rotations) != rig.n_bones:
        raise ValueError(f"pose has {len(pose.rotations)} bones, rig has {rig.n_bones}")
    rig.validate()
    local = Rotation.from_rotvec(pose.rotations).as_matrix()
    rots = np.zeros((rig.n_bones, 3, 3))
    trans = np.zeros((rig.n_bones, 3))
    for j in range(rig.n_bones):
        # x -> R_j (x - h_j) + h_j, then the parent's transform
        r_l, t_l = local[j], rig.heads[j] - local[j] @ rig.heads[j]
        p = rig.parents[j]
        if p < 0:
            rots[j], trans[j] = r_l, t_l + pose.translation
        else:
            rots[j] = rots[p] @ r_l
            trans[j] = rots[p] @ t_l + trans[p]
    return rots, trans


def lbs_apply(vertices: np.ndarray, weights: np.ndarray, rots: np.ndarray, trans: np.ndarray) -> np.ndarray:
    """x' = (sum_j w_j R_j) x + sum_j w_j t_j for every vertex."""
    blend_r = np.einsum("nj,jab->nab", weights, rots)
    return np.einsum("nab,nb->na", blend_r, vertices) + weights @ trans


def lbs_deform(skinned: SkinnedMesh, pose: PoseParams) -> TriangleMesh:
    rots, trans = forward_kinematics(skinned.rig, pose)
    v = lbs_apply(skinned.mesh.vertices, skinned.weights, rots, trans)
    tris = skinned.mesh.triangles.copy()
    return TriangleMesh(v, tris, skinned.colors.copy(), compute_vertex_normals(v, tris))


def lbs_repose(skinned: SkinnedMesh, pose_src: PoseParams, pose_tgt: PoseParams) -> TriangleMesh:
    """LBS from one posed configuration to another, applied to the rigidly posed body.

    Each bone moves by its relative transform (target after inverse source);
    vertices blend those transforms with the skinning weights.
    """
    r_s, t_s = forward_kinematics(skinned.rig, pose_src)
    r_t, t_t = forward_kinematics(skinned.rig, pose_tgt)
    r_rel = r_t @ np.swapaxes(r_s, 1, 2)
    t_rel = t_t - np.einsum("jab,jb->ja", r_rel, t_s)
    src = lbs_apply(skinned.mesh.vertices, rigid_weights(skinned.part, skinned.rig.n_bones), r_s, t_s)
    v = lbs_apply(src, skinned.weights, r_rel, t_rel)
    tris = skinned.mesh.triangles.copy()
    return TriangleMesh(v, tris, skinned.colors.copy(), compute_vertex_normals(v, tris))


def rigid_weights(part: np.ndarray, n_bones: int) -> np.ndarray:
    w = np.zeros((len(part), n_bones))
    w[np.arange(len(part)), part] = 1.0
    return w


def posed_bones(rig: SkeletonRig, pose: PoseParams) -> tuple[np.ndarray, np.ndarray]:
    rots, trans = forward_kinematics(rig, pose)
    heads = np.einsum("jab,jb->ja", rots, rig.heads) + trans
    tails = np.einsum("jab,jb->ja", rots, rig.tails) + trans
    return heads, tails


def cull_interior(mesh: TriangleMesh, part: np.ndarray, rig: SkeletonRig, pose: PoseParams,
                  margin: float = 0.02) -> TriangleMesh:
    """Drop faces whose centroid lies inside another bone's posed capsule."""
    heads, tails = posed_bones(rig, pose)
    cen = mesh.vertices[mesh.triangles].mean(axis=1)
    owner = part[mesh.triangles[:, 0]]
    buried = np.zeros(len(cen), bool)
    for j in range(rig.n_bones):
        sel = owner != j
        buried[sel] |= inside_capsule(cen[sel], heads[j], tails[j], *rig.radii[j], margin=margin)
    keep = ~buried
    used = np.unique(mesh.triangles[keep])
    remap = np.full(mesh.n_vertices, -1)
    remap[used] = np.arange(len(used))
    return TriangleMesh(mesh.vertices[used], remap[mesh.triangles[keep]], mesh.vertex_colors[used],
                        mesh.vertex_normals[used])


def pose_scan(skinned: SkinnedMesh, pose: PoseParams) -> TriangleMesh:
    """Distortion-free posed body: rigid capsules, buried faces removed."""
    rots, trans = forward_kinematics(skinned.rig, pose)
    w = rigid_weights(skinned.part, skinned.rig.n_bones)
    v = lbs_apply(skinned.mesh.vertices, w, rots, trans)
    tris = skinned.mesh.triangles
    posed = TriangleMesh(v, tris.copy(), skinned.colors.copy(), compute_vertex_normals(v, tris))
    return cull_interior(posed, skinned.part, skinned.rig, pose)


def skeleton_template_mesh(rig: SkeletonRig, pose: PoseParams | None = None, shrink: float = 0.9) -> TriangleMesh:
    """Coarse, undressed low-poly capsules over the posed skeleton (the body-model stand-in)."""
    pose = pose or PoseParams()
    heads, tails = posed_bones(rig, pose)
    parts, vs, ts = [], [], []
    off = 0
    for j in range(rig.n_bones):
        rx, rz = rig.radii[j] * shrink
        cap = capsule_mesh(heads[j], tails[j], rx, rz, n_around=8, n_cap=2, n_body=1)
        vs.append(cap.vertices)
        ts.append(cap.triangles + off)
        parts.append(np.full(cap.n_vertices, j))
        off += cap.n_vertices
    return TriangleMesh(np.concatenate(vs), np.concatenate(ts), np.full((off, 3), 0.7))


def sample_pose(seed: int, limits: np.ndarray | None = None, scale: float = 1.0,
                root_jitter: float = 0.0) -> PoseParams:
    """Rotations uniform within the joint-limit table, expressed about world axes."""
    lim = DEFAULT_LIMITS if limits is None else np.asarray(limits, dtype=np.float64)
    rng = np.random.default_rng(seed)
    local = rng.uniform(-1.0, 1.0, lim.shape) * lim * scale
    frames = build_rig().frames()
    rot = np.einsum("jab,jb->ja", frames, local)
    trans = rng.uniform(-root_jitter, root_jitter, 3) if root_jitter > 0 else np.zeros(3)
    return PoseParams(rot, trans)


def pose_local_angles(pose: PoseParams) -> np.ndarray:
    """Inverse of the frame mapping used by ``sample_pose``."""
    frames = build_rig().frames()
    return np.einsum("jba,jb->ja", frames, pose.rotations)


def max_edge_stretch(rest: TriangleMesh, deformed: TriangleMesh) -> float:
    e = rest.edges()
    l0 = np.linalg.norm(rest.vertices[e[:, 0]] - rest.vertices[e[:, 1]], axis=1)
    l1 = np.linalg.norm(deformed.vertices[e[:, 0]] - deformed.vertices[e[:, 1]], axis=1)
    return float(np.max(l1 / np.maximum(l0, 1e-12)))


# -- dataset ------------------------------------------------------------------

@dataclass
class ScanSample:
    sample_id: str
    identity: int
    skinned: SkinnedMesh
    pose: PoseParams
    scan: TriangleMesh

    @property
    def shape(self) -> ShapeParams:
        return self.skinned.shape


@dataclass
class TemplatePool:
    entries: list  # (PoseParams, ShapeParams)

    def __len__(self) -> int:
        return len(self.entries)

    def draw(self, rng: np.random.Generator):
        if not self.entries:
            raise ValueError("template pool is empty")
        return self.entries[int(rng.integers(len(self.entries)))]


SPLIT_CODES = {"train": 0, "test": 1, "anim": 2}


def identity_seed(seed: int, split: str, index: int) -> int:
    return int(np.random.SeedSequence([seed, SPLIT_CODES[split], index]).generate_state(1)[0])


def make_identity(seed: int, split: str, index: int, shape_range: float = 1.0) -> SkinnedMesh:
    s = identity_seed(seed, split, index)
    rng = np.random.default_rng(s)
    beta = rng.uniform(-shape_range, shape_range, N_SHAPE)
    return make_humanoid(ShapeParams(beta), palette_seed=s)


def build_dataset(n_identities: int, poses_per_identity: int, seed: int, split: str = "train",
                  pose_scale: float = 0.5) -> tuple[list[ScanSample], TemplatePool]:
    if n_identities <= 0 or poses_per_identity <= 0:
        raise ValueError("counts must be positive")
    samples, pool = [], []
    for i in range(n_identities):
        body = make_identity(seed, split, i)
        for p in range(poses_per_identity):
            ps = identity_seed(seed, split, i) + 7919 * (p + 1)
            pose = sample_pose(ps % (2 ** 32), scale=pose_scale) if p > 0 else PoseParams()
            samples.append(ScanSample(f"{split}-{i:03d}-{p:02d}", i, body, pose, pose_scan(body, pose)))
            pool.append((pose, body.shape))
    return samples, TemplatePool(pool)


def make_triplet(identity: SkinnedMesh, pose_src: PoseParams, pose_tgt: PoseParams):
    """(source scan, target-pose template, target scan)."""
    return (pose_scan(identity, pose_src), skeleton_template_mesh(identity.rig, pose_tgt),
            pose_scan(identity, pose_tgt))


# -- file formats -------------------------------------------------------------

def save_skin(skinned: SkinnedMesh, path) -> None:
    w = np.ascontiguousarray(skinned.weights, dtype="<f4")
    rig = skinned.rig
    out = [SKIN_MAGIC, struct.pack("<II", *w.shape), w.tobytes(), struct.pack("<I", rig.n_bones),
           rig.parents.astype("<i4").tobytes(), rig.heads.astype("<f4").tobytes(),
           rig.tails.astype("<f4").tobytes(), rig.radii.astype("<f4").tobytes(),
           skinned.part.astype("<i4").tobytes(), skinned.shape.beta.astype("<f4").tobytes()]
    Path(path).write_bytes(b"".join(out))


def load_skin(path) -> dict:
    raw = Path(path).read_bytes()
    if raw[:8] != SKIN_MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:8]!r}")
    n, m = struct.unpack("<II", raw[8:16])
    pos = 16
    w = np.frombuffer(raw, "<f4", n * m, pos).reshape(n, m)
    pos += 4 * n * m
    (nb,) = struct.unpack("<I", raw[pos:pos + 4])
    pos += 4
    parents = np.frombuffer(raw, "<i4", nb, pos)
    pos += 4 * nb
    heads = np.frombuffer(raw, "<f4", nb * 3, pos).reshape(nb, 3)
    pos += 12 * nb
    tails = np.frombuffer(raw, "<f4", nb * 3, pos).reshape(nb, 3)
    pos += 12 * nb
    radii = np.frombuffer(raw, "<f4", nb * 2, pos).reshape(nb, 2)
    pos += 8 * nb
    part = np.frombuffer(raw, "<i4", n, pos)
    pos += 4 * n
    beta = np.frombuffer(raw, "<f4", N_SHAPE, pos)
    return {"weights": w, "parents": parents, "heads": heads, "tails": tails, "radii": radii,
            "part": part, "beta": beta}


def write_manifest(samples: list[ScanSample], path, mesh_dir: str = "meshes") -> None:
    lines = ["# sample_id mesh_path pose[39] shape[8]"]
    for s in samples:
        vals = " ".join("%.9g" % x for x in np.concatenate([s.pose.vector(), s.shape.beta]))
        lines.append(f"{s.sample_id} {mesh_dir}/{s.sample_id}.obj {vals}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> list[tuple[str, str, PoseParams, ShapeParams]]:
    out = []
    for line in Path(path).read_text().splitlines():
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        vals = np.array([float(x) for x in parts[2:]])
        out.append((parts[0], parts[1], PoseParams.from_vector(vals[:N_BONES * 3 + 3]),
                    ShapeParams(vals[N_BONES * 3 + 3:])))
    return out
