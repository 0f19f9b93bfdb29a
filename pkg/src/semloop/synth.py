"""Synthetic labelled LiDAR scenes for desk-scale experiments.

Worlds are sets of boxes, vertical cylinders and a ground plane, each tagged
with a class id from the 12-class vocabulary. Scans are produced by casting
the rays of a spinning multi-beam sensor against the world, so every point
carries an exact class and instance id.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import classes as C
from .geometry import PoseSE3, yaw_matrix
from .ingest import LabeledPointCloud, ScanPair

SENSOR_HEIGHT = 1.73


@dataclass(frozen=True)
class LidarModel:
    n_rings: int = 16
    fov_down: float = -15.0
    fov_up: float = 10.0
    azimuth_step: float = 1.0
    max_range: float = 60.0

    @property
    def elevations(self) -> np.ndarray:
        return np.radians(np.linspace(self.fov_down, self.fov_up, self.n_rings))

    def directions(self) -> np.ndarray:
        """Unit ray directions, ring-major and azimuth-ordered."""
        az = np.radians(np.arange(0.0, 360.0, self.azimuth_step))
        el = self.elevations
        ee, aa = np.meshgrid(el, az, indexing="ij")
        d = np.stack([np.cos(ee) * np.cos(aa), np.cos(ee) * np.sin(aa), np.sin(ee)], axis=-1)
        return d.reshape(-1, 3)


# desk-scale place-recognition sensor and a denser one for registration
COARSE_LIDAR = LidarModel()
DENSE_LIDAR = LidarModel(n_rings=32, fov_down=-20.0, fov_up=12.0, azimuth_step=0.25, max_range=60.0)


@dataclass(frozen=True)
class Box:
    center: tuple
    size: tuple
    yaw: float
    semantic: int
    instance: int


@dataclass(frozen=True)
class Cylinder:
    center: tuple  # (x, y)
    z0: float
    z1: float
    radius: float
    semantic: int
    instance: int


@dataclass
class World:
    primitives: list = field(default_factory=list)
    ground_z: float = 0.0
    ground_class: int = C.OTHER_GROUND

    def without(self, instances) -> "World":
        drop = set(instances)
        return World([p for p in self.primitives if p.instance not in drop], self.ground_z, self.ground_class)


@dataclass(frozen=True)
class NoiseParams:
    """Viewpoint and measurement noise for revisits."""

    yaw_deg: float = 10.0
    translation: float = 1.5
    jitter: float = 0.02
    dropout: float = 0.1

    @classmethod
    def zero(cls) -> "NoiseParams":
        return cls(0.0, 0.0, 0.0, 0.0)


def _hit_box(o, d, box: Box):
    R = yaw_matrix(box.yaw)
    half = np.asarray(box.size) / 2.0
    ol = R.T @ (o - np.asarray(box.center))
    dl = d @ R
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-half - ol) / dl
        t2 = (half - ol) / dl
    tmin = np.nanmax(np.minimum(t1, t2), axis=1)
    tmax = np.nanmin(np.maximum(t1, t2), axis=1)
    hit = (tmax >= tmin) & (tmin > 1e-9)
    return np.where(hit, tmin, np.inf)


def _hit_cylinder(o, d, cyl: Cylinder):
    c = np.asarray(cyl.center, dtype=float)
    oc = o[:2] - c
    a = d[:, 0] ** 2 + d[:, 1] ** 2
    b = 2.0 * (d[:, :2] @ oc)
    cc = oc @ oc - cyl.radius**2
    disc = b * b - 4 * a * cc
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (-b - np.sqrt(np.maximum(disc, 0.0))) / (2 * a)
    z = o[2] + t * d[:, 2]
    side = (disc >= 0) & (a > 1e-12) & (t > 1e-9) & (z >= cyl.z0) & (z <= cyl.z1)
    t_side = np.where(side, t, np.inf)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        t_cap = (cyl.z1 - o[2]) / d[:, 2]
        xy = o[:2] + t_cap[:, None] * d[:, :2]
        cap = (t_cap > 1e-9) & (np.sum((xy - c) ** 2, axis=1) <= cyl.radius**2)
    t_cap = np.where(cap, t_cap, np.inf)
    return np.minimum(t_side, t_cap)


def render(world: World, pose: PoseSE3, lidar: LidarModel = COARSE_LIDAR, jitter: float = 0.0, rng=None):
    """Cast the sensor's rays from ``pose`` (sensor-to-world) and return a sensor-frame cloud."""
    d_sensor = lidar.directions()
    d = d_sensor @ pose.rotation.T
    o = pose.translation
    n = len(d)
    best = np.full(n, np.inf)
    sem = np.full(n, -1, dtype=np.int64)
    inst = np.zeros(n, dtype=np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        tg = (world.ground_z - o[2]) / d[:, 2]
    tg = np.where(d[:, 2] < -1e-12, tg, np.inf)
    closer = tg < best
    best[closer] = tg[closer]
    sem[closer] = world.ground_class
    for prim in world.primitives:
        t = _hit_box(o, d, prim) if isinstance(prim, Box) else _hit_cylinder(o, d, prim)
        closer = t < best
        best[closer] = t[closer]
        sem[closer] = prim.semantic
        inst[closer] = prim.instance
    keep = best <= lidar.max_range
    pts = best[keep, None] * d_sensor[keep]
    if jitter > 0:
        rng = np.random.default_rng() if rng is None else rng
        pts = pts + rng.normal(0.0, jitter, pts.shape)
    return LabeledPointCloud(pts, sem[keep], inst[keep])


# ---------------------------------------------------------------------------
# random layouts

_THINGS = (C.CAR, C.OTHER_VEHICLE, C.TRUCK)


def random_layout(rng, center=(0.0, 0.0), radius: float = 35.0, clear: float = 4.0, first_instance: int = 1,
                  stuff_instances: bool = True) -> list:
    """Random street-like arrangement of labelled primitives around ``center``.

    With ``stuff_instances=False`` only vehicles get instance ids, like
    SemanticKITTI ground truth; everything else is left for clustering.
    """
    cx, cy = center
    prims = []
    next_id = [first_instance]

    def inst(cls):
        if not stuff_instances and cls not in _THINGS:
            return 0
        next_id[0] += 1
        return next_id[0] - 1

    def spot(rmin=clear, rmax=radius):
        r = np.sqrt(rng.uniform(rmin**2, rmax**2))
        a = rng.uniform(0, 2 * np.pi)
        return cx + r * np.cos(a), cy + r * np.sin(a)

    def box(cls, size, z_base=0.0, rmin=clear, rmax=radius):
        x, y = spot(rmin, rmax)
        size = tuple(float(s) for s in size)
        prims.append(Box((x, y, z_base + size[2] / 2), size, float(rng.uniform(-np.pi, np.pi)), cls, inst(cls)))

    def cyl(cls, r, h, z_base=0.0):
        x, y = spot()
        prims.append(Cylinder((x, y), z_base, z_base + h, float(r), cls, inst(cls)))

    for _ in range(rng.integers(2, 6)):
        box(C.BUILDING, (rng.uniform(8, 20), rng.uniform(6, 14), rng.uniform(5, 15)), rmin=12.0)
    for _ in range(rng.integers(3, 9)):
        cyl(C.POLE, rng.uniform(0.1, 0.2), rng.uniform(5, 8))
    for _ in range(rng.integers(2, 7)):
        cyl(C.TRUNK, rng.uniform(0.2, 0.4), rng.uniform(1.5, 3))
    for _ in range(rng.integers(2, 6)):
        box(C.VEGETATION, rng.uniform(1.5, 4.0, size=3))
    for _ in range(rng.integers(1, 5)):
        box(C.TRAFFIC_SIGN, (0.7, 0.15, 0.7), z_base=rng.uniform(2.0, 3.0))
    for _ in range(rng.integers(1, 4)):
        box(C.FENCE, (rng.uniform(5, 15), 0.15, rng.uniform(1.0, 2.0)))
    for _ in range(rng.integers(1, 3)):
        box(C.SIDEWALK, (rng.uniform(8, 20), rng.uniform(2, 4), 0.15))
    for _ in range(rng.integers(0, 3)):
        box(C.TERRAIN, (rng.uniform(4, 10), rng.uniform(4, 10), 0.1))
    for _ in range(rng.integers(1, 6)):
        box(C.CAR, (4.5, 1.8, 1.5))
    for _ in range(rng.integers(0, 2)):
        box(C.TRUCK, (8.0, 2.5, 3.5))
    for _ in range(rng.integers(0, 3)):
        box(C.OTHER_VEHICLE, (2.0, 0.8, 1.5))
    return prims


def _viewpoint(rng, base: PoseSE3, noise: NoiseParams) -> PoseSE3:
    yaw = np.radians(rng.uniform(-noise.yaw_deg, noise.yaw_deg)) if noise.yaw_deg > 0 else 0.0
    r = noise.translation * np.sqrt(rng.uniform()) if noise.translation > 0 else 0.0
    a = rng.uniform(0, 2 * np.pi)
    offset = np.array([r * np.cos(a), r * np.sin(a), 0.0])
    return PoseSE3(base.rotation @ yaw_matrix(yaw), base.translation + offset)


@dataclass
class SynthSet:
    scans: list
    poses: list
    pairs: list
    place_of: list
    worlds: list

    def __iter__(self):
        return iter((self.scans, self.poses, self.pairs))


def synth_scenes(
    seed: int,
    n_places: int,
    revisit_fraction: float = 1.0,
    noise_params: NoiseParams = NoiseParams(),
    n_pairs: int | None = None,
    lidar: LidarModel = COARSE_LIDAR,
    spacing: float = 200.0,
    stuff_instances: bool = True,
    seq_id: str = "synth",
) -> SynthSet:
    """Generate place layouts, their scans, ground-truth poses and labelled pairs.

    Place ``p`` sits at ``(p * spacing, 0)``; its first scan is taken from the
    place centre with no viewpoint noise. A ``revisit_fraction`` of places
    gets a second scan from a perturbed viewpoint with instance dropout.
    Positive pairs are (first visit, revisit); negatives join distinct places.
    """
    if n_places < 2:
        raise ValueError("need at least two places")
    rng = np.random.default_rng(seed)
    worlds, scans, poses, place_of = [], [], [], []
    for p in range(n_places):
        center = (p * spacing, 0.0)
        world = World(random_layout(rng, center, stuff_instances=stuff_instances))
        worlds.append(world)
        pose = PoseSE3(np.eye(3), (center[0], center[1], SENSOR_HEIGHT))
        scans.append(render(world, pose, lidar, noise_params.jitter, rng))
        poses.append(pose)
        place_of.append(p)

    n_revisit = int(round(revisit_fraction * n_places))
    revisited = np.sort(rng.choice(n_places, n_revisit, replace=False)) if n_revisit else np.array([], int)
    positives = []
    for p in revisited:
        world = worlds[p]
        if noise_params.dropout > 0:
            gone = [q.instance for q in world.primitives if rng.uniform() < noise_params.dropout]
            world = world.without(gone)
        pose = _viewpoint(rng, poses[p], noise_params)
        scans.append(render(world, pose, lidar, noise_params.jitter, rng))
        poses.append(pose)
        place_of.append(int(p))
        positives.append(ScanPair(seq_id, int(p), len(scans) - 1, 1))

    if n_pairs is None:
        n_pairs = 2 * len(positives) if positives else n_places
    n_neg = max(n_pairs - len(positives), 0)
    place_arr = np.array(place_of)
    negatives = set()
    n_scans = len(scans)
    max_neg = sum(1 for a in range(n_scans) for b in range(a + 1, n_scans) if place_arr[a] != place_arr[b])
    n_neg = min(n_neg, max_neg)
    while len(negatives) < n_neg:
        a, b = rng.choice(n_scans, 2, replace=False)
        if place_arr[a] != place_arr[b]:
            negatives.add((int(min(a, b)), int(max(a, b))))
    pairs = positives + [ScanPair(seq_id, a, b, 0) for a, b in sorted(negatives)]
    return SynthSet(scans, poses, pairs, place_of, worlds)


# ---------------------------------------------------------------------------
# structured scenes for registration and loop closing


def structured_world(seed: int, radius: float = 30.0, stuff_instances: bool = True) -> World:
    """Single random layout around the origin (registration benchmark)."""
    rng = np.random.default_rng(seed)
    return World(random_layout(rng, (0.0, 0.0), radius=radius, clear=5.0, stuff_instances=stuff_instances))


def square_route(side: float = 40.0, step: float = 2.0, revisit_offset=(0.6, -0.4, 4.0)) -> list[PoseSE3]:
    """Closed square trajectory, counter-clockwise, ending back near the start.

    The final pose revisits the origin displaced by ``revisit_offset``
    ``(dx, dy, yaw_deg)``.
    """
    poses = []
    corners = [np.array(c, float) for c in [(0, 0), (side, 0), (side, side), (0, side), (0, 0)]]
    n_per_side = int(round(side / step))
    for k in range(4):
        a, b = corners[k], corners[k + 1]
        heading = np.arctan2(*(b - a)[::-1])
        for s in range(n_per_side):
            xy = a + (b - a) * s / n_per_side
            poses.append(PoseSE3.from_yaw(heading, (xy[0], xy[1], SENSOR_HEIGHT)))
    # the revisit: back at the start, heading as on the first leg
    dx, dy, dyaw = revisit_offset
    poses.append(PoseSE3.from_yaw(np.radians(dyaw), (dx, dy, SENSOR_HEIGHT)))
    return poses


def _square_distance(x: float, y: float, side: float) -> float:
    """Distance from ``(x, y)`` to the outline of the square ``[0, side]^2``."""
    dx = max(-x, 0.0, x - side)
    dy = max(-y, 0.0, y - side)
    if dx == 0.0 and dy == 0.0:
        return min(x, y, side - x, side - y)
    return float(np.hypot(dx, dy))


def _footprint(p) -> tuple[float, float, float]:
    if isinstance(p, Box):
        return p.center[0], p.center[1], 0.5 * float(np.hypot(p.size[0], p.size[1]))
    return p.center[0], p.center[1], p.radius


def square_world(seed: int, side: float = 40.0, stuff_instances: bool = True, road_half_width: float = 3.5,
                 anchor_spacing: float = 20.0) -> World:
    """Random street scenery along a square loop with the road itself kept clear.

    Layouts like those of :func:`random_layout` are dropped around anchors
    every ``anchor_spacing`` metres of the loop; anything whose footprint
    reaches within ``road_half_width`` of the route is removed.
    """
    rng = np.random.default_rng(seed)
    prims = []
    n_side = max(int(round(side / anchor_spacing)), 1)
    anchors = []
    corners = [(0, 0), (side, 0), (side, side), (0, side), (0, 0)]
    for (ax, ay), (bx, by) in zip(corners, corners[1:]):
        for k in range(n_side):
            f = k / n_side
            anchors.append((ax + (bx - ax) * f, ay + (by - ay) * f))
    for center in anchors:
        layout = random_layout(rng, center, radius=18.0, clear=road_half_width,
                               first_instance=len(prims) + 1, stuff_instances=stuff_instances)
        for p in layout:
            x, y, r = _footprint(p)
            if _square_distance(x, y, side) - r > road_half_width:
                prims.append(p)
    # renumber so instance ids stay unique after filtering
    out = []
    for k, p in enumerate(prims, start=1):
        out.append(replace(p, instance=k if p.instance else 0))
    return World(out)
