"""Semantic class vocabularies and raw-label remapping tables."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

IGNORE = -1

# 12-class vocabulary used for SemanticKITTI (and for the synthetic scenes).
SEMANTIC_KITTI_CLASSES = (
    "car",
    "other-vehicle",
    "other-ground",
    "fence",
    "trunk",
    "pole",
    "truck",
    "sidewalk",
    "building",
    "vegetation",
    "terrain",
    "traffic-sign",
)

KITTI360_CLASSES = (
    "car",
    "static-object",
    "ground",
    "parking",
    "rail-track",
    "building",
    "wall",
    "fence",
    "guard-rail",
    "bridge",
    "pole",
    "vegetation",
    "traffic-sign",
)

CAR = 0
OTHER_VEHICLE = 1
OTHER_GROUND = 2
FENCE = 3
TRUNK = 4
POLE = 5
TRUCK = 6
SIDEWALK = 7
BUILDING = 8
VEGETATION = 9
TERRAIN = 10
TRAFFIC_SIGN = 11

# Raw SemanticKITTI ids (semantic-kitti.yaml) -> 12-class ids.
_SK_RAW = {
    0: IGNORE,  # unlabeled
    1: IGNORE,  # outlier
    10: CAR,
    11: OTHER_VEHICLE,  # bicycle
    13: OTHER_VEHICLE,  # bus
    15: OTHER_VEHICLE,  # motorcycle
    16: OTHER_VEHICLE,  # on-rails
    18: TRUCK,
    20: OTHER_VEHICLE,
    30: IGNORE,  # person
    31: IGNORE,  # bicyclist
    32: IGNORE,  # motorcyclist
    40: OTHER_GROUND,  # road
    44: OTHER_GROUND,  # parking
    48: SIDEWALK,
    49: OTHER_GROUND,
    50: BUILDING,
    51: FENCE,
    52: IGNORE,  # other-structure
    60: OTHER_GROUND,  # lane-marking
    70: VEGETATION,
    71: TRUNK,
    72: TERRAIN,
    80: POLE,
    81: TRAFFIC_SIGN,
    99: IGNORE,  # other-object
    252: CAR,
    253: IGNORE,
    254: IGNORE,
    255: IGNORE,
    256: OTHER_VEHICLE,
    257: OTHER_VEHICLE,
    258: TRUCK,
    259: OTHER_VEHICLE,
}

# KITTI-360 label ids -> 13-class ids.
_K360_RAW = {
    6: 2,  # ground
    7: 2,  # road
    8: 2,  # sidewalk
    9: 3,  # parking
    10: 4,  # rail track
    11: 5,  # building
    12: 6,  # wall
    13: 7,  # fence
    14: 8,  # guard rail
    15: 9,  # bridge
    17: 10,  # pole
    19: 12,  # traffic light
    20: 12,  # traffic sign
    21: 11,  # vegetation
    22: 2,  # terrain
    26: 0,  # car
    27: 0,  # truck
    28: 0,  # bus
    35: 5,  # garage
    36: 6,  # gate
    37: 10,  # smallpole
    38: 12,  # lamp
    39: 1,  # trash bin
    40: 1,  # vending machine
    41: 1,  # box
    42: 1,  # unknown construction
    44: 1,  # unknown object
}


@dataclass(frozen=True)
class ClassMap:
    """Total mapping from source class ids to ``0..num_classes-1``.

    Source ids absent from ``table`` map to ``IGNORE``.
    """

    table: dict[int, int]
    names: tuple[str, ...]
    name: str = field(default="custom", compare=False)

    def __post_init__(self):
        for src, dst in self.table.items():
            if dst != IGNORE and not 0 <= dst < len(self.names):
                raise ValueError(f"class {src} maps to {dst}, outside 0..{len(self.names) - 1}")

    @property
    def num_classes(self) -> int:
        return len(self.names)

    def lookup(self, ids: np.ndarray) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        out = np.full(ids.shape, IGNORE, dtype=np.int64)
        for src, dst in self.table.items():
            out[ids == src] = dst
        return out

    @classmethod
    def identity(cls, names=SEMANTIC_KITTI_CLASSES) -> "ClassMap":
        return cls({i: i for i in range(len(names))}, tuple(names), name="identity")


SEMANTIC_KITTI = ClassMap(_SK_RAW, SEMANTIC_KITTI_CLASSES, name="semantic-kitti")
KITTI360 = ClassMap(_K360_RAW, KITTI360_CLASSES, name="kitti-360")

CLASS_MAPS = {
    "semantic-kitti": SEMANTIC_KITTI,
    "kitti-360": KITTI360,
    "identity": ClassMap.identity(),
}
