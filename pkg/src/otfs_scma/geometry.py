"""Highway-cell geometry: radio-head layout, user drops, serving chains.

Users travel in +x direction on a strip of width d_w at perpendicular
distance d_p from the radio-head line.  Three deployments are supported:

* ``comp``       two distributed radio heads at x = 0 and x = d_h jointly
                 receive every user;
* ``colocated``  pairs of co-located receive chains at sites spaced
                 2*d_h apart, each user served by its nearest site;
* ``cellular``   distributed radio heads at x = 0 and x = d_h, each user
                 served only by the nearest one.
"""

import enum
import math
from dataclasses import dataclass, field

import numpy as np


class Scheme(enum.Enum):
    COMP = "comp"
    COLOCATED = "colocated"
    CELLULAR = "cellular"


@dataclass(frozen=True)
class GeometryConfig:
    """Cell dimensions in meters."""

    d_h: float = 1000.0
    d_p: float = 150.0
    d_w: float = 50.0
    colocated_site_spacing: float | None = None  # defaults to 2*d_h

    def __post_init__(self):
        if min(self.d_h, self.d_p, self.d_w) <= 0:
            raise ValueError("all cell distances must be positive")

    @property
    def site_spacing(self) -> float:
        return (
            self.colocated_site_spacing
            if self.colocated_site_spacing is not None
            else 2.0 * self.d_h
        )

    @property
    def rrh_positions(self) -> tuple[tuple[float, float], tuple[float, float]]:
        return ((0.0, 0.0), (self.d_h, 0.0))


@dataclass(frozen=True)
class ServingChain:
    """One receive chain a user is heard by."""

    position: tuple[float, float]
    toward: bool  # user is moving toward this chain
    distance_m: float


@dataclass(frozen=True)
class UserGeometry:
    """A dropped user: position on the strip plus its serving chains."""

    position: tuple[float, float]
    velocity_kmh: float
    chains: tuple[ServingChain, ...] = field(default=())


def _distance(a, b) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def _chain(user_xy, site_xy) -> ServingChain:
    return ServingChain(
        position=site_xy,
        toward=site_xy[0] > user_xy[0],
        distance_m=_distance(user_xy, site_xy),
    )


def serving_chains(
    cfg: GeometryConfig, scheme: Scheme, user_xy
) -> tuple[ServingChain, ...]:
    """Receive chains serving a user at the given position."""
    if scheme is Scheme.COMP:
        return tuple(_chain(user_xy, p) for p in cfg.rrh_positions)
    if scheme is Scheme.COLOCATED:
        spacing = cfg.site_spacing
        site_idx = round(user_xy[0] / spacing)
        site = (site_idx * spacing, 0.0)
        c = _chain(user_xy, site)
        return (c, c)
    if scheme is Scheme.CELLULAR:
        best = min(cfg.rrh_positions, key=lambda p: _distance(user_xy, p))
        return (_chain(user_xy, best),)
    raise ValueError(f"unknown scheme {scheme!r}")


def sample_geometry(
    cfg: GeometryConfig,
    scheme: Scheme,
    num_users: int,
    velocity_kmh: float,
    rng: np.random.Generator,
) -> list[UserGeometry]:
    """Drop users uniformly on the strip and attach their serving chains."""
    x = rng.uniform(0.0, cfg.d_h, size=num_users)
    y = rng.uniform(cfg.d_p, cfg.d_p + cfg.d_w, size=num_users)
    users = []
    for j in range(num_users):
        pos = (float(x[j]), float(y[j]))
        users.append(
            UserGeometry(
                position=pos,
                velocity_kmh=velocity_kmh,
                chains=serving_chains(cfg, scheme, pos),
            )
        )
    return users
