"""
Geo-distributed network profile: per-site latency and bandwidth plus the site
that serves each pipeline stage.

File format (text, one matrix row per line, `inf` allowed for bandwidth):

    ckfree-net v1
    sites <name>,<name>,...
    assignment <site of stage 1>,<site of stage 2>,...
    <n latency rows, seconds>
    <n bandwidth rows, bytes per second>
"""

import logging
import math
import os
from typing import Tuple

from pydantic import BaseModel, ConfigDict, model_validator

from config.settings import NETWORK_SETTINGS
from sim_utils.errors import ConfigurationError, NetworkProfileFormatError

logger = logging.getLogger(__name__)

MAGIC = "ckfree-net"
VERSION = NETWORK_SETTINGS["NETWORK_FORMAT_VERSION"]


def mbps_to_bytes_per_second(mbps: float) -> float:
    return mbps * 1e6 / 8.0


class NetworkProfile(BaseModel):
    model_config = ConfigDict(frozen=True)

    sites: Tuple[str, ...]
    latency: Tuple[Tuple[float, ...], ...]
    bandwidth: Tuple[Tuple[float, ...], ...]
    assignment: Tuple[str, ...]

    @model_validator(mode="after")
    def _check(self):
        n = len(self.sites)
        if n == 0:
            raise ConfigurationError("network profile needs at least one site")
        if len(set(self.sites)) != n:
            raise ConfigurationError("site names must be unique")
        for name, matrix in (("latency", self.latency), ("bandwidth", self.bandwidth)):
            if len(matrix) != n or any(len(row) != n for row in matrix):
                raise ConfigurationError(f"{name} matrix must be {n}x{n}")
        for row in self.latency:
            if any(not math.isfinite(x) or x < 0 for x in row):
                raise ConfigurationError("latencies must be finite and nonnegative")
        for row in self.bandwidth:
            if any(math.isnan(x) or x <= 0 for x in row):
                raise ConfigurationError("bandwidths must be positive")
        unknown = sorted(set(self.assignment) - set(self.sites))
        if unknown:
            raise ConfigurationError(f"assignment names unknown sites {unknown}")
        if not self.assignment:
            raise ConfigurationError("assignment must name a site for every stage")
        return self

    @property
    def num_stages(self) -> int:
        return len(self.assignment)

    def site_index(self, stage_id: int) -> int:
        if not 1 <= stage_id <= self.num_stages:
            raise ConfigurationError(f"stage {stage_id} has no site in a {self.num_stages}-stage profile")
        return self.sites.index(self.assignment[stage_id - 1])

    def link(self, src_stage: int, dst_stage: int) -> Tuple[float, float]:
        """(latency seconds, bandwidth bytes/s) between the nodes of two stages."""
        a, b = self.site_index(src_stage), self.site_index(dst_stage)
        return self.latency[a][b], self.bandwidth[a][b]

    def transfer_seconds(self, src_stage: int, dst_stage: int, nbytes: float) -> float:
        latency, bandwidth = self.link(src_stage, dst_stage)
        return latency + nbytes / bandwidth

    def check_stages(self, num_stages: int):
        if self.num_stages != num_stages:
            raise ConfigurationError(
                f"network profile assigns {self.num_stages} stages, model has {num_stages}"
            )


def default_profile(num_stages: int) -> NetworkProfile:
    """Synthetic 5-site profile; stages are placed round-robin over the sites."""
    sites = tuple(NETWORK_SETTINGS["SITES"])
    bandwidth = tuple(tuple(mbps_to_bytes_per_second(x) for x in row)
                      for row in NETWORK_SETTINGS["BANDWIDTH_MBPS"])
    latency = tuple(tuple(float(x) for x in row) for row in NETWORK_SETTINGS["LATENCY_S"])
    assignment = tuple(sites[i % len(sites)] for i in range(num_stages))
    return NetworkProfile(sites=sites, latency=latency, bandwidth=bandwidth, assignment=assignment)


def uniform_profile(num_stages: int, latency: float, bandwidth: float) -> NetworkProfile:
    """One site per stage with identical links (bandwidth in bytes/s, may be inf)."""
    sites = tuple(f"site{i}" for i in range(1, num_stages + 1))
    lat = tuple(tuple(0.0 if i == j else float(latency) for j in range(num_stages)) for i in range(num_stages))
    bw = tuple(tuple(math.inf if i == j else float(bandwidth) for j in range(num_stages))
               for i in range(num_stages))
    return NetworkProfile(sites=sites, latency=lat, bandwidth=bw, assignment=sites)


def serialize_profile(profile: NetworkProfile) -> str:
    lines = [f"{MAGIC} {VERSION}",
             f"sites {','.join(profile.sites)}",
             f"assignment {','.join(profile.assignment)}"]
    lines += [" ".join(repr(x) for x in row) for row in profile.latency]
    lines += [" ".join(repr(x) for x in row) for row in profile.bandwidth]
    return "\n".join(lines) + "\n"


def _parse_row(line: str, n: int, number: int) -> Tuple[float, ...]:
    try:
        row = tuple(float(x) for x in line.split())
    except ValueError as e:
        raise NetworkProfileFormatError(f"non-numeric matrix entry in '{line}'", line=number) from e
    if len(row) != n:
        raise NetworkProfileFormatError(f"expected {n} entries, got {len(row)}", line=number)
    return row


def parse_profile(text: str) -> NetworkProfile:
    numbered = [(i, raw.strip()) for i, raw in enumerate(text.splitlines(), start=1)]
    numbered = [(i, line) for i, line in numbered if line and not line.startswith("#")]
    if not numbered or numbered[0][1] != f"{MAGIC} {VERSION}":
        raise NetworkProfileFormatError(f"expected '{MAGIC} {VERSION}' header", line=1)
    if len(numbered) < 3:
        raise NetworkProfileFormatError("missing sites or assignment line")

    fields = {}
    for number, line in numbered[1:3]:
        key, _, value = line.partition(" ")
        if key not in ("sites", "assignment"):
            raise NetworkProfileFormatError(f"unexpected field '{key}'", line=number)
        fields[key] = tuple(v for v in value.strip().split(",") if v)
    sites = fields.get("sites", ())
    n = len(sites)
    rows = numbered[3:]
    if len(rows) != 2 * n:
        raise NetworkProfileFormatError(f"expected {2 * n} matrix rows, got {len(rows)}")
    latency = tuple(_parse_row(line, n, number) for number, line in rows[:n])
    bandwidth = tuple(_parse_row(line, n, number) for number, line in rows[n:])
    try:
        return NetworkProfile(sites=sites, latency=latency, bandwidth=bandwidth,
                              assignment=fields.get("assignment", ()))
    except ConfigurationError as e:
        raise NetworkProfileFormatError(str(e)) from e


def save_profile(profile: NetworkProfile, path):
    directory = os.path.dirname(os.fspath(path))
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(serialize_profile(profile))
    logger.info(f"Saved network profile with {len(profile.sites)} sites to {path}")


def load_profile(path) -> NetworkProfile:
    if not os.path.exists(path):
        raise ConfigurationError(f"network profile not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        return parse_profile(f.read())
