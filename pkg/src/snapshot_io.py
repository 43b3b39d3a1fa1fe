"""
Snapshot Module
Binary dumps of distribution fields and particle ensembles.

Layout: one magic line, one JSON header line, then the raw little-endian
float64 payload. Reading a snapshot back reproduces every value bit for bit.
"""
import json
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from src.errors import ConfigError
from src.fields import DistributionField, SpatialGrid
from src.particle_sim import ParticleEnsemble
from src.sphere_calculus import AngularGrid
from src.utils import format_size, setup_logger

logger = setup_logger(__name__)

FIELD_MAGIC = b"VKFIELD1\n"
ENSEMBLE_MAGIC = b"VKPART1\n"
_DTYPE = np.dtype("<f8")

PathLike = Union[str, Path]


def _write(path: PathLike, magic: bytes, header: Dict[str, Any], payload: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = dict(header, dtype=_DTYPE.str, count=int(payload.size))
    with open(path, "wb") as handle:
        handle.write(magic)
        handle.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        handle.write(np.ascontiguousarray(payload, dtype=_DTYPE).tobytes())
    logger.info(f"Wrote snapshot {path} ({format_size(path.stat().st_size)})")
    return path


def _read(path: PathLike, magic: bytes) -> Tuple[Dict[str, Any], np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"snapshot not found: {path}")
    with open(path, "rb") as handle:
        if handle.readline() != magic:
            raise ConfigError(f"{path} is not a {magic.decode().strip()} snapshot")
        header = json.loads(handle.readline().decode("utf-8"))
        payload = np.frombuffer(handle.read(), dtype=header["dtype"])
    if payload.size != header["count"]:
        raise ConfigError(f"{path}: expected {header['count']} values, found {payload.size}")
    return header, payload.astype(float)


def save_field(f: DistributionField, path: PathLike, extra: Optional[Dict[str, Any]] = None) -> Path:
    header = f.header()
    header["shape"] = list(f.values.shape)
    if extra:
        header["extra"] = extra
    return _write(path, FIELD_MAGIC, header, f.values)


def load_field(path: PathLike) -> DistributionField:
    header, payload = _read(path, FIELD_MAGIC)
    sgrid = SpatialGrid.from_dict(header["spatial_grid"])
    agrid = AngularGrid.from_dict(header["angular_grid"])
    values = payload.reshape(header["shape"])
    return DistributionField(values, sgrid, agrid, time=header["time"],
                             initial_mass=header["initial_mass"])


def save_ensemble(ens: ParticleEnsemble, path: PathLike, params: Optional[Dict[str, Any]] = None) -> Path:
    header = ens.header()
    if params:
        header["params"] = params
    payload = np.concatenate((ens.positions.ravel(), ens.directions.ravel()))
    return _write(path, ENSEMBLE_MAGIC, header, payload)


def load_ensemble(path: PathLike) -> ParticleEnsemble:
    header, payload = _read(path, ENSEMBLE_MAGIC)
    n, x_dim, dim = header["n"], header["x_dim"], header["dim"]
    positions = payload[:n * x_dim].reshape(n, x_dim)
    directions = payload[n * x_dim:].reshape(n, dim)
    return ParticleEnsemble(positions, directions, header["length"], header["seed"],
                            step=header["step"], time=header["time"])


def read_header(path: PathLike) -> Dict[str, Any]:
    with open(path, "rb") as handle:
        handle.readline()
        return json.loads(handle.readline().decode("utf-8"))
