"""Plain-text result files.

Every table starts with ``# key: value`` metadata lines followed by a line of
column names, so a reader can recover how the file was produced.
"""
import logging
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Sequence

import numpy as np

from physics.detection import PhotonRecord
from physics.trajectory import TrajectoryRecord

logger = logging.getLogger(__name__)


def run_metadata(command: str, config, **extra) -> Dict[str, Any]:
    """Standard header fields of a result file."""
    metadata = {'command': command}
    metadata.update(config.get_summary())
    metadata['config_hash'] = config.config_hash()
    metadata.update(extra)
    return metadata


def _header(metadata: Mapping[str, Any], names: Sequence[str]) -> str:
    lines = [f"{key}: {value}" for key, value in metadata.items()]
    lines.append(' '.join(names))
    return '\n'.join(lines)


def write_table(path: Path, columns: Mapping[str, np.ndarray], metadata: Mapping[str, Any],
                fmt: str = '%.10e') -> Path:
    """Write equal-length columns with a metadata header.

    Raises:
        ValueError: If the columns differ in length
    """
    names = list(columns)
    arrays = [np.asarray(columns[name], dtype=float).ravel() for name in names]
    lengths = {a.size for a in arrays}
    if len(lengths) > 1:
        raise ValueError(f"Columns of {path.name} differ in length: {sorted(lengths)}")
    data = np.column_stack(arrays) if arrays and arrays[0].size else np.zeros((0, len(names)))
    path = Path(path)
    np.savetxt(path, data, fmt=fmt, header=_header(metadata, names))
    logger.info("Wrote table", extra={'path': str(path), 'rows': data.shape[0]})
    return path


def write_photons(path: Path, records: Sequence[PhotonRecord], metadata: Mapping[str, Any]
                  ) -> Path:
    """Photon rows ``trigger channel timestamp_ns epoch`` for every record."""
    rows = []
    for k, record in enumerate(records):
        for channel, timestamp, epoch in record.rows():
            rows.append((str(k), channel, f"{timestamp:.1f}", epoch))
    path = Path(path)
    data = np.array(rows, dtype=object).reshape(-1, 4)
    np.savetxt(path, data, fmt='%s', header=_header(metadata,
                                                    ('trigger', 'channel', 'timestamp_ns', 'epoch')))
    logger.info("Wrote photon records", extra={'path': str(path), 'rows': len(rows)})
    return path


def write_trajectory(path: Path, record: TrajectoryRecord, metadata: Mapping[str, Any]) -> Path:
    """Sampled path of one atom for rho-z projections."""
    extra = {'index': record.index, 'fate': record.fate, 'variant': record.variant,
             'trigger_time_us': None if record.trigger_time is None
             else record.trigger_time * 1e6}
    return write_table(path, {'t_us': record.t * 1e6, 'rho_nm': record.rho * 1e9,
                              'd_nm': record.d * 1e9, 'z_nm': record.z * 1e9,
                              'phi_rad': record.phi, 'epoch': record.epoch},
                       {**metadata, **extra})


def read_table(path: Path) -> Dict[str, np.ndarray]:
    """Columns of a file written by ``write_table``, by name."""
    path = Path(path)
    names: Optional[Sequence[str]] = None
    with path.open(encoding='utf-8') as handle:
        for line in handle:
            if not line.startswith('#'):
                break
            names = line[1:].split()
    if not names:
        raise ValueError(f"No column names in {path}")
    data = np.loadtxt(path, comments='#', ndmin=2)
    if data.size == 0:
        return {name: np.zeros(0) for name in names}
    return {name: data[:, k] for k, name in enumerate(names)}
