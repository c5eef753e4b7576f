"""
Checkpoint container

Layout:

    SEMSIMCKPT <version> <header_bytes>\n
    <header_bytes of UTF-8 JSON>
    <raw little-endian tensor payloads>

The JSON header holds free-form metadata plus a `tensors` list; each entry
names a tensor, its shape, dtype ('<f4' or '<f8'), frozen flag, group and the
byte offset / length of its payload counted from the first payload byte.
Payloads keep the tensor's own precision: '<f4' for 32-bit models and '<f8'
when the model runs at precision 64, so resumed 64-bit runs stay bit-exact.
"""

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Tuple

import numpy as np

from semsim.errors import CheckpointError
from semsim.tensor_autodiff import Tensor

logger = logging.getLogger(__name__)

MAGIC = 'SEMSIMCKPT'
FORMAT_VERSION = 1


@dataclass
class StoredTensor:
    name: str
    values: np.ndarray
    frozen: bool = False
    group: str = 'model'


def _payload_dtype(values: np.ndarray) -> np.dtype:
    if values.dtype == np.float64:
        return np.dtype('<f8')
    return np.dtype('<f4')


def write_container(path, header: Dict, tensors: Iterable[StoredTensor]) -> Path:
    """Write metadata and tensors; returns the path written"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries, payloads, offset = [], [], 0
    for item in tensors:
        dtype = _payload_dtype(item.values)
        raw = np.ascontiguousarray(item.values, dtype=dtype).tobytes(order='C')
        entries.append({
            'name': item.name,
            'shape': list(item.values.shape),
            'dtype': dtype.str,
            'frozen': bool(item.frozen),
            'group': item.group,
            'offset': offset,
            'nbytes': len(raw),
        })
        payloads.append(raw)
        offset += len(raw)

    meta = dict(header)
    meta['tensors'] = entries
    header_bytes = json.dumps(meta, indent=2, sort_keys=True).encode('utf-8')
    with open(path, 'wb') as handle:
        handle.write(f"{MAGIC} {FORMAT_VERSION} {len(header_bytes)}\n".encode('ascii'))
        handle.write(header_bytes)
        for raw in payloads:
            handle.write(raw)
    logger.info(f"📁 Saved checkpoint: {path} ({len(entries)} tensors, {offset:,} payload bytes)")
    return path


def read_container(path) -> Tuple[Dict, List[StoredTensor]]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    first_newline = data.find(b'\n')
    try:
        magic, version, header_len = data[:first_newline].decode('ascii').split()
        version, header_len = int(version), int(header_len)
    except ValueError as e:
        raise CheckpointError(f"{path} is not a semsim checkpoint: {e}") from e
    if magic != MAGIC:
        raise CheckpointError(f"{path} is not a semsim checkpoint")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {FORMAT_VERSION})")

    header_start = first_newline + 1
    header = json.loads(data[header_start:header_start + header_len].decode('utf-8'))
    payload_start = header_start + header_len
    tensors = []
    for entry in header.pop('tensors'):
        start = payload_start + entry['offset']
        raw = data[start:start + entry['nbytes']]
        if len(raw) != entry['nbytes']:
            raise CheckpointError(f"truncated payload for tensor {entry['name']}")
        values = np.frombuffer(raw, dtype=np.dtype(entry['dtype'])).reshape(entry['shape']).copy()
        tensors.append(StoredTensor(entry['name'], values, entry['frozen'], entry['group']))
    return header, tensors


def to_tensors(stored: Iterable[StoredTensor], group: str) -> Dict[str, Tensor]:
    """Rebuild named parameter tensors of one group"""
    return {
        item.name: Tensor(item.values, requires_grad=True, frozen=item.frozen, name=item.name,
                          dtype=item.values.dtype.newbyteorder('='))
        for item in stored if item.group == group
    }


def frozen_digest(tensors: Iterable[Tensor]) -> str:
    """SHA-256 over the payloads of frozen tensors, in name order"""
    digest = hashlib.sha256()
    for tensor in sorted((t for t in tensors if t.frozen), key=lambda t: t.name or ''):
        digest.update((tensor.name or '').encode('utf-8'))
        digest.update(np.ascontiguousarray(tensor.values).tobytes())
    return digest.hexdigest()
