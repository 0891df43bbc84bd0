"""On-disk cache of dense eigendecompositions.

One file per operator configuration, named by the SHA-256 of its canonical
JSON.  Layout (all little-endian)::

    magic    8 bytes   b"CTEIGv1\\0"
    hash    64 bytes   ASCII hex digest of the configuration
    N        int64     grid points per dimension
    alpha    float64   operator order
    flags    int64     bit 0: eigenvectors present, bit 1: complex vectors
    m        int64     number of eigenvalues
    eigenvalues        m float64
    eigenvectors       m*m float64 (complex: interleaved real/imag pairs)

Readers and writers take advisory ``fcntl`` locks on the file.
"""
from __future__ import annotations

import fcntl
import logging
import os
import struct
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

MAGIC = b"CTEIGv1\0"
_HEADER = struct.Struct("<8s64sqdqq")


class EigenCache:
    """Directory-backed eigendecomposition cache.

    Parameters
    ----------
    directory : path-like
        Created if missing.
    """

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.hits = 0
        self.misses = 0

    def path(self, op) -> Path:
        return self.directory / f"{op.config_hash()}.eig"

    def load(self, op, vectors: bool = True):
        """Return ``(eigenvalues, eigenvectors or None)`` or ``None`` on a miss."""
        p = self.path(op)
        if not p.exists():
            self.misses += 1
            return None
        with open(p, "rb") as fh:
            fcntl.flock(fh, fcntl.LOCK_SH)
            try:
                data = fh.read()
            finally:
                fcntl.flock(fh, fcntl.LOCK_UN)
        try:
            magic, digest, N, alpha, flags, m = _HEADER.unpack_from(data, 0)
        except struct.error:
            log.warning("cache file %s is truncated; ignoring", p)
            self.misses += 1
            return None
        if magic != MAGIC or digest.decode() != op.config_hash() or N != op.geometry.N:
            log.warning("cache file %s does not match the operator; ignoring", p)
            self.misses += 1
            return None
        has_vec, is_complex = bool(flags & 1), bool(flags & 2)
        if vectors and not has_vec:
            self.misses += 1
            return None
        off = _HEADER.size
        need = off + 8 * m + (0 if not vectors else 8 * m * m * (2 if is_complex else 1))
        if len(data) < need:
            log.warning("cache file %s is truncated; ignoring", p)
            self.misses += 1
            return None
        ev = np.frombuffer(data, dtype="<f8", count=m, offset=off).astype(float)
        vecs = None
        if vectors:
            off += 8 * m
            if is_complex:
                raw = np.frombuffer(data, dtype="<f8", count=2 * m * m, offset=off)
                vecs = (raw[0::2] + 1j * raw[1::2]).reshape(m, m)
            else:
                vecs = np.frombuffer(data, dtype="<f8", count=m * m, offset=off).reshape(m, m).copy()
        self.hits += 1
        log.info("eigendecomposition cache hit %s", p.name)
        return ev, vecs

    def store(self, op) -> Path:
        """Write ``op``'s eigendecomposition atomically."""
        p = self.path(op)
        ev = np.ascontiguousarray(op.eigenvalues, dtype="<f8")
        V = op.eigenvectors
        flags = 0
        if V is not None:
            flags |= 1
            if np.iscomplexobj(V):
                flags |= 2
        header = _HEADER.pack(MAGIC, op.config_hash().encode(), op.geometry.N, op.order, flags, ev.size)
        tmp = p.with_suffix(f".tmp{os.getpid()}")
        with open(tmp, "wb") as fh:
            fcntl.flock(fh, fcntl.LOCK_EX)
            fh.write(header)
            fh.write(ev.tobytes())
            if V is not None:
                if np.iscomplexobj(V):
                    buf = np.empty(V.shape + (2,), dtype="<f8")
                    buf[..., 0] = V.real
                    buf[..., 1] = V.imag
                    fh.write(buf.tobytes())
                else:
                    fh.write(np.ascontiguousarray(V, dtype="<f8").tobytes())
            fh.flush()
            os.fsync(fh.fileno())
            fcntl.flock(fh, fcntl.LOCK_UN)
        os.replace(tmp, p)
        log.info("stored eigendecomposition %s", p.name)
        return p
