"""
Copyright (c) 2026 The stagedann authors.

This file is part of stagedann, a staged graph-based nearest neighbor search engine.

stagedann is free software: you can redistribute it and/or modify
it under the terms of the MIT License as published by the Massachusetts
Institute of Technology.

For full details, please see the LICENSE file located in the root
directory of this project.

Binary helpers for the versioned artifact files (graph, SVD model, pilot bundle).
Every artifact starts with an 8-byte magic and a little-endian uint32 version.
"""
import struct
import logging
from pathlib import Path
from typing import Iterable, Tuple, Union

import numpy as np

from .exceptions import ArtifactFormatException

logger = logging.getLogger(__name__)

MAGIC_LEN = 8
VERSION_FORMAT = "<I"


class ArtifactReader:
    """Sequential reader over the body of an artifact file."""

    def __init__(self, payload: bytes, path: Path, offset: int = 0):
        """Initialize the reader.

        Args:
            payload: The whole file content.
            path: The file path, used in error messages.
            offset: Position of the first unread byte.
        """
        self._payload = payload
        self._path = path
        self._pos = offset

    def _take(self, size: int) -> bytes:
        if self._pos + size > len(self._payload):
            raise ArtifactFormatException(
                f"Artifact {self._path} is truncated: needed {size} bytes at offset {self._pos}, "
                f"file has {len(self._payload)}"
            )
        chunk = self._payload[self._pos : self._pos + size]
        self._pos += size
        return chunk

    def unpack(self, fmt: str) -> Tuple:
        """Read a fixed-size little-endian struct."""
        return struct.unpack(fmt, self._take(struct.calcsize(fmt)))

    def array(self, dtype, count: int) -> np.ndarray:
        """Read `count` elements of `dtype` (little-endian) into a new array."""
        dt = np.dtype(dtype).newbyteorder("<")
        raw = self._take(dt.itemsize * int(count))
        return np.frombuffer(raw, dtype=dt).astype(np.dtype(dtype).newbyteorder("="), copy=True)

    def at_end(self) -> bool:
        """Return True when every byte has been consumed."""
        return self._pos == len(self._payload)


class FileUtils:
    """Expose file utilities functions."""

    def __init__(self, path: Union[str, Path]):
        """Initialize the File object.

        Args:
            path: The Path of the file.
        """
        self.path = Path(path)

    def write(self, content: bytes) -> None:
        """Write bytes to a file Path, creating the parent directory.

        Raises:
            PermissionError if the filesystem permissions deny the operation.
        """
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_bytes(content)

    def read(self) -> bytes:
        """Read the whole file.

        Raises:
            FileNotFoundError if the Path does not exist.
        """
        return self.path.read_bytes()

    def exists(self) -> bool:
        """Confirm whether a file Path exists or not."""
        return self.path.exists()

    def write_artifact(
        self, magic: bytes, version: int, header_format: str, header: Tuple, arrays: Iterable[np.ndarray]
    ) -> int:
        """Write magic, version, a struct header and a sequence of arrays.

        Args:
            magic: 8-byte file signature.
            version: Format version.
            header_format: Little-endian struct format of the header fields.
            header: Header field values.
            arrays: Arrays written in order, each in its own dtype, little-endian, C order.

        Returns:
            The number of bytes written.
        """
        if len(magic) != MAGIC_LEN:
            raise ValueError(f"Magic must be {MAGIC_LEN} bytes, got {magic!r}")
        parts = [magic, struct.pack(VERSION_FORMAT, version), struct.pack(header_format, *header)]
        for arr in arrays:
            arr = np.ascontiguousarray(arr)
            parts.append(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
        content = b"".join(parts)
        self.write(content)
        logger.debug(f"Wrote artifact {self.path} ({len(content)} bytes, magic {magic!r}, v{version})")
        return len(content)

    def open_artifact(self, magic: bytes, supported_versions: Iterable[int]) -> Tuple[int, ArtifactReader]:
        """Check magic and version of an artifact and return a reader over its body.

        Raises:
            FileNotFoundError if the Path does not exist.
            ArtifactFormatException on a bad magic or unsupported version.
        """
        payload = self.read()
        if payload[:MAGIC_LEN] != magic:
            raise ArtifactFormatException(
                f"File {self.path} is not a {magic!r} artifact (found {payload[:MAGIC_LEN]!r})"
            )
        reader = ArtifactReader(payload, self.path, MAGIC_LEN)
        (version,) = reader.unpack(VERSION_FORMAT)
        if version not in set(supported_versions):
            raise ArtifactFormatException(f"Unsupported version {version} of {magic!r} in {self.path}")
        return version, reader
