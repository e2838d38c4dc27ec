"""Binary file formats (all little-endian).

FMV1  density cube:   magic, n (u32), D (f64), n^3 f32 values, x fastest.
FMC1  volume model:   magic, Nr (u32), per shell k (f64), p (u32),
                      (p+1)^2 complex as interleaved f64 pairs.
FMS1  particle stack: magic, M (u32), npix (u32), D (f64), flags (u32,
                      bit0 = true orientations present); per image
                      z (f64), alpha, beta, gamma (3 f64, NaN if absent),
                      npix^2 f32 pixels row-major.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .harmonics import VolumeModel, degree_for_shell, ncoeff
from .sphgrid import DensityCube


class FileFormatError(ValueError):
    pass


def _check_magic(buf: bytes, magic: bytes, path) -> None:
    if buf[:4] != magic:
        raise FileFormatError(f"{path}: expected magic {magic!r}, found {buf[:4]!r}")


def write_cube(path, cube: DensityCube) -> None:
    n = cube.n
    # x fastest: reverse the [ix, iy, iz] axis order before flattening
    data = np.ascontiguousarray(cube.values.transpose(2, 1, 0), dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(b"FMV1" + struct.pack("<Id", n, cube.D))
        fh.write(data.tobytes())


def read_cube(path) -> DensityCube:
    buf = Path(path).read_bytes()
    _check_magic(buf, b"FMV1", path)
    n, D = struct.unpack_from("<Id", buf, 4)
    vals = np.frombuffer(buf, dtype="<f4", count=n**3, offset=16)
    return DensityCube(vals.reshape(n, n, n).transpose(2, 1, 0).astype(float), D)


def write_model(path, model: VolumeModel) -> None:
    with open(path, "wb") as fh:
        fh.write(b"FMC1" + struct.pack("<I", model.nr))
        for k, c in zip(model.ks, model.coeffs):
            fh.write(struct.pack("<dI", float(k), degree_for_shell(k)))
            fh.write(np.asarray(c, dtype="<c16").tobytes())


def read_model(path) -> VolumeModel:
    buf = Path(path).read_bytes()
    _check_magic(buf, b"FMC1", path)
    (nr,) = struct.unpack_from("<I", buf, 4)
    off = 8
    ks, coeffs = [], []
    for _ in range(nr):
        k, p = struct.unpack_from("<dI", buf, off)
        off += 12
        if p != degree_for_shell(k):
            raise FileFormatError(f"{path}: shell k={k} stores degree {p}, expected {degree_for_shell(k)}")
        nc = ncoeff(p)
        coeffs.append(np.frombuffer(buf, dtype="<c16", count=nc, offset=off).copy())
        off += 16 * nc
        ks.append(k)
    return VolumeModel(np.array(ks), coeffs)


def write_stack(path, stack) -> None:
    m, npix = stack.pixels.shape[0], stack.pixels.shape[1]
    has = stack.orientations is not None
    with open(path, "wb") as fh:
        fh.write(b"FMS1" + struct.pack("<IIdI", m, npix, stack.D, 1 if has else 0))
        for i in range(m):
            ang = stack.orientations[i] if has else (np.nan,) * 3
            fh.write(struct.pack("<4d", stack.defocus[i], *ang))
            fh.write(np.asarray(stack.pixels[i], dtype="<f4").tobytes())


def read_stack(path):
    from .simulate import ParticleStack

    buf = Path(path).read_bytes()
    _check_magic(buf, b"FMS1", path)
    m, npix, D, flags = struct.unpack_from("<IIdI", buf, 4)
    off = 24
    pix = np.empty((m, npix, npix))
    z = np.empty(m)
    ang = np.empty((m, 3))
    for i in range(m):
        z[i], *ang[i] = struct.unpack_from("<4d", buf, off)
        off += 32
        pix[i] = np.frombuffer(buf, dtype="<f4", count=npix * npix, offset=off).reshape(npix, npix)
        off += 4 * npix * npix
    return ParticleStack(pix, z, ang if flags & 1 else None, D)
