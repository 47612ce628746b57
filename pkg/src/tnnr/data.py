"""Synthetic instance generation and binary PGM/PPM image I/O.

Randomness is split into named streams (factor entries, noise, mask indices,
frequency subsets) derived from one seed, so each component of an experiment
is independently reproducible.
"""

from dataclasses import dataclass

import numpy as np

from .operators import LinearMap, PartialDct2D, SamplingMask

__all__ = ["SyntheticSpec", "stream_rng", "synth_lowrank", "load_image", "save_image"]

_STREAMS = {"factors": 0, "noise": 1, "mask": 2, "freqs": 3}


def stream_rng(seed: int, stream: str) -> np.random.Generator:
    """Independent generator for one named component of an experiment."""
    if stream not in _STREAMS:
        raise ValueError(f"unknown stream {stream!r}, expected one of {sorted(_STREAMS)}")
    return np.random.default_rng(np.random.SeedSequence((int(seed), _STREAMS[stream])))


@dataclass(frozen=True)
class SyntheticSpec:
    """Ground-truth description: an m x n rank-r Gaussian factor product,
    sampled at ratio sr with additive N(0, std^2) measurement noise."""

    m: int
    n: int
    r: int
    sr: float
    std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError(f"invalid dimensions ({self.m}, {self.n})")
        if not 1 <= self.r <= min(self.m, self.n):
            raise ValueError(f"rank r={self.r} out of range [1, {min(self.m, self.n)}]")
        if not 0 < self.sr <= 1:
            raise ValueError(f"sample ratio must be in (0, 1], got {self.sr}")
        if self.std < 0:
            raise ValueError(f"noise std must be nonnegative, got {self.std}")

    @property
    def p(self) -> int:
        return int(round(self.sr * self.m * self.n))


def synth_lowrank(spec: SyntheticSpec, kind: str = "dct",
                  keep_dc: bool = False) -> tuple[np.ndarray, LinearMap, np.ndarray]:
    """Draw (X*, A, b): X* = G1 G2 with standard normal factors, A a random
    mask or partial DCT at spec.sr, and b = A(X*) + noise."""
    rng = stream_rng(spec.seed, "factors")
    x_star = rng.standard_normal((spec.m, spec.r)) @ rng.standard_normal((spec.r, spec.n))
    if kind == "mask":
        a = SamplingMask.random(spec.m, spec.n, spec.sr, stream_rng(spec.seed, "mask"))
    elif kind == "dct":
        a = PartialDct2D.random(spec.m, spec.n, spec.sr, stream_rng(spec.seed, "freqs"),
                                keep_dc=keep_dc)
    else:
        raise ValueError(f"operator kind must be 'mask' or 'dct', got {kind!r}")
    b = a.apply(x_star)
    if spec.std > 0:
        b = b + spec.std * stream_rng(spec.seed, "noise").standard_normal(a.p)
    return x_star, a, b


def _parse_netpbm(blob: bytes, path) -> tuple[bytes, int, int, int, bytes]:
    """Split a netpbm blob into (magic, width, height, maxval, raster);
    headers may contain '#' comments."""
    tokens = []
    i = 0
    while len(tokens) < 4:
        if i >= len(blob):
            raise ValueError(f"bad image file {path}: truncated header")
        c = blob[i:i + 1]
        if c == b"#":
            j = blob.find(b"\n", i)
            i = len(blob) if j < 0 else j + 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(blob) and not blob[j:j + 1].isspace() and blob[j:j + 1] != b"#":
                j += 1
            tokens.append(blob[i:j])
            i = j
    # exactly one whitespace byte separates the maxval from the raster
    if i >= len(blob) or not blob[i:i + 1].isspace():
        raise ValueError(f"bad image file {path}: missing raster separator")
    return tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3]), blob[i + 1:]


def load_image(path) -> list[np.ndarray]:
    """Read a binary PGM (P5) or PPM (P6) image as float64 channel matrices
    (1 for grayscale, 3 for color). Only 8-bit depth (maxval 255) is
    supported."""
    with open(path, "rb") as f:
        blob = f.read()
    magic, width, height, maxval, raster = _parse_netpbm(blob, path)
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"bad image file {path}: magic {magic!r} is not binary PGM/PPM")
    if maxval != 255:
        raise ValueError(f"bad image file {path}: depth {maxval} != 255")
    channels = 1 if magic == b"P5" else 3
    expected = width * height * channels
    if len(raster) < expected:
        raise ValueError(f"bad image file {path}: raster has {len(raster)} bytes, need {expected}")
    pixels = np.frombuffer(raster[:expected], dtype=np.uint8)
    if channels == 1:
        return [pixels.reshape(height, width).astype(np.float64)]
    planes = pixels.reshape(height, width, 3).astype(np.float64)
    return [planes[:, :, c] for c in range(3)]


def save_image(channels, path) -> None:
    """Write 1 channel as binary PGM or 3 channels as binary PPM; entries are
    rounded and clipped to [0, 255]."""
    channels = [np.asarray(c, dtype=np.float64) for c in channels]
    if len(channels) not in (1, 3):
        raise ValueError(f"expected 1 or 3 channels, got {len(channels)}")
    shape = channels[0].shape
    if len(shape) != 2 or any(c.shape != shape for c in channels):
        raise ValueError("all channels must be 2-D matrices of equal shape")
    height, width = shape
    quantized = [np.clip(np.round(c), 0, 255).astype(np.uint8) for c in channels]
    if len(quantized) == 1:
        magic, raster = b"P5", quantized[0].tobytes()
    else:
        magic, raster = b"P6", np.stack(quantized, axis=-1).tobytes()
    with open(path, "wb") as f:
        f.write(magic + b"\n%d %d\n255\n" % (width, height))
        f.write(raster)
