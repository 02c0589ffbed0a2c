"""Observation matrices, random sparse scenes and noisy measurements.

The complex model ``y = A x0 + n`` is carried alongside its real block
embedding ``y_RI = A_RI x0_RI + n_RI`` where::

    A_RI = [[Re A, -Im A],
            [Im A,  Re A]]

and real vectors stack the real part on top of the imaginary part.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import InvalidDimensionsError, InvalidParameterError, InvalidShapeError
from .seeding import make_rng

KINDS = ("partial-fourier", "gaussian", "custom")
CACHE_MAGIC = b"UFCM1"


# ---------------------------------------------------------------------------
# real <-> complex helpers


def embed_real(A: np.ndarray) -> np.ndarray:
    """Real block embedding ``[[Re A, -Im A], [Im A, Re A]]`` of a complex matrix."""
    A = np.asarray(A)
    if A.ndim == 1:
        A = A[:, None]
    re, im = A.real, A.imag
    return np.block([[re, -im], [im, re]]).astype(float)


def realvec(x: np.ndarray) -> np.ndarray:
    """Stack real over imaginary part along the first axis."""
    x = np.asarray(x)
    return np.concatenate([x.real, x.imag], axis=0).astype(float)


def split_real_imag(h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Top and bottom halves of ``h`` along the first axis."""
    h = np.asarray(h)
    rows = h.shape[0]
    if rows % 2:
        raise InvalidShapeError(f"row count must be even, got {rows}")
    half = rows // 2
    return h[:half], h[half:]


def complexvec(h: np.ndarray) -> np.ndarray:
    """Inverse of :func:`realvec`."""
    re, im = split_real_imag(h)
    return re + 1j * im


def amplitude(r_RI: np.ndarray) -> np.ndarray:
    """Per-cell magnitude ``sqrt(r_R**2 + r_I**2)`` of a real-formulation vector."""
    r_R, r_I = split_real_imag(r_RI)
    return np.hypot(r_R, r_I)


# ---------------------------------------------------------------------------
# observation model


@dataclass(frozen=True, eq=False)
class ObservationModel:
    A: np.ndarray
    kind: str = "custom"
    row_selection: tuple[int, ...] = ()
    seed: int = 0

    def __post_init__(self):
        A = np.asarray(self.A, dtype=complex)
        if A.ndim != 2:
            raise InvalidDimensionsError("A must be a 2-D matrix")
        M, N = A.shape
        if M < 1 or M > N:
            raise InvalidDimensionsError(f"need 1 <= M <= N, got M={M}, N={N}")
        if self.kind not in KINDS:
            raise InvalidParameterError(f"unknown matrix kind {self.kind!r}")
        A.setflags(write=False)
        object.__setattr__(self, "A", A)

    @property
    def M(self) -> int:
        return self.A.shape[0]

    @property
    def N(self) -> int:
        return self.A.shape[1]

    @cached_property
    def A_RI(self) -> np.ndarray:
        out = embed_real(self.A)
        out.setflags(write=False)
        return out


def dft_matrix(N: int) -> np.ndarray:
    k = np.arange(N)
    return np.exp(-2j * np.pi * np.outer(k, k) / N) / np.sqrt(N)


def make_partial_fourier(M: int, N: int, seed: int) -> ObservationModel:
    """``M`` distinct random rows of the unitary N-point DFT, columns rescaled to unit norm."""
    if not (1 <= M <= N):
        raise InvalidDimensionsError(f"need 1 <= M <= N, got M={M}, N={N}")
    rng = make_rng(seed)
    rows = np.sort(rng.choice(N, size=M, replace=False))
    A = dft_matrix(N)[rows]
    A = A / np.linalg.norm(A, axis=0, keepdims=True)
    return ObservationModel(A, kind="partial-fourier", row_selection=tuple(int(r) for r in rows), seed=seed)


def make_gaussian(M: int, N: int, seed: int) -> ObservationModel:
    """I.i.d. CN(0, 1/M) entries, so columns have unit norm on average."""
    if not (1 <= M <= N):
        raise InvalidDimensionsError(f"need 1 <= M <= N, got M={M}, N={N}")
    rng = make_rng(seed)
    A = (rng.standard_normal((M, N)) + 1j * rng.standard_normal((M, N))) / np.sqrt(2 * M)
    return ObservationModel(A, kind="gaussian", row_selection=tuple(range(M)), seed=seed)


def make_model(kind: str, M: int, N: int, seed: int) -> ObservationModel:
    if kind == "partial-fourier":
        return make_partial_fourier(M, N, seed)
    if kind == "gaussian":
        return make_gaussian(M, N, seed)
    raise InvalidParameterError(f"cannot build matrix of kind {kind!r} from (M, N, seed)")


def cache_path(directory: str | Path, kind: str, M: int, N: int, seed: int) -> Path:
    return Path(directory) / f"{kind}_M{M}_N{N}_seed{seed}.ufcm"


def save_matrix(model: ObservationModel, path: str | Path) -> None:
    """Little-endian layout: b"UFCM1", int64 M, int64 N, M int64 row indices,
    then interleaved (re, im) float64 pairs in row-major order."""
    rows = model.row_selection or tuple(range(model.M))
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<qq", model.M, model.N))
        fh.write(np.asarray(rows, dtype="<i8").tobytes())
        inter = np.empty((model.M, model.N, 2), dtype="<f8")
        inter[..., 0] = model.A.real
        inter[..., 1] = model.A.imag
        fh.write(inter.tobytes())


def load_matrix(path: str | Path, kind: str = "custom", seed: int = 0) -> ObservationModel:
    data = Path(path).read_bytes()
    if data[:5] != CACHE_MAGIC:
        raise InvalidShapeError(f"{path}: bad matrix cache header")
    M, N = struct.unpack_from("<qq", data, 5)
    off = 5 + 16
    rows = np.frombuffer(data, dtype="<i8", count=M, offset=off)
    off += 8 * M
    expected = off + 16 * M * N
    if len(data) != expected:
        raise InvalidShapeError(f"{path}: expected {expected} bytes, found {len(data)}")
    inter = np.frombuffer(data, dtype="<f8", count=2 * M * N, offset=off).reshape(M, N, 2)
    A = inter[..., 0] + 1j * inter[..., 1]
    return ObservationModel(A, kind=kind, row_selection=tuple(int(r) for r in rows), seed=seed)


def cached_model(directory: str | Path, kind: str, M: int, N: int, seed: int) -> ObservationModel:
    """Build a matrix, reusing an on-disk copy keyed by (kind, M, N, seed)."""
    path = cache_path(directory, kind, M, N, seed)
    if path.exists():
        return load_matrix(path, kind=kind, seed=seed)
    model = make_model(kind, M, N, seed)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_matrix(model, path)
    return model


# ---------------------------------------------------------------------------
# scenes and measurements


def snr_to_sigma2(a_min: float, a_max: float, snr_db: float, linear: bool = False) -> float:
    """Per-real-component noise variance for a given SNR.

    Solves ``(a_min**2 + a_max**2 + a_min*a_max) / (6 sigma2) = snr`` where
    ``snr = 10**(snr_db/10)`` unless ``linear`` is set.
    """
    if a_min <= 0 or a_max <= 0 or a_min > a_max:
        raise InvalidParameterError(f"need 0 < a_min <= a_max, got {a_min}, {a_max}")
    snr = snr_db if linear else 10.0 ** (snr_db / 10.0)
    if snr <= 0:
        raise InvalidParameterError("linear SNR must be positive")
    return (a_min**2 + a_max**2 + a_min * a_max) / (6.0 * snr)


@dataclass(frozen=True)
class SceneParams:
    N: int
    a_min: float = 1.0
    a_max: float = 1.0
    rho_min: float = 0.03
    rho_max: float = 0.03
    snr_min: float = 13.0
    snr_max: float = 13.0
    snr_linear: bool = False

    def __post_init__(self):
        if self.N < 1:
            raise InvalidParameterError("N must be positive")
        if not (0 < self.a_min <= self.a_max):
            raise InvalidParameterError("need 0 < a_min <= a_max")
        if not (0.0 <= self.rho_min <= self.rho_max <= 1.0):
            raise InvalidParameterError("need 0 <= rho_min <= rho_max <= 1")
        if self.snr_min > self.snr_max:
            raise InvalidParameterError("need snr_min <= snr_max")

    def mid_sigma2(self) -> float:
        """Noise variance at the midpoint of the SNR range."""
        snr = 0.5 * (self.snr_min + self.snr_max)
        return snr_to_sigma2(self.a_min, self.a_max, snr, linear=self.snr_linear)


@dataclass(frozen=True, eq=False)
class Scene:
    x0: np.ndarray
    amplitudes: np.ndarray
    phases: np.ndarray
    occupancy: np.ndarray
    rho: float
    snr: float
    noise_sigma2: float

    @property
    def N(self) -> int:
        return self.x0.shape[0]

    @cached_property
    def x0_RI(self) -> np.ndarray:
        return realvec(self.x0)

    @cached_property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.occupancy)

    @property
    def L0(self) -> int:
        return int(self.support.size)


def generate_scene(params: SceneParams, seed: int | np.random.Generator) -> Scene:
    """Draw ``x0 = a * exp(j*phi) * Q`` with one amplitude shared by all cells."""
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    N = params.N
    a = rng.uniform(params.a_min, params.a_max)
    rho = rng.uniform(params.rho_min, params.rho_max)
    snr = rng.uniform(params.snr_min, params.snr_max)
    phases = rng.uniform(-np.pi, np.pi, size=N)
    occupancy = (rng.random(N) < rho).astype(np.int8)
    amplitudes = np.full(N, a)
    x0 = amplitudes * np.exp(1j * phases) * occupancy
    sigma2 = snr_to_sigma2(params.a_min, params.a_max, snr, linear=params.snr_linear)
    return Scene(x0, amplitudes, phases, occupancy, float(rho), float(snr), float(sigma2))


@dataclass(frozen=True, eq=False)
class Measurement:
    y: np.ndarray
    n: np.ndarray

    @cached_property
    def y_RI(self) -> np.ndarray:
        return realvec(self.y)

    @cached_property
    def n_RI(self) -> np.ndarray:
        return realvec(self.n)


def measure(model: ObservationModel, scene: Scene, seed: int | np.random.Generator,
            noise_sigma2: float | None = None) -> Measurement:
    """``y = A x0 + n`` with ``n_i ~ CN(0, 2 sigma2)`` (length M)."""
    if scene.N != model.N:
        raise InvalidDimensionsError(f"scene length {scene.N} != model N {model.N}")
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    s2 = scene.noise_sigma2 if noise_sigma2 is None else noise_sigma2
    sd = np.sqrt(s2)
    n = sd * (rng.standard_normal(model.M) + 1j * rng.standard_normal(model.M))
    y = model.A @ scene.x0 + n
    return Measurement(y, n)


def write_vector_csv(path, values: np.ndarray, occupied: np.ndarray | None = None) -> None:
    """Dump a complex vector with columns index, re, im[, occupied]."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = ["index", "re", "im"] + (["occupied"] if occupied is not None else [])
        w.writerow(header)
        for i, v in enumerate(values):
            row = [i, repr(float(v.real)), repr(float(v.imag))]
            if occupied is not None:
                row.append(int(occupied[i]))
            w.writerow(row)


def read_vector_csv(path) -> np.ndarray:
    """Read a complex vector from an ``index, re, im`` CSV (extra columns ignored)."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows or [c.strip() for c in rows[0][:3]] != ["index", "re", "im"]:
        raise InvalidShapeError(f"{path}: expected header 'index,re,im'")
    body = rows[1:]
    out = np.empty(len(body), dtype=complex)
    for lineno, r in enumerate(body, start=2):
        try:
            idx = int(r[0])
            value = float(r[1]) + 1j * float(r[2])
        except (ValueError, IndexError) as exc:
            raise InvalidShapeError(f"{path}:{lineno}: malformed row {r!r}") from exc
        if idx != lineno - 2:
            raise InvalidShapeError(f"{path}:{lineno}: indices must be 0..n-1 in order")
        out[idx] = value
    return out
