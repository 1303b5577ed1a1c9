"""Network architectures, Fourier feature maps, and boundary-conforming trials.

A trial function is a small fully-connected tanh network composed with a
boundary factor that vanishes on the domain boundary, so Dirichlet conditions
hold exactly and training never needs a boundary penalty. Three architectures
are supported:

- ``plain-g``: raw coordinates in, scalar out, multiplied by the product
  factor g(x) = prod_j x_j (l - x_j).
- ``fourier-g``: like plain-g but the input layer sees Fourier features
  [cos(w_m x_j), sin(w_m x_j)] for a bank of wavenumbers w_m.
- ``fourier-sine``: Fourier features in, M outputs, combined as the average
  of s_m(x) * z_m where s_m(x) = prod_j sin(w_m x_j) vanishes on the boundary
  mode by mode.

Parameters live in a single flat float64 vector; pack/unpack helpers define
the layout (row-major weight matrices first, then the bias, layer by layer).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PLAIN_G = "plain-g"
FOURIER_G = "fourier-g"
FOURIER_SINE = "fourier-sine"
ARCHITECTURES = (PLAIN_G, FOURIER_G, FOURIER_SINE)

ACTIVATIONS = ("tanh", "identity")


@dataclass(frozen=True)
class NetworkSpec:
    """Shape and wiring of one trial network.

    ``hidden_widths`` lists the hidden layer sizes N_1..N_n. The input width
    is the coordinate dimension for plain-g and 2*M*d for the Fourier
    architectures; the output width is 1 except for fourier-sine, where one
    output per wavenumber is produced. ``activation`` is tanh in production;
    "identity" exists for linear-network oracles in tests.
    ``unit_boundary_factor`` replaces the boundary factor by one (test hook,
    breaks boundary conformity on purpose).
    """

    input_dim: int
    hidden_widths: tuple[int, ...]
    num_wavenumbers: int = 0
    domain_length: float = 1.0
    architecture: str = FOURIER_SINE
    activation: str = "tanh"
    unit_boundary_factor: bool = False

    def __post_init__(self) -> None:
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.input_dim < 1:
            raise ValueError("input_dim must be positive")
        if not self.hidden_widths or any(w < 1 for w in self.hidden_widths):
            raise ValueError("hidden_widths must be a non-empty tuple of positive ints")
        if self.domain_length <= 0.0:
            raise ValueError("domain_length must be positive")
        if self.architecture == PLAIN_G:
            if self.num_wavenumbers != 0:
                raise ValueError("plain-g takes no wavenumbers")
        elif self.num_wavenumbers < 1:
            raise ValueError("Fourier architectures need num_wavenumbers >= 1")

    @property
    def input_width(self) -> int:
        if self.architecture == PLAIN_G:
            return self.input_dim
        return 2 * self.num_wavenumbers * self.input_dim

    @property
    def output_width(self) -> int:
        return self.num_wavenumbers if self.architecture == FOURIER_SINE else 1

    def fourier_map(self) -> "FourierMap":
        if self.architecture == PLAIN_G:
            raise ValueError("plain-g has no Fourier map")
        return geometric_wavenumbers(self.num_wavenumbers, self.domain_length)


@dataclass
class ParamVector:
    """Flat float64 parameter vector for one network."""

    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ValueError("parameter vector must be one-dimensional")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("parameter vector contains non-finite entries")

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy())

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class FourierMap:
    """Bank of wavenumbers, radians per unit coordinate."""

    omegas: np.ndarray

    def __post_init__(self) -> None:
        omegas = np.asarray(self.omegas, dtype=np.float64)
        if omegas.ndim != 1 or omegas.size == 0:
            raise ValueError("omegas must be a non-empty 1-d array")
        if np.any(omegas <= 0.0):
            raise ValueError("wavenumbers must be positive")
        object.__setattr__(self, "omegas", omegas)

    @property
    def size(self) -> int:
        return self.omegas.shape[0]


@dataclass(frozen=True)
class AffineLift:
    """Affine function added to the level-0 trial to carry boundary data."""

    constant: float
    slope: np.ndarray

    def __post_init__(self) -> None:
        slope = np.atleast_1d(np.asarray(self.slope, dtype=np.float64))
        object.__setattr__(self, "slope", slope)

    def value(self, points: np.ndarray) -> np.ndarray:
        return self.constant + points @ self.slope

    def scaled(self, factor: float) -> "AffineLift":
        return AffineLift(factor * self.constant, factor * self.slope)


def geometric_wavenumbers(count: int, length: float) -> FourierMap:
    """Geometric bank w_m = 2^(m-1) pi / length, m = 1..count."""
    if count < 1:
        raise ValueError("need at least one wavenumber")
    if length <= 0.0:
        raise ValueError("length must be positive")
    return FourierMap(2.0 ** np.arange(count) * np.pi / length)


def fourier_features(coords: np.ndarray, fmap: FourierMap) -> np.ndarray:
    """Per-axis feature block [cos(w_1 x)..cos(w_M x), sin(w_1 x)..sin(w_M x)].

    ``coords`` is a scalar or (P,) array of values of one coordinate; the
    result has shape (P, 2M) with the cosine block first.
    """
    x = np.atleast_1d(np.asarray(coords, dtype=np.float64))
    ang = np.outer(x, fmap.omegas)
    return np.concatenate([np.cos(ang), np.sin(ang)], axis=1)


def as_points(points, dim: int) -> np.ndarray:
    """Normalize input to a (P, dim) float64 array.

    Accepts scalars and flat arrays in 1-d, a single length-d point, or an
    already batched (P, d) array.
    """
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 0:
        if dim != 1:
            raise ValueError(f"scalar point given for a {dim}-d problem")
        return arr.reshape(1, 1)
    if arr.ndim == 1:
        if dim == 1:
            return arr.reshape(-1, 1)
        if arr.shape[0] == dim:
            return arr.reshape(1, dim)
        raise ValueError(f"cannot interpret shape {arr.shape} as {dim}-d points")
    if arr.ndim == 2 and arr.shape[1] == dim:
        return arr
    raise ValueError(f"cannot interpret shape {arr.shape} as {dim}-d points")


def layer_shapes(spec: NetworkSpec) -> list[tuple[int, int]]:
    """Weight matrix shapes (rows, cols) = (N_i, N_{i-1}) layer by layer."""
    widths = [spec.input_width, *spec.hidden_widths, spec.output_width]
    return [(widths[i + 1], widths[i]) for i in range(len(widths) - 1)]


def param_count(spec: NetworkSpec) -> int:
    """Total number of trainable reals: each layer has N_i * N_{i-1} + N_i."""
    return sum(rows * cols + rows for rows, cols in layer_shapes(spec))


def unpack_params(spec: NetworkSpec, params: ParamVector) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split the flat vector into (weight, bias) views, layer by layer."""
    flat = params.values
    if flat.shape[0] != param_count(spec):
        raise ValueError(
            f"parameter vector has {flat.shape[0]} entries, spec needs {param_count(spec)}"
        )
    layers = []
    offset = 0
    for rows, cols in layer_shapes(spec):
        w = flat[offset : offset + rows * cols].reshape(rows, cols)
        offset += rows * cols
        b = flat[offset : offset + rows]
        offset += rows
        layers.append((w, b))
    return layers


def pack_params(spec: NetworkSpec, layers: list[tuple[np.ndarray, np.ndarray]]) -> ParamVector:
    """Inverse of unpack_params."""
    shapes = layer_shapes(spec)
    if len(layers) != len(shapes):
        raise ValueError(f"expected {len(shapes)} layers, got {len(layers)}")
    parts = []
    for (w, b), (rows, cols) in zip(layers, shapes):
        w = np.asarray(w, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if w.shape != (rows, cols) or b.shape != (rows,):
            raise ValueError(f"layer shape mismatch: got {w.shape}/{b.shape}, want {(rows, cols)}")
        parts.append(w.ravel())
        parts.append(b)
    return ParamVector(np.concatenate(parts))


def xavier_init(spec: NetworkSpec, seed: int) -> ParamVector:
    """Xavier-uniform weights, zero biases, deterministic in the seed."""
    rng = np.random.default_rng(seed)
    layers = []
    for rows, cols in layer_shapes(spec):
        bound = np.sqrt(6.0 / (rows + cols))
        w = rng.uniform(-bound, bound, size=(rows, cols))
        layers.append((w, np.zeros(rows)))
    return pack_params(spec, layers)


def boundary_factor(spec: NetworkSpec, points: np.ndarray) -> np.ndarray:
    """Boundary-vanishing factor at the given points.

    Returns shape (P,) for plain-g / fourier-g (the product factor
    g(x) = prod_j x_j (l - x_j)) and (P, M) for fourier-sine (one sine
    product per wavenumber). With ``unit_boundary_factor`` set, ones.
    """
    x = as_points(points, spec.input_dim)
    if spec.architecture == FOURIER_SINE:
        if spec.unit_boundary_factor:
            return np.ones((x.shape[0], spec.num_wavenumbers))
        omegas = spec.fourier_map().omegas
        return np.prod(np.sin(x[:, :, None] * omegas[None, None, :]), axis=1)
    if spec.unit_boundary_factor:
        return np.ones(x.shape[0])
    return np.prod(x * (spec.domain_length - x), axis=1)


def trial_value(
    spec: NetworkSpec,
    params: ParamVector,
    points: np.ndarray,
    lift: AffineLift | None = None,
) -> np.ndarray:
    """Trial function values at the given points, shape (P,).

    The boundary factor multiplies the network output, so at zero output
    weights the trial equals the lift (or zero without one) everywhere.
    """
    x = as_points(points, spec.input_dim)
    z = _feature_matrix(spec, x)
    for w, b in unpack_params(spec, params)[:-1]:
        z = z @ w.T + b
        if spec.activation == "tanh":
            z = np.tanh(z)
    w, b = unpack_params(spec, params)[-1]
    y = z @ w.T + b
    factor = boundary_factor(spec, x)
    if spec.architecture == FOURIER_SINE:
        out = (factor * y).sum(axis=1) / spec.num_wavenumbers
    else:
        out = factor * y[:, 0]
    if lift is not None:
        out = out + lift.value(x)
    return out


def _feature_matrix(spec: NetworkSpec, x: np.ndarray) -> np.ndarray:
    """Input-layer features: raw coordinates or per-axis Fourier blocks."""
    if spec.architecture == PLAIN_G:
        return x
    fmap = spec.fourier_map()
    blocks = [fourier_features(x[:, j], fmap) for j in range(spec.input_dim)]
    return np.concatenate(blocks, axis=1)
