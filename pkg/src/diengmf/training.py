"""Maximum-likelihood flow training on forward-invariant attractor data.

Training data starts as a Gaussian blob near the attractor, is driven onto
it by a long spinup, and is then re-propagated (never re-sampled) one step
per epoch, so every epoch trains on fresh states drawn from the invariant
measure.  Optimization is plain SGD with global gradient-norm clipping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import Propagator
from .errors import ConfigurationError, SearchFailureError, TrainingDivergenceError
from .flow import Flow, FlowConfig, build_flow
from .rng import RngStream

SYSTEM_INIT = {
    "ikeda": (np.array([1.25, 0.0]), 1.0 / 128.0),
    "lorenz63": (np.array([8.0, 0.0, 0.0]), 1.0),
}
SYSTEM_DIM = {"ikeda": 2, "lorenz63": 3}
# spacing between retained states when thinning a long attractor trajectory
THIN_STEPS = {"ikeda": 1.0, "lorenz63": 0.1}


@dataclass(frozen=True)
class TrainConfig:
    """Declarative description of one training run (or a grid of them)."""

    system: str
    seed: int = 0
    batch_size: int = 100
    spinup: float = 100.0
    dt: float = 1.0
    substep: float = 0.01
    epochs: int = 2000
    learning_rate: float = 1e-3
    clip_norm: float = 10.0
    n_layers: int = 6
    depth: int = 8
    width: int = 64
    n_bins: int = 4
    bound: float = 5.0
    mode: str = "single"
    grid_depths: tuple = (8, 16)
    grid_widths: tuple = (64, 128)
    grid_bins: tuple = (4, 8)
    grid_inits: int = 2

    def __post_init__(self):
        if self.system not in SYSTEM_DIM:
            raise ConfigurationError(f"unknown system {self.system!r}")
        if self.epochs < 0 or self.learning_rate <= 0:
            raise ConfigurationError("epochs must be >= 0 and learning_rate > 0")

    @property
    def dim(self) -> int:
        return SYSTEM_DIM[self.system]

    def flow_config(self) -> FlowConfig:
        return FlowConfig(
            dim=self.dim,
            n_layers=self.n_layers,
            n_bins=self.n_bins,
            depth=self.depth,
            width=self.width,
            bound=self.bound,
        )

    @staticmethod
    def from_dict(raw: dict) -> "TrainConfig":
        if raw.get("version") != 1:
            raise ConfigurationError("training config must declare version: 1")
        flow = raw.get("flow", {})
        grid = raw.get("grid", {})
        known = dict(
            system=raw["system"],
            seed=raw.get("seed", 0),
            batch_size=raw.get("batch_size", 100),
            spinup=raw.get("spinup", 100.0),
            dt=raw.get("dt", 1.0),
            substep=raw.get("substep", 0.01),
            epochs=raw.get("epochs", 2000),
            learning_rate=raw.get("learning_rate", 1e-3),
            clip_norm=raw.get("clip_norm", 10.0),
            n_layers=flow.get("n_layers", 6),
            depth=flow.get("depth", 8),
            width=flow.get("width", 64),
            n_bins=flow.get("n_bins", 4),
            bound=flow.get("bound", 5.0),
            mode=raw.get("mode", "single"),
        )
        if grid:
            known.update(
                grid_depths=tuple(grid.get("depths", (8, 16))),
                grid_widths=tuple(grid.get("widths", (64, 128))),
                grid_bins=tuple(grid.get("bins", (4, 8))),
                grid_inits=grid.get("inits", 2),
            )
        try:
            return TrainConfig(**known)
        except KeyError as exc:
            raise ConfigurationError(f"training config missing field {exc}") from exc


@dataclass
class TrainedModel:
    """Optimized flow plus calibration threshold and training provenance."""

    flow: Flow
    config: TrainConfig
    log_tau: float | None
    final_train_nll: float
    final_test_nll: float
    loss_curve: np.ndarray  # columns: epoch, train_nll, test_nll
    provenance: dict = field(default_factory=dict)


def training_propagator(config: TrainConfig) -> Propagator:
    return Propagator(config.system, dt=config.dt, h=config.substep)


def generate_initial_batch(rng: RngStream, system: str, size: int = 100,
                           spinup: float = 100.0, substep: float = 0.01) -> np.ndarray:
    """Gaussian blob near the attractor, spun up onto it.

    Draws `size` points from the system's initial distribution and
    propagates each of them `spinup` time units (or map iterations).
    """
    mean, var = SYSTEM_INIT[system]
    batch = mean + math.sqrt(var) * rng.standard_normal((size, mean.size))
    prop = Propagator(system, dt=spinup, h=substep)
    return prop.propagate(batch)


def nll_loss(batch: np.ndarray, flow: Flow) -> float:
    """Mean negative log-likelihood of `batch` under the flow."""
    return float(flow.nll(batch, grad=False))


def loss_gradient(batch: np.ndarray, flow: Flow) -> list[np.ndarray]:
    """Gradient of the NLL for every parameter, via reverse accumulation."""
    params = flow.parameters()
    for p in params:
        p.zero_grad()
    loss = flow.nll(batch, grad=True)
    loss.backward()
    return [np.zeros_like(p.data) if p.grad is None else p.grad for p in params]


def _sgd_step(params, grads, lr: float, clip_norm: float) -> None:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    scale = lr if total <= clip_norm else lr * clip_norm / total
    for p, g in zip(params, grads):
        p.data = p.data - scale * g


def train(config: TrainConfig, root: RngStream | None = None) -> TrainedModel:
    """Run the forward-invariance training loop.

    Raises
    ------
    TrainingDivergenceError
        If the loss becomes non-finite; retry with a smaller learning rate.
    """
    root = root or RngStream(config.seed)
    batch = generate_initial_batch(
        root.split("train-batch"), config.system, config.batch_size,
        config.spinup, config.substep,
    )
    test_batch = generate_initial_batch(
        root.split("test-batch"), config.system, config.batch_size,
        config.spinup, config.substep,
    )
    log_scale = float(np.log(batch.std(axis=0).mean()))
    flow = build_flow(config.flow_config(), root.split("flow-init"), log_scale)
    prop = training_propagator(config)

    params = flow.parameters()
    curve = np.zeros((config.epochs, 3))
    for epoch in range(config.epochs):
        batch = prop.propagate(batch)
        test_batch = prop.propagate(test_batch)
        for p in params:
            p.zero_grad()
        loss = flow.nll(batch, grad=True)
        train_nll = float(loss.data)
        if not math.isfinite(train_nll):
            raise TrainingDivergenceError(
                f"non-finite loss at epoch {epoch} "
                f"(D={config.depth}, W={config.width}, K={config.n_bins})"
            )
        loss.backward()
        _sgd_step(params, [p.grad for p in params], config.learning_rate, config.clip_norm)
        curve[epoch] = (epoch, train_nll, nll_loss(test_batch, flow))

    final_train = nll_loss(batch, flow)
    final_test = nll_loss(test_batch, flow)
    provenance = {
        "system": config.system,
        "seed": config.seed,
        "epochs": config.epochs,
        "depth": config.depth,
        "width": config.width,
        "n_bins": config.n_bins,
        "n_layers": config.n_layers,
        "learning_rate": config.learning_rate,
        "final_train_nll": final_train,
        "final_test_nll": final_test,
    }
    return TrainedModel(
        flow=flow,
        config=config,
        log_tau=None,
        final_train_nll=final_train,
        final_test_nll=final_test,
        loss_curve=curve,
        provenance=provenance,
    )


def grid_search(config: TrainConfig, root: RngStream | None = None
                ) -> tuple[TrainedModel, list[dict]]:
    """Train every (depth, width, bins) x init cell; keep the lowest test NLL.

    Returns the winning model and one record per cell for the results CSV.
    Diverged cells are recorded with a NaN loss and skipped for selection.
    """
    root = root or RngStream(config.seed)
    records: list[dict] = []
    best: TrainedModel | None = None
    for depth in config.grid_depths:
        for width in config.grid_widths:
            for bins in config.grid_bins:
                for init in range(config.grid_inits):
                    cell = replace(config, depth=depth, width=width, n_bins=bins)
                    cell_root = root.split("grid", depth, width, bins, init)
                    try:
                        model = train(cell, cell_root)
                        loss = model.final_test_nll
                    except TrainingDivergenceError:
                        model, loss = None, float("nan")
                    records.append(
                        {"depth": depth, "width": width, "n_bins": bins,
                         "init": init, "final_test_nll": loss}
                    )
                    if model is not None and math.isfinite(loss):
                        if best is None or loss < best.final_test_nll:
                            model.provenance["init"] = init
                            best = model
    if best is None:
        raise SearchFailureError("every grid cell diverged")
    return best, records


def simulate_attractor_states(rng: RngStream, system: str, count: int,
                              spinup: float = 100.0, substep: float = 0.01
                              ) -> np.ndarray:
    """`count` states from one long post-spinup trajectory, thinned."""
    mean, var = SYSTEM_INIT[system]
    state = (mean + math.sqrt(var) * rng.standard_normal(mean.size))[None, :]
    state = Propagator(system, dt=spinup, h=substep).propagate(state)
    thin = Propagator(system, dt=THIN_STEPS[system], h=substep)
    out = np.empty((count, mean.size))
    for i in range(count):
        state = thin.propagate(state)
        out[i] = state[0]
    return out


def lower_quantile(values: np.ndarray, quantile: float) -> float:
    """Lower empirical quantile: 1-based index ceil(q*M) of the ascending sort."""
    values = np.sort(np.asarray(values, dtype=float))
    if not 0.0 <= quantile <= 1.0:
        raise ValueError("quantile must lie in [0, 1]")
    k = max(1, math.ceil(quantile * values.size))
    return float(values[k - 1])


def calibrate_threshold(flow: Flow, system: str, n_samples: int = 10_000,
                        quantile: float = 0.01, rng: RngStream | None = None,
                        substep: float = 0.01) -> float:
    """Density threshold (in log space) for the flow discriminator.

    Simulates `n_samples` attractor states, evaluates their log-densities and
    returns the lower `quantile` of that sample, guaranteeing at least a
    ``1 - quantile`` pass rate on the calibration set.
    """
    if n_samples < 100:
        raise ConfigurationError("calibration needs at least 100 samples")
    rng = rng or RngStream(0)
    states = simulate_attractor_states(rng, system, n_samples, substep=substep)
    log_densities = flow.log_density(states, grad=False)
    return lower_quantile(log_densities, quantile)
