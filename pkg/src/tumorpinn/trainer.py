"""Training loop, experiment presets, checkpoints and forward prediction."""

from __future__ import annotations

import csv
import ctypes
import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, obsdata, optim, physics, solver
from .deriv import value_and_grad
from .errors import ConfigurationError, NumericalError
from .net import (CONSTANT_V, SPATIAL_V1V2, V_AND_A, NetworkParams, PhysicalParams, init_xavier,
                  load_checkpoint, save_checkpoint)
from .physics import BCE, MSE, CollocationConfig, LossWeights, Observations

log = logging.getLogger(__name__)

SYNTHETIC_MSE = "synthetic_mse"
REAL_BCE = "real_bce"
SPATIAL = "spatial_v1v2"
VA = "v_and_a"
EXPERIMENTS = {
    SYNTHETIC_MSE: (CONSTANT_V, MSE),
    REAL_BCE: (CONSTANT_V, BCE),
    SPATIAL: (SPATIAL_V1V2, BCE),
    VA: (V_AND_A, BCE),
}
DEFAULT_GUESS = {SYNTHETIC_MSE: (2.0,), REAL_BCE: (2.0,), SPATIAL: (1.0, 1.0), VA: (2.0, 1.0)}


@dataclass
class TrainConfig:
    """Everything that determines a training run. Keys mirror the config-file format."""

    experiment: str = SYNTHETIC_MSE
    weights: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    epochs: int = 60000
    guess: tuple[float, ...] | None = None
    init_seed: int = 0
    sample_seed: int = 1
    data_seed: int = 2
    noise_seed: int = 3
    arch: tuple[int, ...] = (3, 64, 64, 64, 1)
    dtype: str = "float32"
    lr: float = 1e-3
    decay_factor: float = 0.9
    decay_every: int = 1000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_grad_norm: float | None = None
    n_interior: int = 2000
    n_edge: int = 100
    n_initial: int = 100
    n_data: int = 200
    resample_every: int = 0
    log_every: int = 100
    checkpoint_every: int = 0
    early_stop: bool = False
    early_stop_tol: float = 1e-6
    early_stop_window: int = 2000
    # synthetic data
    v_true: float = 2.0
    solver_nx: int = 201
    snapshot_times: tuple[float, ...] = tuple(round(0.1 * k, 10) for k in range(11))
    noise_eps: float = 0.0
    noise_sigma: float = 0.0
    # observed radii
    train_times: tuple[float, ...] = (0.0, 0.25, 0.375, 0.5)
    balanced: bool = False
    radius_file: str | None = None
    data_file: str | None = None

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigurationError(f"unknown experiment {self.experiment!r}; choose from {sorted(EXPERIMENTS)}")
        self.weights = tuple(float(w) for w in self.weights)
        if len(self.weights) != 4:
            raise ConfigurationError("weights needs four entries (pde, ic, bc, data)")
        LossWeights(*self.weights)
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        if self.guess is None:
            self.guess = DEFAULT_GUESS[self.experiment]
        self.guess = tuple(float(g) for g in np.atleast_1d(self.guess))
        if not all(np.isfinite(self.guess)):
            raise ConfigurationError("initial guesses must be finite")
        PhysicalParams(self.mode, self.guess)
        for k in ("arch", "snapshot_times", "train_times"):
            setattr(self, k, tuple(getattr(self, k)))
        if self.dtype not in ("float32", "float64"):
            raise ConfigurationError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.log_every <= 0:
            raise ConfigurationError("log_every must be positive")

    @property
    def mode(self) -> str:
        return EXPERIMENTS[self.experiment][0]

    @property
    def data_mode(self) -> str:
        return EXPERIMENTS[self.experiment][1]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)


def _preset_table() -> dict[str, TrainConfig]:
    presets = {}
    table1 = {1.7: 50, 1.8: 50, 1.9: 80, 2.0: 100, 2.1: 100, 2.2: 100}
    for v, w4 in table1.items():
        presets[f"synthetic-v{v}"] = TrainConfig(SYNTHETIC_MSE, (10, 1, 1, w4), 60000, guess=(1.0,), v_true=v)
    for eps, sigma in NOISE_GRID:
        presets[f"noise-e{eps:g}-s{sigma:g}"] = TrainConfig(
            SYNTHETIC_MSE, (10, 1, 1, 100), 30000, guess=(1.0,), v_true=2.1, noise_eps=eps, noise_sigma=sigma)
    presets["real-bce"] = TrainConfig(REAL_BCE, (1, 1, 1, 5), 80000, guess=(2.0,))
    presets["spatial"] = TrainConfig(SPATIAL, (1, 1, 1, 4), 80000, guess=(1.0, 1.0),
                                     train_times=(0.0, 0.25, 0.375, 0.5, 0.625, 0.75))
    presets["v-and-a"] = TrainConfig(VA, (1, 1, 1, 5), 80000, guess=(2.0, 1.0))
    return presets


# (eps, sigma) pairs for the noise study: sigma sweep at eps = 0.5, eps sweep at sigma = 0.2
NOISE_GRID = ((0.5, 0.2), (0.5, 0.5), (0.5, 1.0), (1.0, 0.2), (5.0, 0.2))


def presets() -> dict[str, TrainConfig]:
    return _preset_table()


def preset(name: str, **overrides) -> TrainConfig:
    table = _preset_table()
    if name not in table:
        raise ConfigurationError(f"unknown preset {name!r}; available: {', '.join(table)}")
    return table[name].replace(**overrides) if overrides else table[name]


# -- config files -------------------------------------------------------------------

def _coerce(name, raw, lineno):
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    default = TrainConfig.__dataclass_fields__[name].default
    if isinstance(value, list):
        value = tuple(value)
    if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if isinstance(default, bool) and not isinstance(value, bool):
        raise ConfigurationError(f"line {lineno}: {name} expects true/false, got {raw!r}")
    return value


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    """Parse ``key = value`` lines (values in JSON syntax, ``#`` comments).

    A ``preset = name`` line selects the starting point; unknown keys are errors.
    """
    fields = TrainConfig.__dataclass_fields__
    values, start = {}, base
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key == "preset":
            start = preset(raw.strip('"'))
            continue
        if key not in fields:
            raise ConfigurationError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw, lineno)
    start = start or TrainConfig()
    try:
        return start.replace(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(str(exc)) from exc


def load_config(path) -> TrainConfig:
    return parse_config(Path(path).read_text())


def format_config(config: TrainConfig) -> str:
    return "".join(f"{k} = {json.dumps(v)}\n" for k, v in config.to_dict().items())


# -- data ---------------------------------------------------------------------------

def build_observations(config: TrainConfig) -> Observations:
    """Observation set for an experiment: file, synthetic solve (+ noise) or binary radii."""
    if config.data_file is not None:
        path = Path(config.data_file)
        if not path.exists():
            raise FileNotFoundError(f"data file {path} not found")
        return obsdata.read_observations_csv(path)
    if config.experiment == SYNTHETIC_MSE:
        scfg = solver.SolveConfig(coeffs=(config.v_true,), t_end=max(config.snapshot_times),
                                  output_times=config.snapshot_times)
        grid = solver.Grid2D(config.solver_nx, config.solver_nx)
        obs = solver.synthetic_dataset(scfg, grid, config.n_data, config.data_seed)
        if config.noise_eps > 0 and config.noise_sigma > 0:
            obs = solver.add_noise(obs, config.noise_eps, config.noise_sigma, config.noise_seed)
        return obs
    if config.radius_file is not None:
        path = Path(config.radius_file)
        if not path.exists():
            raise FileNotFoundError(f"radius file {path} not found")
        series = obsdata.read_radius_csv(path)
    else:
        series = obsdata.builtin_radius_table()
    return obsdata.make_binary_dataset(series, config.train_times, config.n_data, config.data_seed,
                                       balanced=config.balanced)


# -- records ------------------------------------------------------------------------

@dataclass
class TrainRecord:
    epoch: int
    pde: float
    ic: float
    bc: float
    data: float
    total: float
    params: tuple[float, ...]
    lr: float

    def row(self, names) -> dict:
        d = {"epoch": self.epoch, "pde": self.pde, "ic": self.ic, "bc": self.bc,
             "data": self.data, "total": self.total}
        d.update(zip(names, self.params))
        d["lr"] = self.lr
        return d


@dataclass
class TrainResult:
    net: NetworkParams
    phys: PhysicalParams
    records: list[TrainRecord]
    config: TrainConfig
    stopped_early: bool = False

    def __iter__(self):
        return iter((self.net, self.phys, self.records))


class TrainingAborted(NumericalError):
    def __init__(self, msg, checkpoint=None):
        super().__init__(msg)
        self.checkpoint = checkpoint


def _tune_allocator():
    # Keep large temporaries on the heap instead of fresh mmap pages every epoch.
    try:
        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(-3, 256 * 1024 * 1024)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 512 * 1024 * 1024)  # M_TRIM_THRESHOLD
    except (OSError, AttributeError):
        pass


def _collocation_config(config: TrainConfig) -> CollocationConfig:
    return CollocationConfig(config.n_interior, config.n_edge, config.n_initial, config.n_data)


def _resample_seed(config: TrainConfig, epoch: int) -> int:
    return config.sample_seed if not config.resample_every else hash((config.sample_seed, epoch // config.resample_every)) & 0x7FFFFFFF


def train(config: TrainConfig, out_dir=None, resume=None, stop_at: int | None = None,
          observations: Observations | None = None) -> TrainResult:
    """Run the training loop.

    ``resume`` is a checkpoint path written by an earlier run of the same config;
    ``stop_at`` ends the run early at that epoch (used to produce resumable
    checkpoints). Outputs go to ``out_dir`` when given.
    """
    out = Path(out_dir) if out_dir is not None else None
    obs = observations if observations is not None else build_observations(config)
    _tune_allocator()
    dtype = np.dtype(config.dtype)
    weights = LossWeights(*config.weights)
    ccfg = _collocation_config(config)
    names = PhysicalParams(config.mode, config.guess).names

    if resume is not None:
        ck = load_checkpoint(resume)
        extra = ck["extra"] or {}
        if extra.get("config_digest") != config.digest():
            raise ConfigurationError("checkpoint was written by a different configuration")
        master, phys, start = ck["net"].astype(np.float64), ck["phys"], ck["epoch"]
        state = optim.OptimState.from_dict(ck["optimizer"])
        records = [TrainRecord(r["epoch"], r["pde"], r["ic"], r["bc"], r["data"], r["total"],
                               tuple(r["params"]), r["lr"]) for r in extra.get("records", [])]
        history = {int(k): np.array(v) for k, v in extra.get("history", {}).items()}
    else:
        master = init_xavier(config.arch, config.init_seed, dtype=np.float64)
        phys = PhysicalParams(config.mode, config.guess)
        start, records, history = 0, [], {}
        state = optim.OptimState(master.n_params + phys.values.size, config.lr, config.beta1,
                                 config.beta2, config.eps, config.decay_factor, config.decay_every,
                                 config.clip_grad_norm)

    params = np.concatenate([master.flatten(), phys.values])
    n_net = master.n_params
    seed = _resample_seed(config, start)
    cset = physics.sample_collocation(ccfg, seed, obs)
    graph = physics.loss_graph(cset, config.mode, config.data_mode, weights)

    def unpack(p):
        return (NetworkParams.from_flat(config.arch, p[:n_net]).astype(dtype),
                PhysicalParams(config.mode, p[n_net:]))

    def checkpoint(path, epoch, p, st):
        net64 = NetworkParams.from_flat(config.arch, p[:n_net])
        extra = {"config_digest": config.digest(), "config": config.to_dict(),
                 "records": [dataclasses.asdict(r) for r in records],
                 "history": {str(k): list(v) for k, v in history.items()}}
        return save_checkpoint(path, net64, PhysicalParams(config.mode, p[n_net:]), epoch,
                               config.init_seed, st.to_dict(), extra)

    end = config.epochs if stop_at is None else min(stop_at, config.epochs)
    stopped_early = False
    last_good = (params.copy(), state)
    epoch = start
    if config.early_stop:
        history.setdefault(start, params[n_net:].copy())
    while epoch < end:
        if config.resample_every and epoch % config.resample_every == 0 and epoch != start:
            cset = physics.sample_collocation(ccfg, _resample_seed(config, epoch), obs)
            graph = physics.loss_graph(cset, config.mode, config.data_mode, weights)
        net, ph = unpack(params)
        try:
            values, grad = value_and_grad(graph, net, ph)
            new_params, new_state = optim.step(state, params, grad.flat().astype(np.float64))
        except NumericalError as exc:
            ck = None
            if out is not None:
                ck = checkpoint(out / "last_good.json", epoch, *last_good)
            raise TrainingAborted(f"epoch {epoch}: {exc}", ck) from exc
        if epoch % config.log_every == 0:
            lb = physics.LossBreakdown.combine(weights, values["pde"], values["ic"], values["bc"], values["data"])
            records.append(TrainRecord(epoch, lb.pde, lb.ic, lb.bc, lb.data, lb.total,
                                       tuple(float(x) for x in params[n_net:]), optim.current_lr(state)))
            log.debug("epoch %d total %.6g params %s", epoch, lb.total, params[n_net:])
        last_good = (params, state)
        params, state = new_params, new_state
        epoch += 1
        if config.early_stop:
            history[epoch] = params[n_net:].copy()
            old = history.pop(epoch - config.early_stop_window, None)
            if old is not None:
                change = np.abs(params[n_net:] - old) / np.maximum(np.abs(old), 1e-12)
                if np.all(change < config.early_stop_tol):
                    stopped_early = True
                    break
        if out is not None and config.checkpoint_every and epoch % config.checkpoint_every == 0:
            checkpoint(out / f"checkpoint_{epoch:07d}.json", epoch, params, state)

    net, ph = unpack(params)
    finished = epoch >= config.epochs or stopped_early
    if finished:
        lb = physics.total_loss(net, ph, cset, weights, config.data_mode)
        records.append(TrainRecord(epoch, lb.pde, lb.ic, lb.bc, lb.data, lb.total,
                                   tuple(float(x) for x in params[n_net:]), optim.current_lr(state)))
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        if not finished:
            checkpoint(out / f"checkpoint_{epoch:07d}.json", epoch, params, state)
        write_trajectory(out / "trajectory.csv", records, names, config)
        if finished:
            write_final(out / "final.json", ph, config, records, stopped_early)
            checkpoint(out / "final_checkpoint.json", epoch, params, state)
    master = NetworkParams.from_flat(config.arch, params[:n_net])
    return TrainResult(master, PhysicalParams(config.mode, params[n_net:]), records, config, stopped_early)


def metadata(config: TrainConfig) -> dict:
    return {"tool": f"tumorpinn {__version__}", "config_hash": config.digest()}


def write_trajectory(path, records, names, config: TrainConfig) -> Path:
    path = Path(path)
    cols = ["epoch", "pde", "ic", "bc", "data", "total", *names, "lr"]
    with path.open("w", newline="") as fh:
        for k, v in metadata(config).items():
            fh.write(f"# {k}: {v}\n")
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in records:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.row(names).items()})
    return path


def read_trajectory(path) -> list[dict]:
    with Path(path).open() as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(lines)]


def write_final(path, phys, config, records, stopped_early=False) -> Path:
    doc = {**metadata(config), "experiment": config.experiment, "mode": phys.mode,
           "params": phys.as_dict(), "epochs": records[-1].epoch if records else 0,
           "final_loss": dataclasses.asdict(records[-1]) if records else None,
           "stopped_early": stopped_early, "config": config.to_dict()}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))
    return Path(path)


def read_final(path) -> PhysicalParams:
    doc = json.loads(Path(path).read_text())
    return PhysicalParams(doc["mode"], list(doc["params"].values()))


def multi_start(config: TrainConfig, guesses, workers: int = 1) -> list[PhysicalParams]:
    """Independent runs that differ only in the initial physical guess."""
    guesses = [tuple(np.atleast_1d(g).astype(float)) for g in guesses]
    if not guesses:
        raise ConfigurationError("multi_start needs at least one guess")
    obs = build_observations(config)
    configs = [config.replace(guess=g) for g in guesses]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(workers) as ex:
            return [r.phys for r in ex.map(_train_one, configs, [obs] * len(configs))]
    return [train(c, observations=obs).phys for c in configs]


def _train_one(config, obs):
    return train(config, observations=obs)


# -- forward prediction ---------------------------------------------------------------

def solve_config_for(phys: PhysicalParams, times, m: int = 3) -> solver.SolveConfig:
    times = tuple(float(t) for t in times)
    if phys.mode == V_AND_A:
        return solver.SolveConfig(m, V_AND_A, (phys.values[0],), height=phys.values[1],
                                  t_end=max(times), output_times=times)
    return solver.SolveConfig(m, phys.mode, tuple(phys.values), t_end=max(times), output_times=times)


def predict_forward(phys: PhysicalParams, times, grid: solver.Grid2D | None = None,
                    threshold: float = 0.1) -> list[tuple[float, float]]:
    """Forward-solve from the patch initial condition with the inferred parameters and
    return ``(t, threshold radius)`` at each requested time."""
    grid = grid or solver.Grid2D()
    fields = solver.solve(solve_config_for(phys, times), grid)
    return [(f.t, obsdata.extract_radius(f, threshold)) for f in fields]
