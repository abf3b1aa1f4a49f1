# Module for Monte Carlo link simulation: SNR sweeps of BER/BLER with deterministic seeding.
#
# Every frame (one SISO frame of r SCMA blocks) draws its randomness from its own generator
#   numpy.random.SeedSequence(entropy=seed, spawn_key=(snr_index, frame_index))
# so results do not depend on how SNR points are scheduled across worker processes.
#
# SNR is the per-user energy per active resource element over the noise variance:
#   noise_var = d_v / (N * 10^(snr_db / 10))

import logging
import math
import multiprocessing as mp
import os
import time
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import yaml

from modules.channel import MODELS, RAYLEIGH_IID_BLOCK, sample_channel, transmit
from modules.codebook import build_factor_graph, default_codebook, encode, index_to_bits, load_codebook
from modules.epa import EpaOptions
from modules.receiver import DETECTORS, PASSTHROUGH, SISO_PLUGINS, make_siso, run_receiver
from modules.reference import MpaOptions
from modules.util import progressBar

# Draw a progress bar over the SNR points of a sequential sweep
show_progress = False

CSV_COLUMNS = ['snr_db', 'blocks', 'bits', 'bit_errors', 'block_errors', 'ber', 'bler', 'mean_iters', 'seconds']


# Custom exception class for invalid run configurations
class ConfigException(RuntimeError): pass


# Unknown names in a run configuration; the CLI reports these as usage errors
class UsageException(ConfigException): pass


def _section(data: dict, name: str, allowed: tuple) -> dict:
    section = data.get(name) or {}
    if not isinstance(section, dict):
        raise ConfigException(f"section '{name}' must be a mapping")
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigException(f"section '{name}' has unknown keys {unknown}")
    return section


def _integer(value, name: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ConfigException(f"{name} must be an integer >= {minimum}, got {value!r}")
    return value


@dataclass
class SimConfig:
    """Everything needed to reproduce one sweep"""
    snr_db: list
    codebook_file: str = None
    energy_tolerance: float = None
    generate: dict = field(default_factory=lambda: {'k': 6, 'n': 4, 'm': 4, 'dv': 2})
    channel_model: str = RAYLEIGH_IID_BLOCK
    n_rx: int = 1
    detector: str = 'epa'
    n_in: int = 3
    n_out: int = 1
    damping: float = 1.0
    siso: str = PASSTHROUGH
    repetition: int = 2
    per_antenna: bool = False
    tol: float = 0.0
    max_blocks: int = 1000
    max_bit_errors: int = 200
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.detector not in DETECTORS:
            raise UsageException(f"unknown detector '{self.detector}', expected one of {tuple(DETECTORS)}")
        if self.channel_model not in MODELS:
            raise UsageException(f"unknown channel model '{self.channel_model}', expected one of {MODELS}")
        if self.siso not in SISO_PLUGINS:
            raise UsageException(f"unknown SISO plugin '{self.siso}', expected one of {SISO_PLUGINS}")

        if not isinstance(self.snr_db, (list, tuple)) or not self.snr_db:
            raise ConfigException("snr_db must be a non-empty list")
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v) for v in self.snr_db):
            raise ConfigException(f"snr_db entries must be finite numbers, got {self.snr_db}")
        self.snr_db = [float(v) for v in self.snr_db]
        for name in ('n_rx', 'n_in', 'n_out', 'repetition', 'max_blocks', 'max_bit_errors', 'workers'):
            _integer(getattr(self, name), name)
        _integer(self.seed, 'seed', 0)
        if not 0.0 < self.damping <= 1.0:
            raise ConfigException(f"damping must lie in (0, 1], got {self.damping}")
        if self.tol < 0:
            raise ConfigException(f"tol must be >= 0, got {self.tol}")
        if self.codebook_file is None:
            missing = sorted({'k', 'n', 'm', 'dv'} - set(self.generate))
            if missing:
                raise ConfigException(f"codebook generate parameters missing {missing}")

    # Build from the nested YAML/JSON layout (codebook/channel/receiver/sweep sections)
    @staticmethod
    def from_dict(data: dict, base_dir: str = None):
        if not isinstance(data, dict):
            raise ConfigException("configuration must be a mapping")
        unknown = sorted(set(data) - {'codebook', 'channel', 'receiver', 'sweep'})
        if unknown:
            raise ConfigException(f"unknown configuration sections {unknown}")

        codebook = _section(data, 'codebook', ('file', 'generate', 'energy_tolerance'))
        channel = _section(data, 'channel', ('model', 'n_rx'))
        receiver = _section(data, 'receiver', ('detector', 'n_in', 'n_out', 'damping', 'siso', 'repetition',
                                               'per_antenna', 'tol'))
        sweep = _section(data, 'sweep', ('snr_db', 'max_blocks', 'max_bit_errors', 'seed', 'workers'))
        if 'snr_db' not in sweep:
            raise ConfigException("sweep.snr_db is required")

        kwargs = {'snr_db': sweep['snr_db']}
        if 'file' in codebook:
            path = codebook['file']
            kwargs['codebook_file'] = os.path.join(base_dir, path) if base_dir and not os.path.isabs(path) else path
        elif 'generate' in codebook:
            kwargs['generate'] = dict(codebook['generate'])
        if 'energy_tolerance' in codebook:
            kwargs['energy_tolerance'] = codebook['energy_tolerance']
        if 'model' in channel:
            kwargs['channel_model'] = channel['model']
        if 'n_rx' in channel:
            kwargs['n_rx'] = channel['n_rx']
        for key in ('detector', 'n_in', 'n_out', 'damping', 'siso', 'repetition', 'per_antenna', 'tol'):
            if key in receiver:
                kwargs[key] = receiver[key]
        for key in ('max_blocks', 'max_bit_errors', 'seed', 'workers'):
            if key in sweep:
                kwargs[key] = sweep[key]
        try:
            return SimConfig(**kwargs)
        except TypeError as err:
            raise ConfigException(f"invalid configuration value: {err}")

    def make_codebook(self):
        if self.codebook_file:
            return load_codebook(self.codebook_file)
        g = self.generate
        return default_codebook(int(g['k']), int(g['n']), int(g['m']), int(g['dv']))

    def detector_options(self):
        if self.detector == 'mpa':
            return MpaOptions(n_iter=self.n_in, per_antenna=self.per_antenna, tol=self.tol)
        return EpaOptions(n_in=self.n_in, damping=self.damping, tol=self.tol)


# Read a YAML (or JSON) run configuration.  Relative codebook paths are taken relative to the file.
def load_config(path) -> SimConfig:
    Loader = getattr(yaml, 'CSafeLoader', yaml.SafeLoader)
    try:
        with open(path, 'r') as stream:
            data = yaml.load(stream, Loader=Loader)
    except OSError as err:
        raise ConfigException(f"unable to read {path}: {err}")
    except yaml.YAMLError as err:
        raise ConfigException(f"{path} is not valid YAML/JSON: {err}")
    return SimConfig.from_dict(data, os.path.dirname(os.path.abspath(path)))


def snr_to_noise_var(snr_db: float, d_v: float, N: int) -> float:
    return d_v / (N * 10 ** (snr_db / 10.0))


# se = cr * log2(M) / N bits per resource element and user
def spectral_efficiency(code_rate: float, M: int, N: int) -> float:
    return code_rate * math.log2(M) / N


@dataclass
class PointResult:
    """Counts of one SNR point; a block here is one SISO frame"""
    snr_db: float
    blocks: int = 0
    bits: int = 0
    bit_errors: int = 0
    block_errors: int = 0
    mean_iters: float = 0.0
    seconds: float = 0.0

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits if self.bits else 0.0

    @property
    def bler(self) -> float:
        return self.block_errors / self.blocks if self.blocks else 0.0


@dataclass
class SimResult:
    points: list = field(default_factory=list)
    spectral_efficiency: float = None

    def to_frame(self) -> pd.DataFrame:
        rows = [[p.snr_db, p.blocks, p.bits, p.bit_errors, p.block_errors, p.ber, p.bler, p.mean_iters, p.seconds]
                for p in self.points]
        return pd.DataFrame(rows, columns=CSV_COLUMNS)


# Simulate one frame: random information bits per user, r repeated blocks, the outer receiver
# loop, and the comparison with the truth.  Returns (bit errors, detector iterations).
def simulate_frame(cfg: SimConfig, cb, fg, siso, options, noise_var: float, rng: np.random.Generator) -> tuple:
    indexes = rng.integers(0, cb.M, size=cb.K)
    bits = np.array([index_to_bits(int(m), cb.J) for m in indexes])
    x = np.array([encode(bits[k], k, cb) for k in range(cb.K)])

    chans, ys = [], []
    for _ in range(siso.r):
        chan = sample_channel(cfg.channel_model, (cfg.n_rx, cb.K, cb.N), noise_var, rng)
        chans.append(chan)
        ys.append(transmit(x, chan, rng))

    decisions, history = run_receiver(ys, chans, cb, fg, cfg.detector, siso, cfg.n_out, options)
    return int(np.count_nonzero(decisions != bits)), sum(frame.iterations for frame in history)


# Simulate every frame of one SNR point until max_blocks or max_bit_errors is reached
def simulate_point(job: tuple) -> PointResult:
    cfg, cb, fg, index = job
    start = time.perf_counter()
    snr_db = cfg.snr_db[index]
    noise_var = snr_to_noise_var(snr_db, float(np.mean(fg.d_v)), cb.N)
    siso = make_siso(cfg.siso, cfg.repetition)
    options = cfg.detector_options()

    point = PointResult(snr_db)
    iterations = 0
    for frame in range(cfg.max_blocks):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(index, frame)))
        errors, used = simulate_frame(cfg, cb, fg, siso, options, noise_var, rng)
        point.blocks += 1
        point.bits += cb.K * cb.J
        point.bit_errors += errors
        point.block_errors += errors > 0
        iterations += used
        if point.bit_errors >= cfg.max_bit_errors:
            break

    point.mean_iters = iterations / (point.blocks * siso.r * cfg.n_out)
    point.seconds = time.perf_counter() - start
    return point


def run_sweep(cfg: SimConfig) -> SimResult:
    cb = cfg.make_codebook()
    fg = build_factor_graph(cb)
    siso = make_siso(cfg.siso, cfg.repetition)
    se = spectral_efficiency(siso.rate, cb.M, cb.N)
    logging.info(f"Sweep over {len(cfg.snr_db)} SNR points: {cfg.detector}, {cfg.channel_model}, N_r={cfg.n_rx}, "
                 f"siso={cfg.siso}, se={se:.4g} bit/RE/user")

    jobs = [(cfg, cb, fg, i) for i in range(len(cfg.snr_db))]
    if cfg.workers > 1:
        with mp.Pool(cfg.workers) as pool:
            points = pool.map(simulate_point, jobs)
    else:
        points = []
        for job in progressBar(jobs, prefix='SNR', suffix=lambda job: f'{cfg.snr_db[job[3]]} dB',
                               enabled=show_progress):
            points.append(simulate_point(job))

    for p in points:
        logging.info(f"SNR {p.snr_db} dB: {p.blocks} blocks, {p.bit_errors} bit errors, BER {p.ber:.3e}, "
                     f"BLER {p.bler:.3e}, {p.mean_iters:.2f} iterations, {p.seconds:.1f} s")
    return SimResult(points, se)


# Exact zero prints as "0"; other floats use the shortest round-tripping repr
def _format_number(value) -> str:
    if value == 0:
        return '0'
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def emit_csv(result: SimResult, path):
    frame = result.to_frame()
    for column in CSV_COLUMNS:
        frame[column] = [_format_number(v) for v in frame[column]]
    frame.to_csv(path, index=False, columns=CSV_COLUMNS)


def read_csv(path) -> SimResult:
    frame = pd.read_csv(path, float_precision='round_trip')
    if list(frame.columns) != CSV_COLUMNS:
        raise ConfigException(f"{path} does not have the columns {CSV_COLUMNS}")
    points = [PointResult(float(row.snr_db), int(row.blocks), int(row.bits), int(row.bit_errors),
                          int(row.block_errors), float(row.mean_iters), float(row.seconds))
              for row in frame.itertuples(index=False)]
    return SimResult(points)
