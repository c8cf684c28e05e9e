"""Seeded Monte Carlo experiment runner, configuration, and CSV emission.

Every trial draws its randomness from a counter-based stream keyed by
(master seed, grid-point index, trial index), so results are bit-identical
for any worker count and any execution order.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import subprocess
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import asymptotic_mse, crb, mse_terms
from .calibration import calibrated_pipeline
from .channel import PowerDelayProfile, sample_channel
from .estimator import EstimationError, build_projection, plain_pipeline
from .ofdm import OfdmConfig, conv_matrix, random_frame_symbols, synthesize_frame
from .ula import DEFAULT_SIGMA_ALPHA, ArrayGeometry, fft_direction_grid, sample_mismatch

_ESTIMATORS = ("plain", "calibrated", "both")
_PDPS = ("uniform", "exponential")
_AOA_MODES = ("random", "grid")


@dataclass(frozen=True)
class ExperimentConfig:
    """Complete description of one experiment; round-trips through INI files."""

    # [geometry]
    M: int = 64
    K: int = 4
    d_tilde: float = 0.45
    # [ofdm]
    N: int = 64
    Ncp: int = 16
    Nb: int = 4
    # [channel]
    L: int = 8
    P: int = 64
    pdp: str = "uniform"
    pdp_decay: float = 2.0
    aoa_mode: str = "random"
    # [mobility]
    fd: float = 0.4
    xi_min: float = -0.1
    xi_max: float = 0.1
    # [mismatch]
    sigma_alpha: float = DEFAULT_SIGMA_ALPHA
    # [run]
    snr_db: tuple[float, ...] = (0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0)
    trials: int = 200
    seed: int = 0
    estimator: str = "both"
    workers: int = 1
    newton_iters: int = 6
    refine_taps: int = 1
    # [crb]
    crb_draws: int = 100
    crb_max_bytes: int = 1 << 30

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.estimator not in _ESTIMATORS:
            raise ValueError(f"estimator must be one of {_ESTIMATORS}")
        if self.pdp not in _PDPS:
            raise ValueError(f"pdp must be one of {_PDPS}")
        if self.aoa_mode not in _AOA_MODES:
            raise ValueError(f"aoa_mode must be one of {_AOA_MODES}")
        if not all(np.isfinite(v) for v in self.snr_db):
            raise ValueError("snr values must be finite")
        if self.xi_max < self.xi_min:
            raise ValueError("xi_max must be >= xi_min")

    def geometry(self) -> ArrayGeometry:
        return ArrayGeometry(M=self.M, K=self.K, d_tilde=self.d_tilde)

    def ofdm(self, Nb: int | None = None) -> OfdmConfig:
        return OfdmConfig(N=self.N, Ncp=self.Ncp, Nb=self.Nb if Nb is None else Nb)

    def power_delay_profile(self) -> PowerDelayProfile:
        if self.pdp == "uniform":
            return PowerDelayProfile.uniform(self.L)
        return PowerDelayProfile.exponential(self.L, decay=self.pdp_decay)


_SECTIONS = {
    "geometry": ("M", "K", "d_tilde"),
    "ofdm": ("N", "Ncp", "Nb"),
    "channel": ("L", "P", "pdp", "pdp_decay", "aoa_mode"),
    "mobility": ("fd", "xi_min", "xi_max"),
    "mismatch": ("sigma_alpha",),
    "run": (
        "snr_db",
        "trials",
        "seed",
        "estimator",
        "workers",
        "newton_iters",
        "refine_taps",
    ),
    "crb": ("crb_draws", "crb_max_bytes"),
}
_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _format_value(name: str, value) -> str:
    if name == "snr_db":
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def _parse_value(name: str, raw: str):
    if name == "snr_db":
        return tuple(float(tok) for tok in raw.replace(",", " ").split())
    kind = _FIELD_TYPES[name]
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw.strip()


def save_config(cfg: ExperimentConfig, path: str | Path) -> None:
    parser = configparser.ConfigParser()
    parser.optionxform = str  # field names are case-sensitive
    for section, names in _SECTIONS.items():
        parser[section] = {n: _format_value(n, getattr(cfg, n)) for n in names}
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)


def load_config(path: str | Path) -> ExperimentConfig:
    """Parse an INI experiment file; unknown sections or keys are errors."""
    parser = configparser.ConfigParser()
    parser.optionxform = str
    with open(path, encoding="utf-8") as fh:
        parser.read_file(fh)
    values = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ValueError(f"unknown config section [{section}]")
        allowed = _SECTIONS[section]
        for key, raw in parser[section].items():
            if key not in allowed:
                raise ValueError(f"unknown key {key!r} in section [{section}]")
            values[key] = _parse_value(key, raw)
    return ExperimentConfig(**values)


def paper_preset(**overrides) -> ExperimentConfig:
    """The published simulation setup at desk scale (trial count aside)."""
    base = dict(
        M=64,
        K=4,
        d_tilde=0.45,
        N=64,
        Ncp=16,
        Nb=4,
        L=8,
        P=64,
        pdp="uniform",
        fd=0.4,
        xi_min=-0.1,
        xi_max=0.1,
        sigma_alpha=DEFAULT_SIGMA_ALPHA,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


def trial_rng(seed: int, point: int, trial: int) -> np.random.Generator:
    """Counter-based per-trial stream; independent of scheduling order."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(point, trial))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class MetricRow:
    snr_db: float
    estimator: str
    K: int
    M: int
    d_tilde: float
    metric: str
    value: float
    n: int | None = None
    ci95_lo: float | None = None
    ci95_hi: float | None = None


@dataclass
class MetricTable:
    """Flat metric rows; one CSV line per (grid point, metric)."""

    rows: list[MetricRow] = field(default_factory=list)

    CSV_HEADER = "snr_db,estimator,K,M,d_tilde,metric,value,n,ci95_lo,ci95_hi"

    def add(self, **kw) -> None:
        self.rows.append(MetricRow(**kw))

    def sorted_rows(self) -> list[MetricRow]:
        return sorted(self.rows, key=lambda r: (r.metric, r.estimator, r.snr_db, r.K, r.M))

    def to_csv(self) -> str:
        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, float):
                return repr(float(v))
            return str(v)

        lines = [self.CSV_HEADER]
        for r in self.sorted_rows():
            lines.append(
                ",".join(
                    fmt(v)
                    for v in (
                        float(r.snr_db),
                        r.estimator,
                        r.K,
                        r.M,
                        float(r.d_tilde),
                        r.metric,
                        float(r.value),
                        r.n,
                        r.ci95_lo,
                        r.ci95_hi,
                    )
                )
            )
        return "\n".join(lines) + "\n"

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8", newline="\n")


def _git_revision() -> str | None:
    try:
        out = subprocess.run(
            ["git", "rev-parse", "HEAD"],
            capture_output=True,
            text=True,
            timeout=10,
            check=False,
        )
    except OSError:
        return None
    rev = out.stdout.strip()
    return rev if out.returncode == 0 and rev else None


def write_manifest(cfg: ExperimentConfig, command: str, path: str | Path) -> None:
    """Deterministic JSON record of what produced the neighboring CSV."""
    cfg_dict = asdict(cfg)
    cfg_json = json.dumps(cfg_dict, sort_keys=True)
    manifest = {
        "command": command,
        "seed": cfg.seed,
        "config": cfg_dict,
        "config_sha256": hashlib.sha256(cfg_json.encode()).hexdigest(),
        "git_revision": _git_revision(),
        "package_version": __version__,
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _wanted(cfg: ExperimentConfig) -> tuple[str, ...]:
    return ("plain", "calibrated") if cfg.estimator == "both" else (cfg.estimator,)


def _draw_trial(cfg: ExperimentConfig, rng: np.random.Generator, ofdm_cfg: OfdmConfig, sigma_n2):
    """Common per-trial randomness: offsets, mismatch, channel, frame."""
    geom = cfg.geometry()
    xi = rng.uniform(cfg.xi_min, cfg.xi_max)
    if cfg.K == 1:
        alpha = np.ones(1, dtype=complex)
    else:
        alpha = sample_mismatch(cfg.K, cfg.sigma_alpha, rng)
    chan = sample_channel(cfg.power_delay_profile(), cfg.P, rng, aoa_mode=cfg.aoa_mode)
    symbols = random_frame_symbols(ofdm_cfg, rng)
    frames = synthesize_frame(geom, alpha, chan, cfg.fd, xi, symbols, sigma_n2, rng, ofdm_cfg)
    cache = build_projection(conv_matrix(symbols[0], cfg.L))
    return xi, alpha, symbols, frames, cache


def _mse_trial(cfg, point, trial, sigma_n2, grid, ofdm_cfg):
    rng = trial_rng(cfg.seed, point, trial)
    xi, _, _, frames, cache = _draw_trial(cfg, rng, ofdm_cfg, sigma_n2)
    geom = cfg.geometry()
    out = {}
    for name in _wanted(cfg):
        try:
            if name == "plain":
                res = plain_pipeline(
                    frames, grid, geom, cache, ofdm_cfg, max_iters=cfg.newton_iters
                )
            else:
                res = calibrated_pipeline(
                    frames,
                    grid,
                    geom,
                    cache,
                    ofdm_cfg,
                    coarse_iters=cfg.newton_iters,
                    taps=cfg.refine_taps,
                )
            est = res.estimate
            out[name] = ((est.fd_hat - cfg.fd) ** 2, (est.xi_hat - xi) ** 2)
        except EstimationError:
            out[name] = None
    return out


def _run_trials(cfg: ExperimentConfig, worker) -> list:
    """Run ``worker(trial_index)`` for every trial, deterministically ordered."""
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(worker, range(cfg.trials)))
    return [worker(t) for t in range(cfg.trials)]


def _mean_ci(values: np.ndarray) -> tuple[float, float, float]:
    mean = float(values.mean())
    if values.size < 2:
        return mean, mean, mean
    half = 1.96 * float(values.std(ddof=1)) / float(np.sqrt(values.size))
    return mean, float(mean - half), float(mean + half)


def run_mse_sweep(cfg: ExperimentConfig) -> MetricTable:
    """Offset-estimation MSE versus SNR for the configured estimators.

    Failed trials (degenerate geometry, numerical breakdown) are excluded
    from the averages and reported under the ``failures`` metric; successes
    plus failures always add up to the trial count.
    """
    geom = cfg.geometry()
    grid = fft_direction_grid(geom)
    ofdm_cfg = cfg.ofdm(Nb=1)  # estimation uses the pilot block only
    table = MetricTable()
    for point, snr in enumerate(cfg.snr_db):
        sigma_n2 = 10.0 ** (-snr / 10.0)
        results = _run_trials(cfg, lambda t: _mse_trial(cfg, point, t, sigma_n2, grid, ofdm_cfg))
        for name in _wanted(cfg):
            oks = [r[name] for r in results if r[name] is not None]
            n_fail = sum(1 for r in results if r[name] is None)
            common = dict(snr_db=snr, estimator=name, K=cfg.K, M=cfg.M, d_tilde=cfg.d_tilde)
            if oks:
                errs = np.asarray(oks)
                for col, metric in ((0, "mse_fd"), (1, "mse_xi")):
                    mean, lo, hi = _mean_ci(errs[:, col])
                    table.add(metric=metric, value=mean, n=len(oks), ci95_lo=lo, ci95_hi=hi, **common)
            table.add(metric="failures", value=float(n_fail), n=cfg.trials, **common)
    return table


def _ser_trial(cfg, point, trial, sigma_n2, grid, ofdm_cfg):
    rng = trial_rng(cfg.seed, point, trial)
    xi, _, symbols, frames, cache = _draw_trial(cfg, rng, ofdm_cfg, sigma_n2)
    geom = cfg.geometry()
    tx_data = symbols[1:]
    out = {}
    for name in _wanted(cfg):
        for ideal in (False, True):
            label = f"ideal-{name}" if ideal else name
            true_cfo = (cfg.fd, xi) if ideal else None
            try:
                if name == "plain":
                    res = plain_pipeline(
                        frames,
                        grid,
                        geom,
                        cache,
                        ofdm_cfg,
                        tx_data=tx_data,
                        max_iters=cfg.newton_iters,
                        true_cfo=true_cfo,
                    )
                else:
                    res = calibrated_pipeline(
                        frames,
                        grid,
                        geom,
                        cache,
                        ofdm_cfg,
                        tx_data=tx_data,
                        coarse_iters=cfg.newton_iters,
                        taps=cfg.refine_taps,
                        true_cfo=true_cfo,
                    )
                out[label] = (res.detection.errors, res.detection.total)
            except EstimationError:
                # Unrecovered frame: every data symbol counts as an error.
                out[label] = ((ofdm_cfg.Nb - 1) * ofdm_cfg.N, (ofdm_cfg.Nb - 1) * ofdm_cfg.N)
    return out


def run_ser_sweep(cfg: ExperimentConfig) -> MetricTable:
    """Data-detection SER versus SNR, with genie-CFO benchmark rows.

    The ``ideal-*`` rows rerun the same frames with the true offsets handed
    to the receiver.  Erasures and failed frames count as symbol errors.
    """
    if cfg.Nb < 2:
        raise ValueError("SER sweep needs Nb >= 2 (data blocks present)")
    geom = cfg.geometry()
    grid = fft_direction_grid(geom)
    ofdm_cfg = cfg.ofdm()
    table = MetricTable()
    labels = [p for name in _wanted(cfg) for p in (name, f"ideal-{name}")]
    for point, snr in enumerate(cfg.snr_db):
        sigma_n2 = 10.0 ** (-snr / 10.0)
        results = _run_trials(cfg, lambda t: _ser_trial(cfg, point, t, sigma_n2, grid, ofdm_cfg))
        for label in labels:
            errs = sum(r[label][0] for r in results)
            total = sum(r[label][1] for r in results)
            ser = errs / total
            half = float(1.96 * np.sqrt(max(ser * (1.0 - ser), 0.0) / total))
            table.add(
                snr_db=snr,
                estimator=label,
                K=cfg.K,
                M=cfg.M,
                d_tilde=cfg.d_tilde,
                metric="ser",
                value=float(ser),
                n=total,
                ci95_lo=max(ser - half, 0.0),
                ci95_hi=min(ser + half, 1.0),
            )
    return table


def run_analytic(cfg: ExperimentConfig, table: MetricTable | None = None) -> MetricTable:
    """Analytical MSE decomposition and large-array asymptote on the SNR grid.

    The floor term reported here is a lower bound of the real MSE floor.
    Noise terms scale linearly with the noise power, so the quadrature runs
    once per mismatch draw and is rescaled across the grid.
    """
    geom = cfg.geometry()
    table = table if table is not None else MetricTable()
    n_alpha = 1 if cfg.K == 1 else max(1, min(cfg.crb_draws, 20))
    breakdowns = []
    for draw in range(n_alpha):
        rng = trial_rng(cfg.seed, 20_000, draw)
        alpha = (
            np.ones(1, dtype=complex)
            if cfg.K == 1
            else sample_mismatch(cfg.K, cfg.sigma_alpha, rng)
        )
        breakdowns.append(mse_terms(cfg.fd, 1.0, geom, alpha, cfg.N))
    mse0_fd = float(np.mean([b.mse0_fd for b in breakdowns]))
    mse0_xi = float(np.mean([b.mse0_xi for b in breakdowns]))
    msen_fd1 = float(np.mean([b.msen_fd for b in breakdowns]))
    msen_xi1 = float(np.mean([b.msen_xi for b in breakdowns]))
    for snr in cfg.snr_db:
        sigma_n2 = 10.0 ** (-snr / 10.0)
        common = dict(snr_db=snr, estimator="analytic", K=cfg.K, M=cfg.M, d_tilde=cfg.d_tilde)
        table.add(metric="analytic_mse_fd", value=mse0_fd + sigma_n2 * msen_fd1, n=n_alpha, **common)
        table.add(metric="analytic_mse_xi", value=mse0_xi + sigma_n2 * msen_xi1, n=n_alpha, **common)
        table.add(metric="analytic_floor_fd", value=mse0_fd, n=n_alpha, **common)
        table.add(metric="analytic_floor_xi", value=mse0_xi, n=n_alpha, **common)
        asym_fd, asym_xi = asymptotic_mse(cfg.M, cfg.N, sigma_n2)
        table.add(metric="asymptotic_mse_fd", value=asym_fd, **common)
        table.add(metric="asymptotic_mse_xi", value=asym_xi, **common)
    return table


def run_bounds(cfg: ExperimentConfig) -> MetricTable:
    """Averaged Cramer-Rao bounds plus the analytical curves on the SNR grid.

    Per draw the oscillator offset, mismatch vector, and pilot are sampled
    exactly as in the simulation sweeps; bounds are averaged over
    ``crb_draws`` draws.
    """
    geom = cfg.geometry()
    pdp = cfg.power_delay_profile()
    table = MetricTable()
    for point, snr in enumerate(cfg.snr_db):
        sigma_n2 = 10.0 ** (-snr / 10.0)
        vals = []
        degenerate = 0
        for draw in range(cfg.crb_draws):
            rng = trial_rng(cfg.seed, 10_000 + point, draw)
            xi = rng.uniform(cfg.xi_min, cfg.xi_max)
            alpha = None if cfg.K == 1 else sample_mismatch(cfg.K, cfg.sigma_alpha, rng)
            pilot = random_frame_symbols(cfg.ofdm(Nb=1), rng)[0]
            B = conv_matrix(pilot, cfg.L)
            res = crb(cfg.fd, xi, alpha, pdp, B, geom, sigma_n2, max_bytes=cfg.crb_max_bytes)
            vals.append((res.crb_fd, res.crb_xi))
            degenerate += int(res.degenerate)
        vals = np.asarray(vals)
        common = dict(snr_db=snr, estimator="bound", K=cfg.K, M=cfg.M, d_tilde=cfg.d_tilde)
        for col, metric in ((0, "crb_fd"), (1, "crb_xi")):
            mean, lo, hi = _mean_ci(vals[:, col])
            table.add(metric=metric, value=mean, n=cfg.crb_draws, ci95_lo=lo, ci95_hi=hi, **common)
        table.add(metric="crb_degenerate", value=float(degenerate), n=cfg.crb_draws, **common)
    return run_analytic(cfg, table)
