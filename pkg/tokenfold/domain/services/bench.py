"""
Cache benchmark: length Ã Îµ Ã seed sweep with per-step instrumentation.

CSV headers (one row per):

- steps: ``length, eps, seed, step, t, rho, active, latent_length, ipa_calls,
  pair_updates, expected_pair_updates, projection_ops, bytes, wall_ns, cached, frame_refresh``
- runs: ``length, eps, seed, wall_s, total_pair_updates, peak_bytes,
  rho_early, rho_late, deviation, valid``
- summary: ``length, variant, eps, validity_pct, wall_s_mean``
- drift: ``length, n_chains, drift_mean, drift_std, drift_max``
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from ..decoder import FrameDecoder, reconstruction_drift
from ..exceptions import ConfigError
from ..geometry import BackboneFrames, aligned_rmsd
from ..metrics import evaluate
from ..models.config import RunConfig
from ..sampler import StepRecord, Trajectory, sample
from ..tokenizer import Codebook
from .corpus import CorpusService
from .sampling import SamplingService

logger = logging.getLogger(__name__)

STEP_COLUMNS = [
    "length", "eps", "seed", "step", "t", "rho", "active", "latent_length", "ipa_calls",
    "pair_updates", "expected_pair_updates", "projection_ops", "bytes", "wall_ns", "cached",
    "frame_refresh",
]
RUN_COLUMNS = [
    "length", "eps", "seed", "wall_s", "total_pair_updates", "peak_bytes",
    "rho_early", "rho_late", "deviation", "valid",
]
SUMMARY_COLUMNS = ["length", "variant", "eps", "validity_pct", "wall_s_mean"]
DRIFT_COLUMNS = ["length", "n_chains", "drift_mean", "drift_std", "drift_max"]

PHASE_FRACTION = 0.3
CACHE_ON_EPS = 0.05


def expected_pair_updates(record: StepRecord, latent_length: int) -> int:
    """2aL â aÂ² per cached IPA call, LÂ² per full call."""
    L, a = latent_length, record.active
    per_call = 2 * a * L - a * a if record.cached else L * L
    return record.ipa_calls * per_call


def phase_rho(traj: Trajectory, fraction: float = PHASE_FRACTION) -> Tuple[float, float]:
    rho = traj.rho
    n = max(1, int(round(fraction * len(rho))))
    return float(rho[:n].mean()), float(rho[-n:].mean())


@dataclass
class BenchResult:
    steps: pd.DataFrame
    runs: pd.DataFrame
    summary: pd.DataFrame

    def trends(self) -> Dict[str, object]:
        return bench_trends(self.runs)


def bench_trends(runs: pd.DataFrame) -> Dict[str, object]:
    """Per-length trend calls: late Ï below early Ï, and time/deviation against Îµ."""
    out: Dict[str, object] = {}
    for L, g in runs.groupby("length"):
        per_eps = g.groupby("eps").agg(wall_s=("wall_s", "mean"), deviation=("deviation", "mean")).sort_index()
        cached = g[g["eps"] > 0]
        out[int(L)] = {
            "rho_decreasing_seeds": int((cached["rho_late"] < cached["rho_early"]).groupby(cached["seed"]).all().sum()),
            "time_nonincreasing": bool(np.all(np.diff(per_eps["wall_s"].to_numpy()) <= 0)),
            "deviation_nondecreasing": bool(np.all(np.diff(per_eps["deviation"].to_numpy()) >= 0)),
        }
    return out


def drift_table(chains: List[BackboneFrames], decoder: FrameDecoder, cb: Codebook) -> pd.DataFrame:
    """Tokenize-decode round trip per chain, aligned Cα RMSD grouped by chain length."""
    rows = [{"length": len(f), "drift": reconstruction_drift(f, decoder, cb)} for f in chains]
    if not rows:
        return pd.DataFrame(columns=DRIFT_COLUMNS)
    grouped = (
        pd.DataFrame(rows)
        .groupby("length")["drift"]
        .agg(n_chains="count", drift_mean="mean", drift_std="std", drift_max="max")
        .reset_index()
    )
    grouped["drift_std"] = grouped["drift_std"].fillna(0.0)
    return grouped[DRIFT_COLUMNS]


class BenchService:

    def __init__(self, cfg: RunConfig, sampling: SamplingService, corpus: Optional[CorpusService] = None):
        self.cfg = cfg
        self.sampling = sampling
        self.corpus = corpus

    def drift_by_length(self, chains: Optional[List[BackboneFrames]] = None) -> pd.DataFrame:
        if chains is None:
            if self.corpus is None:
                raise ConfigError("Drift report needs a corpus or explicit chains.")
            chains = self.corpus.frames()
        models = self.sampling.models()
        table = drift_table(chains, models.decoder, models.codebook)
        for row in table.itertuples(index=False):
            logger.info(f"Drift L={row.length}: mean {row.drift_mean:.3f} max {row.drift_max:.3f} over {row.n_chains} chains")
        return table

    def run_cache_bench(self, lengths: Optional[List[int]] = None, eps_sweep: Optional[List[float]] = None,
                        seeds: Optional[List[int]] = None) -> BenchResult:
        bench = self.cfg.bench
        lengths = lengths or bench.lengths
        eps_sweep = sorted(set(eps_sweep or bench.eps_sweep) | {0.0})
        seeds = seeds if seeds is not None else bench.seeds
        models, sched = self.sampling.models(), self.sampling.schedule
        pool = models.codebook.pool

        step_rows: List[dict] = []
        run_rows: List[dict] = []
        for L in lengths:
            latent_length = -(-L // pool)
            for seed in seeds:
                baseline = None
                for eps in eps_sweep:
                    scfg = self.cfg.sampler.model_copy(update={"length": L, "eps_cache": eps, "seed": seed})
                    traj, _ = sample(scfg, models, sched)
                    if eps == 0.0:
                        baseline = traj.atoms
                    for i, r in enumerate(traj.records):
                        step_rows.append(
                            {
                                "length": L, "eps": eps, "seed": seed, "step": i, "t": r.t, "rho": r.rho,
                                "active": r.active, "latent_length": latent_length, "ipa_calls": r.ipa_calls,
                                "pair_updates": r.pair_updates,
                                "expected_pair_updates": expected_pair_updates(r, latent_length),
                                "projection_ops": r.projection_ops, "bytes": r.bytes, "wall_ns": r.wall_ns,
                                "cached": r.cached, "frame_refresh": r.frame_refresh,
                            }
                        )
                    early, late = phase_rho(traj)
                    run_rows.append(
                        {
                            "length": L, "eps": eps, "seed": seed, "wall_s": traj.wall_ns / 1e9,
                            "total_pair_updates": traj.total_pair_updates,
                            "peak_bytes": max((r.bytes for r in traj.records), default=0),
                            "rho_early": early, "rho_late": late,
                            "deviation": aligned_rmsd(traj.atoms.ca, baseline.ca)[0],
                            "valid": evaluate(traj.atoms).valid,
                        }
                    )
                logger.info(f"Bench L={L} seed={seed} done ({len(eps_sweep)} eps values)")

        steps = pd.DataFrame(step_rows, columns=STEP_COLUMNS)
        runs = pd.DataFrame(run_rows, columns=RUN_COLUMNS)
        mismatched = int((steps["pair_updates"] != steps["expected_pair_updates"]).sum())
        if mismatched:
            logger.warning(f"{mismatched} steps disagree with the 2aL - a^2 pair-update count")
        return BenchResult(steps=steps, runs=runs, summary=cache_summary(runs))


def cache_summary(runs: pd.DataFrame, cache_on_eps: float = CACHE_ON_EPS) -> pd.DataFrame:
    """Cache off (Îµ = 0) against cache on (Îµ = 0.05, or the largest swept Îµ)."""
    rows = []
    for L, g in runs.groupby("length"):
        swept = sorted(e for e in g["eps"].unique() if e > 0)
        on = cache_on_eps if cache_on_eps in swept else (swept[-1] if swept else 0.0)
        for variant, eps in (("cache_off", 0.0), ("cache_on", on)):
            sel = g[g["eps"] == eps]
            rows.append(
                {
                    "length": int(L), "variant": variant, "eps": eps,
                    "validity_pct": 100.0 * float(sel["valid"].mean()),
                    "wall_s_mean": float(sel["wall_s"].mean()),
                }
            )
    return pd.DataFrame(rows, columns=SUMMARY_COLUMNS)
