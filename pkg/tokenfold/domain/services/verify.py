"""
Invariant suite behind ``tokenfold verify``.

Every check is registered under a dotted id, seeded independently, and returns
a ``CheckResult`` with the measured value. Checks that need trained models use
the model container when it exists and small freshly built fixtures otherwise.
"""

import asyncio
import logging
import threading
import zlib
from typing import Callable, Dict, List, Optional

import numpy as np
import torch
from scipy.integrate import quad
from scipy.stats import chisquare

from ... import CheckRegistry, CheckResult
from ..decoder import FrameDecoder, assemble_frames
from ..diffusion import ScheduleKind, forward_noise_latent, make_schedule
from ..dit import LatentDiT, TrainingBatch, cfg_predict, loss_gradients, training_loss
from ..exceptions import InvariantViolation
from ..geometry import (
    BackboneFrames,
    aligned_rmsd,
    atoms_from_frames,
    compose,
    frame_errors,
    frames_from_atoms,
    left_compose,
    random_rigid,
    relative_frame,
    relative_frames,
)
from ..igso3 import angle_marginal, auto_l_max, default_sigma_grid, sample_angles
from ..ipa import (
    ActivityMask,
    InvariantPointAttention,
    compute_mask,
    frames_to_tensors,
    ipa_cached,
    ipa_full,
)
from ..models.config import DiTConfig, IPAConfig, RunConfig
from ..sampler import SamplerModels, sample, sample_reference
from ..synthetic import build_from_spec, make_fold_spec
from ..tokenizer import Codebook, featurize, fit_codebook, tokenize_with_margin

logger = logging.getLogger(__name__)

FD_STEP = 1e-5
FD_REL_TOL = 1e-4
ENVELOPE_FACTOR = 3.0
TOKEN_MARGIN = 1e-6
HISTOGRAM_BINS = 50
HISTOGRAM_SAMPLES = 100_000


def _result(check_id: str, passed: bool, measured, detail: str = "") -> CheckResult:
    if isinstance(measured, (np.floating, np.integer)):
        measured = measured.item()
    return CheckResult(id=check_id, passed=bool(passed), measured=measured, detail=detail)


def random_backbone(rng: np.random.Generator, length: int, jitter: float = 0.3):
    spec = make_fold_spec(int(rng.integers(3)), length, rng, jitter)
    return build_from_spec(spec, rng)


def gradient_errors(batch: TrainingBatch, model: LatentDiT, sched, step: float = FD_STEP) -> Dict[str, float]:
    """
    Relative error between the analytic gradient and central differences,
    per parameter group, over every coordinate of the group.
    """
    analytic = loss_gradients(batch, model, sched, drop_labels=False)
    params = dict(model.named_parameters())
    errors: Dict[str, float] = {}
    for name, grad in analytic.items():
        flat = params[name].data.view(-1)
        fd = np.empty(flat.numel())
        for i in range(flat.numel()):
            orig = float(flat[i])
            with torch.no_grad():
                flat[i] = orig + step
                up = float(training_loss(batch, model, sched, drop_labels=False))
                flat[i] = orig - step
                down = float(training_loss(batch, model, sched, drop_labels=False))
                flat[i] = orig
            fd[i] = (up - down) / (2 * step)
        a = grad.detach().reshape(-1).cpu().numpy()
        scale = max(np.linalg.norm(a), np.linalg.norm(fd), 1e-7)
        errors[name] = float(np.linalg.norm(a - fd) / scale)
    return errors



class VerifyFixtures:
    """Fallback models built on first use; shared by concurrently running checks."""

    def __init__(self, cfg: RunConfig, store):
        self.cfg = cfg
        self.store = store
        self._lock = threading.Lock()
        self._fallback: Optional[SamplerModels] = None

    def stored(self) -> Optional[SamplerModels]:
        if self.store is None or not self.store.exists():
            return None
        bundle = self.store.load()
        return SamplerModels(dit=bundle.dit, decoder=bundle.decoder, codebook=bundle.codebook)

    def fallback(self) -> SamplerModels:
        with self._lock:
            if self._fallback is None:
                self._fallback = self._build_fallback()
            return self._fallback

    def _build_fallback(self) -> SamplerModels:
        seed = self.cfg.seed
        rng = np.random.default_rng(seed)
        features = [featurize(frames_from_atoms(random_backbone(rng, 64)), 2) for _ in range(12)]
        cb = fit_codebook(features, K=16, seed=seed, d=16)
        torch.manual_seed(seed)
        decoder = FrameDecoder(cb.d, hidden=32)
        dit_cfg = DiTConfig(
            n_layers=2, d_model=32, n_heads=4, d_ff=64, n_classes=self.cfg.dit.n_classes,
            T=self.cfg.schedule.T, max_len=max(self.cfg.sampler.length, 64),
        )
        ipa_cfg = IPAConfig(n_heads=2, d_head=8, n_query_points=2, n_value_points=2)
        dit = LatentDiT(dit_cfg, cb.d, ipa_cfg).eval()
        logger.info("Built fallback verify fixtures (untrained, K=16, d=16)")
        return SamplerModels(dit=dit, decoder=decoder, codebook=cb)

    def codebook(self) -> Codebook:
        stored = self.stored()
        if stored is not None and stored.codebook is not None:
            return stored.codebook
        return self.fallback().codebook

    def models(self) -> SamplerModels:
        stored = self.stored()
        if stored is not None and None not in (stored.dit, stored.decoder, stored.codebook):
            return stored
        return self.fallback()


class VerifyService:

    def __init__(self, cfg: RunConfig, store, igso3_cache):
        self.cfg = cfg
        self.igso3_cache = igso3_cache
        self.fixtures = VerifyFixtures(cfg, store)
        self.registry = CheckRegistry()
        for check_id, fn in self._checks():
            self.registry.register(check_id, self._seeded(check_id, fn))

    def _seeded(self, check_id: str, fn: Callable[[np.random.Generator], CheckResult]):
        seed = (zlib.crc32(check_id.encode()) ^ self.cfg.seed) & 0xFFFFFFFF

        def run() -> CheckResult:
            return fn(np.random.default_rng(seed))

        return run

    def _checks(self):
        return [
            ("geometry.associativity", self.geometry_associativity),
            ("geometry.relative_invariance", self.geometry_relative_invariance),
            ("geometry.frames_equivariance", self.geometry_frames_equivariance),
            ("geometry.atoms_roundtrip", self.geometry_atoms_roundtrip),
            ("tokenizer.invariance", self.tokenizer_invariance),
            ("decoder.assembly_roundtrip", self.decoder_assembly_roundtrip),
            ("decoder.reference_equivariance", self.decoder_reference_equivariance),
            ("diffusion.schedule", self.diffusion_schedule),
            ("diffusion.forward_moments", self.diffusion_forward_moments),
            ("diffusion.igso3_normalization", self.igso3_normalization),
            ("diffusion.igso3_histogram", self.igso3_histogram),
            ("ipa.invariance", self.ipa_invariance),
            ("ipa.error_bound", self.ipa_error_bound),
            ("ipa.pair_counts", self.ipa_pair_counts),
            ("dit.gradient_check", self.dit_gradient_check),
            ("dit.cfg_identity", self.dit_cfg_identity),
            ("sampler.cache_exactness", self.sampler_cache_exactness),
        ]

    @property
    def ids(self) -> List[str]:
        return self.registry.ids

    def run(self, serial: bool = False) -> List[CheckResult]:
        results = self.registry.run_serial() if serial else asyncio.run(self.registry.run_all())
        failed = [r["id"] for r in results if not r.passed]
        logger.info(f"Verify: {len(results) - len(failed)}/{len(results)} checks passed")
        return results

    def require(self, check_id: str) -> CheckResult:
        """Run one check and raise ``InvariantViolation`` if it fails."""
        result = self.registry.get(check_id)()
        if not result.passed:
            raise InvariantViolation(check_id, f"measured={result['measured']} {result['detail']}")
        return result

    # geometry

    def geometry_associativity(self, rng) -> CheckResult:
        worst = 0.0
        x = rng.normal(size=(10, 3))
        for _ in range(100):
            a, b, c = (random_rigid(rng) for _ in range(3))
            left, right = compose(compose(a, b), c), compose(a, compose(b, c))
            worst = max(worst, float(np.abs(left.apply(x) - right.apply(x)).max()))
        return _result("geometry.associativity", worst < 1e-10, worst)

    def geometry_relative_invariance(self, rng) -> CheckResult:
        worst = 0.0
        for _ in range(100):
            a, b, g = (random_rigid(rng) for _ in range(3))
            r1 = relative_frame(a, b)
            r2 = relative_frame(compose(g, a), compose(g, b))
            worst = max(worst, float(np.abs(r1.rot.m - r2.rot.m).max()), float(np.abs(r1.trans - r2.trans).max()))
        return _result("geometry.relative_invariance", worst < 1e-10, worst)

    def geometry_frames_equivariance(self, rng) -> CheckResult:
        worst = 0.0
        for _ in range(20):
            bb = random_backbone(rng, 32)
            g = random_rigid(rng)
            moved = frames_from_atoms(bb.transformed(g))
            expected = left_compose(g, frames_from_atoms(bb))
            worst = max(worst, *frame_errors(moved, expected))
        return _result("geometry.frames_equivariance", worst < 1e-9, worst)

    def geometry_atoms_roundtrip(self, rng) -> CheckResult:
        worst = 0.0
        for _ in range(20):
            frames = BackboneFrames.from_frames([random_rigid(rng) for _ in range(16)])
            back = frames_from_atoms(atoms_from_frames(frames))
            worst = max(worst, *frame_errors(back, frames))
        return _result("geometry.atoms_roundtrip", worst < 1e-6, worst)

    # tokenizer

    def tokenizer_invariance(self, rng) -> CheckResult:
        cb = self.fixtures.codebook()
        feature_err, violations, compared = 0.0, 0, 0
        for length in (8, 64):
            for _ in range(50):
                frames = frames_from_atoms(random_backbone(rng, length))
                base = featurize(frames, cb.window)
                tokens, gap = tokenize_with_margin(frames, cb)
                for _ in range(100):
                    moved = left_compose(random_rigid(rng), frames)
                    feature_err = max(feature_err, float(np.abs(featurize(moved, cb.window) - base).max()))
                    t2, gap2 = tokenize_with_margin(moved, cb)
                    keep = (gap > TOKEN_MARGIN) & (gap2 > TOKEN_MARGIN)
                    compared += int(keep.sum())
                    violations += int((tokens.tokens[keep] != t2.tokens[keep]).sum())
        passed = feature_err < 1e-9 and violations == 0
        return _result(
            "tokenizer.invariance", passed, feature_err,
            f"token_violations={violations} compared={compared} K={cb.K}",
        )

    # decoder

    def decoder_assembly_roundtrip(self, rng) -> CheckResult:
        worst = 0.0
        for length in (8, 64, 128):
            frames = frames_from_atoms(random_backbone(rng, length))
            rebuilt = assemble_frames(relative_frames(frames), frames[0])
            worst = max(worst, aligned_rmsd(rebuilt.trans, frames.trans)[0], *frame_errors(rebuilt, frames))
        return _result("decoder.assembly_roundtrip", worst < 1e-8, worst)

    def decoder_reference_equivariance(self, rng) -> CheckResult:
        worst = 0.0
        for _ in range(10):
            frames = frames_from_atoms(random_backbone(rng, 64))
            g = random_rigid(rng)
            rebuilt = assemble_frames(relative_frames(frames), compose(g, frames[0]))
            worst = max(worst, *frame_errors(rebuilt, left_compose(g, frames)))
        return _result("decoder.reference_equivariance", worst < 1e-8, worst)

    # diffusion

    def diffusion_schedule(self, rng) -> CheckResult:
        ends = {}
        for kind in ScheduleKind:
            sched = make_schedule(self.cfg.schedule.T, kind)
            ends[str(kind)] = float(sched.alpha_bar[-1])
        passed = all(v < 0.05 for v in ends.values())
        return _result("diffusion.schedule", passed, ends, "final alpha_bar per kind")

    def diffusion_forward_moments(self, rng) -> CheckResult:
        sched = make_schedule(self.cfg.schedule.T, self.cfg.schedule.kind)
        t = sched.T // 2
        ab = float(sched.alpha_bar[t])
        n, d = 20000, 4
        x0 = np.full((n, d), 1.5)
        xt = forward_noise_latent(x0, t, rng.standard_normal((n, d)), sched)
        mean_err = float(np.abs(xt.mean(axis=0) - np.sqrt(ab) * 1.5).max())
        var_err = float(np.abs(xt.var(axis=0) / (1 - ab) - 1).max())
        passed = mean_err < 5 * np.sqrt((1 - ab) / n) and var_err < 0.05
        return _result("diffusion.forward_moments", passed, {"mean_err": mean_err, "var_rel_err": var_err})

    def igso3_normalization(self, rng) -> CheckResult:
        worst = 0.0
        for sigma in (0.1, 0.5, 1.0):
            l_max = auto_l_max(sigma)
            total, _ = quad(lambda w: angle_marginal(w, sigma, l_max), 0.0, np.pi,
                            limit=500, epsabs=1e-12, epsrel=1e-10, points=[min(2 * sigma, 3.0)])
            worst = max(worst, abs(total - 1.0))
        return _result("diffusion.igso3_normalization", worst < 1e-6, worst)

    def igso3_histogram(self, rng) -> CheckResult:
        s = self.cfg.schedule
        grid = default_sigma_grid(s.igso3_num_sigma, s.igso3_sigma_min, s.igso3_sigma_max)
        table = self.igso3_cache.get_or_build(grid, s.igso3_omega_resolution)
        sigma = table.sigma_range[1]
        omega = sample_angles(sigma, table, rng, HISTOGRAM_SAMPLES)
        edges = np.linspace(0.0, np.pi, HISTOGRAM_BINS + 1)
        observed, _ = np.histogram(omega, bins=edges)
        haar_cdf = (edges - np.sin(edges)) / np.pi
        expected = np.diff(haar_cdf) * HISTOGRAM_SAMPLES
        expected *= observed.sum() / expected.sum()
        p = float(chisquare(observed, expected).pvalue)
        return _result("diffusion.igso3_histogram", p > 0.01, p, f"sigma={sigma}")

    # ipa

    def _ipa_module(self, seed: int) -> InvariantPointAttention:
        torch.manual_seed(seed)
        return InvariantPointAttention(self.cfg.dit.d_model, self.cfg.ipa).eval()

    def _random_frames(self, rng, length: int):
        return frames_to_tensors(frames_from_atoms(random_backbone(rng, length)))

    @torch.no_grad()
    def ipa_invariance(self, rng) -> CheckResult:
        module = self._ipa_module(int(rng.integers(2**31)))
        worst = 0.0
        for _ in range(10):
            frames = frames_from_atoms(random_backbone(rng, 32))
            x = torch.from_numpy(rng.normal(size=(1, 32, self.cfg.dit.d_model)))
            r, t = frames_to_tensors(frames)
            moved_r, moved_t = frames_to_tensors(left_compose(random_rigid(rng), frames))
            a = module(x, r[None], t[None])
            b = module(x, moved_r[None], moved_t[None])
            worst = max(worst, float((a - b).abs().max()))
        return _result("ipa.invariance", worst < 1e-9, worst)

    @torch.no_grad()
    def ipa_error_bound(self, rng) -> CheckResult:
        """
        Stale tokens move by just under ε along fixed directions, active tokens
        by a fixed large step; the cached output is compared with full IPA.
        """
        L, d = 64, self.cfg.dit.d_model
        module = self._ipa_module(int(rng.integers(2**31)))
        rots, trans = self._random_frames(rng, L)
        z_prev = torch.from_numpy(rng.normal(size=(L, d)))
        u = rng.normal(size=(L, d))
        u = torch.from_numpy(u / np.linalg.norm(u, axis=1, keepdims=True))
        stale = torch.from_numpy(rng.random(L) < 0.5)
        _, cache, _ = ipa_full(z_prev, rots, trans, module)

        eps_sweep = [e for e in self.cfg.bench.eps_sweep if e > 0]
        deviations = []
        for eps in eps_sweep:
            step = torch.ones(L, 1, dtype=torch.float64)
            step[stale] = 0.99 * eps
            z = z_prev + step * u
            mask = compute_mask(z, z_prev, eps)
            cached, _, _ = ipa_cached(z, rots, trans, mask, cache, module)
            full, _, _ = ipa_full(z, rots, trans, module)
            deviations.append(float((cached - full).abs().max()))

        ratios = np.array(deviations) / np.array(eps_sweep)
        median = float(np.median(ratios))
        monotone = bool(np.all(np.diff(deviations) >= 0))
        envelope = bool(np.all(ratios <= ENVELOPE_FACTOR * median) and np.all(ratios >= median / ENVELOPE_FACTOR))
        C = float(ratios.max())
        return _result(
            "ipa.error_bound", monotone and envelope,
            {"C": C, "eps": eps_sweep, "deviation": deviations},
            f"monotone={monotone} envelope={envelope}",
        )

    @torch.no_grad()
    def ipa_pair_counts(self, rng) -> CheckResult:
        module = self._ipa_module(int(rng.integers(2**31)))
        mismatches, trials = 0, 0
        for L in (16, 64):
            rots, trans = self._random_frames(rng, L)
            z = torch.from_numpy(rng.normal(size=(L, self.cfg.dit.d_model)))
            _, cache, _ = ipa_full(z, rots, trans, module)
            for a in sorted({0, 1, L // 4, L // 2, L - 1, L}):
                bits = np.zeros(L, dtype=bool)
                bits[rng.choice(L, size=a, replace=False)] = True
                z_new = z + torch.from_numpy(bits[:, None] * rng.normal(size=z.shape))
                _, cache, counter = ipa_cached(z_new, rots, trans, ActivityMask(bits), cache, module)
                trials += 1
                mismatches += int(counter.pair_updates != 2 * a * L - a * a)
                z = z_new
        return _result("ipa.pair_counts", mismatches == 0, mismatches, f"trials={trials}")

    # dit

    def _tiny_dit(self, seed: int) -> LatentDiT:
        torch.manual_seed(seed)
        cfg = DiTConfig(n_layers=2, d_model=8, n_heads=2, d_ff=16, n_classes=3, T=50, max_len=16)
        ipa = IPAConfig(n_heads=2, d_head=4, n_query_points=2, n_value_points=2)
        model = LatentDiT(cfg, 8, ipa)
        with torch.no_grad():
            for p in model.parameters():
                p.normal_(0.0, 0.2)
        return model

    def dit_gradient_check(self, rng) -> CheckResult:
        model = self._tiny_dit(int(rng.integers(2**31)))
        sched = make_schedule(50)
        B, L = 2, 4
        frames = [frames_from_atoms(random_backbone(rng, L)) for _ in range(B)]
        rots = torch.stack([frames_to_tensors(f)[0] for f in frames])
        trans = torch.stack([frames_to_tensors(f)[1] for f in frames])
        batch = TrainingBatch(
            x0=torch.from_numpy(rng.normal(size=(B, L, 8))),
            t=torch.tensor([3, 40]),
            c=torch.tensor([0, 2]),
            eps=torch.from_numpy(rng.normal(size=(B, L, 8))),
            rots=rots,
            trans=trans,
        )
        errors = gradient_errors(batch, model, sched)
        worst_name = max(errors, key=errors.get)
        worst = errors[worst_name]
        n = sum(p.numel() for p in model.parameters())
        return _result("dit.gradient_check", worst < FD_REL_TOL, worst, f"worst_group={worst_name} coordinates={n}")

    @torch.no_grad()
    def dit_cfg_identity(self, rng) -> CheckResult:
        model = self._tiny_dit(int(rng.integers(2**31))).eval()
        x = torch.from_numpy(rng.normal(size=(6, 8)))
        cond = model.predict(x, 10, 1)
        uncond = model.predict(x, 10, None)
        same = torch.equal(cfg_predict(model, x, 10, 1, 0.0), cond)
        guided = cfg_predict(model, x, 10, 1, 2.0)
        err = float((guided - (3.0 * cond - 2.0 * uncond)).abs().max())
        return _result("dit.cfg_identity", same and err < 1e-12, err, f"w0_identical={same}")

    # sampler

    def sampler_cache_exactness(self, rng) -> CheckResult:
        models = self.fixtures.models()
        sched = make_schedule(self.cfg.schedule.T, self.cfg.schedule.kind)
        mismatched = []
        for seed in self.cfg.bench.seeds:
            scfg = self.cfg.sampler.model_copy(update={"eps_cache": 0.0, "gate_mode": "per-token", "seed": seed})
            cached, _ = sample(scfg, models, sched)
            reference, _ = sample_reference(scfg, models, sched)
            if not (torch.equal(cached.z0, reference.z0) and cached.tokens == reference.tokens):
                mismatched.append(seed)
        return _result(
            "sampler.cache_exactness", not mismatched, len(mismatched),
            f"seeds={len(self.cfg.bench.seeds)} mismatched={mismatched}",
        )
