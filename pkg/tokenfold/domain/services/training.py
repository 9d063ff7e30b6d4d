import logging
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, List, Optional, Sequence

import torch

from ..decoder import DecoderFit, FrameDecoder, ipa_frames, train_decoder
from ..diffusion import make_schedule
from ..dit import DiTExample, LatentDiT, train_dit
from ..exceptions import ConfigError
from ..models.config import RunConfig
from ..sampler import SamplerModels
from ..tokenizer import Codebook, embed, featurize, fit_codebook, tokenize
from .corpus import CorpusService, LabelledChain

logger = logging.getLogger(__name__)

METRICS_LOGGER = "tokenfold.metrics"


@contextmanager
def metrics_log(path: Optional[Path]) -> Iterator[logging.Logger]:
    """Plain-text training log, one line per logged step."""
    metrics = logging.getLogger(METRICS_LOGGER)
    metrics.setLevel(logging.INFO)
    if path is None:
        yield metrics
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(path)
    handler.setFormatter(logging.Formatter("%(message)s"))
    metrics.addHandler(handler)
    try:
        yield metrics
    finally:
        metrics.removeHandler(handler)
        handler.close()


def fit_tokenizer(cfg: RunConfig, chains: Sequence[LabelledChain]) -> Codebook:
    t = cfg.tokenizer
    features = [featurize(frames, t.window) for frames, _ in chains]
    return fit_codebook(features, t.K, cfg.seed, d=t.d, window=t.window, pool=t.pool, max_iter=t.max_iter, tol=t.tol)


def dit_examples(chains: Sequence[LabelledChain], cb: Codebook, decoder: FrameDecoder) -> List[DiTExample]:
    """Clean latents per chain, with IPA frames decoded from those latents."""
    examples = []
    for frames, c in chains:
        x0 = embed(tokenize(frames, cb), cb)
        rots, trans = ipa_frames(x0, decoder, cb.pool, len(frames))
        examples.append(DiTExample(x0=x0, c=int(c), rots=rots, trans=trans))
    return examples


def fit_dit(cfg: RunConfig, chains: Sequence[LabelledChain], cb: Codebook, decoder: FrameDecoder,
            metrics: Optional[logging.Logger] = None) -> LatentDiT:
    torch.manual_seed(cfg.seed)
    model = LatentDiT(cfg.dit, cb.d, cfg.ipa)
    sched = make_schedule(cfg.schedule.T, cfg.schedule.kind)
    train_dit(model, dit_examples(chains, cb, decoder), sched, cfg.training, cfg.seed, metrics)
    return model


def fit_models(cfg: RunConfig, chains: Sequence[LabelledChain],
               metrics: Optional[logging.Logger] = None) -> SamplerModels:
    """Codebook, decoder and DiT trained end to end, nothing persisted."""
    cb = fit_tokenizer(cfg, chains)
    fit = train_decoder([f for f, _ in chains], cb, cfg.decoder, cfg.seed, metrics_logger=metrics)
    dit = fit_dit(cfg, chains, fit.codebook, fit.decoder, metrics)
    return SamplerModels(dit=dit, decoder=fit.decoder, codebook=fit.codebook)


class TrainingService:

    def __init__(self, cfg: RunConfig, store, corpus: CorpusService):
        self.cfg = cfg
        self.store = store
        self.corpus = corpus

    @property
    def metrics_path(self) -> Path:
        return self.cfg.paths.data_dir / self.cfg.paths.metrics_log

    def build_codebook(self) -> Codebook:
        cb = fit_tokenizer(self.cfg, self.corpus.load())
        # a new codebook invalidates any decoder or DiT trained on the old one
        self.store.update(codebook=cb, decoder=None, dit=None)
        return cb

    def train_decoder(self) -> DecoderFit:
        bundle = self.store.load()
        if bundle.codebook is None:
            raise ConfigError("No codebook in the model container; run build-codebook first.")
        with metrics_log(self.metrics_path) as metrics:
            fit = train_decoder(self.corpus.frames(), bundle.codebook, self.cfg.decoder, self.cfg.seed,
                                metrics_logger=metrics)
        self.store.update(codebook=fit.codebook, decoder=fit.decoder, dit=None)
        return fit

    def train_dit(self) -> LatentDiT:
        bundle = self.store.load()
        if bundle.codebook is None or bundle.decoder is None:
            raise ConfigError("DiT training needs a codebook and a trained decoder.")
        with metrics_log(self.metrics_path) as metrics:
            model = fit_dit(self.cfg, self.corpus.load(), bundle.codebook, bundle.decoder, metrics)
        self.store.update(dit=model)
        return model
