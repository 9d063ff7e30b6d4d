"""
Versioned single-file container for the codebook, decoder and DiT.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
import torch

from ..domain.constants import IDEAL_GEOMETRY_VERSION
from ..domain.decoder import FrameDecoder
from ..domain.dit import LatentDiT
from ..domain.exceptions import ModelStoreError
from ..domain.models.config import DiTConfig, IPAConfig
from ..domain.tokenizer import Codebook

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


@dataclass
class ModelBundle:
    codebook: Optional[Codebook] = None
    decoder: Optional[FrameDecoder] = None
    dit: Optional[LatentDiT] = None


def _codebook_state(cb: Codebook) -> Dict[str, Any]:
    return {
        "header": {"K": cb.K, "F": cb.F, "d": cb.d, "window": cb.window, "pool": cb.pool},
        "centroids": torch.from_numpy(cb.centroids.copy()),
        "embeddings": torch.from_numpy(cb.embeddings.copy()),
        "scaler_mean": torch.from_numpy(cb.scaler_mean.copy()),
        "scaler_scale": torch.from_numpy(cb.scaler_scale.copy()),
    }


def _codebook_from_state(state: Dict[str, Any]) -> Codebook:
    header = state["header"]
    cb = Codebook(
        centroids=state["centroids"].numpy().astype(np.float64),
        embeddings=state["embeddings"].numpy().astype(np.float64),
        scaler_mean=state["scaler_mean"].numpy().astype(np.float64),
        scaler_scale=state["scaler_scale"].numpy().astype(np.float64),
        window=int(header["window"]),
        pool=int(header["pool"]),
    )
    if (cb.K, cb.F, cb.d) != (header["K"], header["F"], header["d"]):
        raise ModelStoreError(f"Codebook arrays disagree with header {header}.")
    return cb


class ModelStore:
    def __init__(self, path: Path):
        self.path = Path(path)

    def exists(self) -> bool:
        return self.path.exists()

    def save(self, bundle: ModelBundle):
        payload: Dict[str, Any] = {
            "format_version": FORMAT_VERSION,
            "geometry_version": IDEAL_GEOMETRY_VERSION,
        }
        if bundle.codebook is not None:
            payload["codebook"] = _codebook_state(bundle.codebook)
        if bundle.decoder is not None:
            payload["decoder"] = {"config": bundle.decoder.config, "state": bundle.decoder.state_dict()}
        if bundle.dit is not None:
            ipa = next((b.ipa.cfg for b in bundle.dit.blocks if b.ipa is not None), None)
            payload["dit"] = {
                "config": bundle.dit.cfg.model_dump(),
                "ipa": None if ipa is None else ipa.model_dump(),
                "d_latent": bundle.dit.d_latent,
                "state": bundle.dit.state_dict(),
            }
        self.path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(payload, self.path)
        parts = [k for k in ("codebook", "decoder", "dit") if k in payload]
        logger.info(f"Saved model container to {self.path} ({', '.join(parts)})")

    def load(self) -> ModelBundle:
        if not self.path.exists():
            raise ModelStoreError(f"No model container at {self.path}.")
        try:
            payload = torch.load(self.path, map_location="cpu", weights_only=True)
        except Exception as exc:
            raise ModelStoreError(f"Unreadable model container {self.path}: {exc}") from exc
        if not isinstance(payload, dict):
            raise ModelStoreError("Model container is not a mapping.")
        if payload.get("format_version") != FORMAT_VERSION:
            raise ModelStoreError(f"Unsupported container format {payload.get('format_version')}.")
        if payload.get("geometry_version") != IDEAL_GEOMETRY_VERSION:
            raise ModelStoreError(
                f"Container built with geometry version {payload.get('geometry_version')}, "
                f"expected {IDEAL_GEOMETRY_VERSION}."
            )
        try:
            return self._restore(payload)
        except ModelStoreError:
            raise
        except Exception as exc:
            raise ModelStoreError(f"Corrupt model container {self.path}: {exc}") from exc

    def _restore(self, payload: Dict[str, Any]) -> ModelBundle:
        bundle = ModelBundle()
        if "codebook" in payload:
            bundle.codebook = _codebook_from_state(payload["codebook"])
        if "decoder" in payload:
            entry = payload["decoder"]
            bundle.decoder = FrameDecoder(**entry["config"])
            bundle.decoder.load_state_dict(entry["state"])
            bundle.decoder.eval()
        if "dit" in payload:
            entry = payload["dit"]
            ipa = None if entry["ipa"] is None else IPAConfig(**entry["ipa"])
            bundle.dit = LatentDiT(DiTConfig(**entry["config"]), int(entry["d_latent"]), ipa)
            bundle.dit.load_state_dict(entry["state"])
            bundle.dit.eval()
        return bundle

    def update(self, **parts) -> ModelBundle:
        """Replace some parts of the stored bundle, keeping the rest."""
        bundle = self.load() if self.exists() else ModelBundle()
        for name, value in parts.items():
            setattr(bundle, name, value)
        self.save(bundle)
        return bundle
