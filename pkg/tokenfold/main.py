import argparse
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

from .app import commands
from .app.exception_handlers import handle_exception
from .context import build_container, load_run_config
from .domain.services.ablation import GRIDS

logger = logging.getLogger(__name__)


OVERRIDES = {
    "length": ["sampler.length"],
    "eps": ["sampler.eps_cache"],
    "w": ["sampler.guidance_w"],
    "seed": ["seed", "sampler.seed"],
    "class_id": ["sampler.class_id"],
    "gate_mode": ["sampler.gate_mode"],
}


def overrides_from_args(args: argparse.Namespace) -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    for name, keys in OVERRIDES.items():
        value = getattr(args, name, None)
        if value is not None:
            out.update({key: value for key in keys})
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="YAML run configuration")
    common.add_argument("--length", type=int, default=None, help="chain length to sample")
    common.add_argument("--eps", type=float, default=None, help="IPA cache threshold")
    common.add_argument("--w", type=float, default=None, help="guidance weight")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--class", dest="class_id", type=int, default=None, help="fold class to condition on")
    common.add_argument("--gate-mode", choices=["per-token", "global"], default=None)

    parser = argparse.ArgumentParser(prog="tokenfold", description="Latent-tokenized protein backbone diffusion")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("build-codebook", parents=[common], help="fit the structure codebook").set_defaults(
        handler=commands.training.build_codebook
    )
    sub.add_parser("train-decoder", parents=[common], help="train the token-to-frame decoder").set_defaults(
        handler=commands.training.train_decoder
    )
    sub.add_parser("train-dit", parents=[common], help="train the latent denoiser").set_defaults(
        handler=commands.training.train_dit
    )

    p = sub.add_parser("sample", parents=[common], help="sample backbones and write PDB files")
    p.add_argument("-n", type=int, default=1, help="number of samples")
    p.add_argument("--reference", action="store_true", help="run the uncached reference sampler")
    p.add_argument("--no-trajectory", action="store_true", help="skip the per-step trajectory CSVs")
    p.add_argument("--serial", action="store_true")
    p.set_defaults(handler=commands.sampling.sample)

    sub.add_parser("bench-cache", parents=[common], help="length x eps x seed cache benchmark").set_defaults(
        handler=commands.bench.bench_cache
    )

    p = sub.add_parser("verify", parents=[common], help="run the invariant checks")
    p.add_argument("--serial", action="store_true", help="run checks one after another")
    p.set_defaults(handler=commands.verify.verify)

    p = sub.add_parser("tokenize", parents=[common], help="print the token sequence of each chain in a PDB file")
    p.add_argument("--pdb", type=Path, required=True)
    p.set_defaults(handler=commands.tokens.tokenize)

    p = sub.add_parser("ablate", parents=[common], help="run an ablation grid")
    p.add_argument("--grid", choices=GRIDS, default="speed")
    p.set_defaults(handler=commands.ablation.ablate)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    container = None
    try:
        cfg = load_run_config(args.config, overrides_from_args(args))
        container = build_container(cfg)
        container.wire(packages=[commands])
        logger.info(f"tokenfold {args.command} (seed={cfg.seed}, data_dir={cfg.paths.data_dir})")
        return args.handler(args)
    except Exception as exc:
        return handle_exception(exc)
    finally:
        if container is not None:
            container.unwire()


if __name__ == "__main__":
    raise SystemExit(main())
