from . import ablation, bench, sampling, tokens, training, verify


__all__ = ["ablation", "bench", "sampling", "tokens", "training", "verify"]
