"""Self-supervised pretraining of user behavior sequences with a bootstrapped teacher."""

from byb.config import RunConfig, __version__
from byb.data import GeneratorConfig, UbsSample, WindowPlan, generate_synthetic, read_jsonl, write_jsonl
from byb.model import Model, build_model, load_model, representations
from byb.seqmodel import SeqModelConfig, count_params

__all__ = [
    "GeneratorConfig",
    "Model",
    "RunConfig",
    "SeqModelConfig",
    "UbsSample",
    "WindowPlan",
    "__version__",
    "build_model",
    "count_params",
    "generate_synthetic",
    "load_model",
    "read_jsonl",
    "representations",
    "write_jsonl",
]
