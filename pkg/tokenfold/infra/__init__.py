import logging

from .settings import EnvSettings, get_settings
from .pdb import parse_pdb, write_pdb, read_pdb_file
from .model_store import ModelBundle, ModelStore
from .igso3_cache import IGSO3Cache


logging.basicConfig(
    level=get_settings().TOKENFOLD_LOG_LEVEL.upper(),
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
)
logger = logging.getLogger(__name__)


__all__ = [
    "EnvSettings",
    "get_settings",
    "parse_pdb",
    "write_pdb",
    "read_pdb_file",
    "ModelBundle",
    "ModelStore",
    "IGSO3Cache",
]
