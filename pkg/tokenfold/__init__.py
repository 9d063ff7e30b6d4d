import asyncio
import logging
import os
import re
import yaml
from pathlib import Path
from typing import Any, Awaitable, Callable, Dict, List

from dotenv import load_dotenv


logger = logging.getLogger(__name__)


# ${VAR} or ${VAR:default}
PLACEHOLDER = re.compile(r"\$\{([^}:]+)(?::([^}]*))?\}")


def load_yaml_config(config_file, env_file=".env") -> dict[str, Any]:
    """
    Parse a YAML file after loading ``env_file`` and expanding placeholders
    from the environment. Unset variables without a default expand to "".
    """
    load_dotenv(env_file)

    config_path = Path(config_file)
    if not config_path.is_file():
        raise FileNotFoundError(f"Configuration file {config_file} not found")

    expanded = PLACEHOLDER.sub(
        lambda m: os.environ.get(m.group(1), m.group(2) or ""),
        config_path.read_text(),
    )
    config_dict = yaml.safe_load(expanded)
    if not isinstance(config_dict, dict) or not config_dict:
        raise ValueError(f"Configuration file {config_file} is empty or not a mapping.")
    return config_dict


class CheckResult(dict):
    """
    One verify-mode result: ``{"id", "passed", "measured", "detail"}``.
    """

    @property
    def passed(self) -> bool:
        return bool(self["passed"])


CheckFn = Callable[[], CheckResult]


class CheckRegistry:
    """
    Named invariant checks, run concurrently on worker threads.
    """

    def __init__(self):
        self._registry: Dict[str, CheckFn] = {}

    def register(self, check_id: str, fn: CheckFn):
        if check_id in self._registry:
            raise ValueError(f"Check named '{check_id}' is already registered.")
        logger.debug(f"Registering check: '{check_id}'")
        self._registry[check_id] = fn

    def get(self, check_id: str) -> CheckFn:
        fn = self._registry.get(check_id)
        if fn is None:
            raise KeyError(f"No check named '{check_id}' is registered.")
        return fn

    @property
    def ids(self) -> List[str]:
        return list(self._registry)

    def _run_one(self, check_id: str) -> CheckResult:
        try:
            result = self._registry[check_id]()
        except Exception as exc:
            logger.exception(f"Check '{check_id}' raised")
            result = CheckResult(id=check_id, passed=False, measured=None, detail=repr(exc))
        result.setdefault("id", check_id)
        return result

    async def run_all(self) -> List[CheckResult]:
        logger.info(f"--- Running {len(self._registry)} checks concurrently ---")
        tasks: List[Awaitable[CheckResult]] = [
            asyncio.to_thread(self._run_one, check_id) for check_id in self._registry
        ]
        results = await asyncio.gather(*tasks)
        logger.info("--- All checks finished ---")
        return list(results)

    def run_serial(self) -> List[CheckResult]:
        return [self._run_one(check_id) for check_id in self._registry]


__all__ = ["load_yaml_config", "CheckResult", "CheckRegistry"]
