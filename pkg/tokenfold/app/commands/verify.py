import argparse
import logging

from dependency_injector.wiring import Provide, inject

from ...context import AppContainer
from ...domain.exceptions import InvariantViolation
from ...domain.models.config import RunConfig
from ...domain.services import VerifyService
from ..dto import CheckOutcome, VerifyReport

logger = logging.getLogger(__name__)

REPORT_FILE = "verify.json"


@inject
def verify(
    args: argparse.Namespace,
    cfg: RunConfig = Provide[AppContainer.run_config],
    service: VerifyService = Provide[AppContainer.verify_service],
) -> int:
    results = service.run(serial=args.serial)
    checks = [CheckOutcome(**r) for r in results]
    report = VerifyReport(seed=cfg.seed, passed=all(c.passed for c in checks), checks=checks)

    cfg.paths.outputs.mkdir(parents=True, exist_ok=True)
    report_file = cfg.paths.outputs / REPORT_FILE
    report_file.write_text(report.model_dump_json(indent=2))
    print(report.model_dump_json(indent=2))
    for check in checks:
        if not check.passed:
            logger.error(f"FAILED {check.id}: measured={check.measured} {check.detail}")

    if not report.passed:
        raise InvariantViolation(",".join(report.failed), f"{len(report.failed)} of {len(checks)} checks failed")
    return 0
