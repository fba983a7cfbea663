import logging
import warnings

from ..errors import BudgetViolationCorrected


class DedupFilter(logging.Filter):
    """Drops records whose formatted message was already emitted (repeated energy or truncation lines)."""

    def __init__(self):
        super().__init__()
        self.seen = set()

    def filter(self, record):
        message = record.getMessage()
        if message in self.seen:
            return False
        self.seen.add(message)
        return True


def install_dedup_filter() -> None:
    """Adds a single DedupFilter to the root logger and shows each caption correction warning once."""
    root = logging.getLogger()
    for existing in root.filters:
        if isinstance(existing, DedupFilter):
            existing.seen.clear()
            break
    else:
        root.addFilter(DedupFilter())
    warnings.simplefilter("once", BudgetViolationCorrected)
