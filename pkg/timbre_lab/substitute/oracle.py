"""
Query-only access to a black-box speaker classifier.
"""
import threading

from timbre_lab.errors import BudgetExhaustedError, InvalidArgumentError
from timbre_lab.logs import log_event
from timbre_lab.speakernet import classifier_hash, forward


class BlackBoxOracle:
    """
    Wraps a classifier so callers only see mel in -> posterior out.

    Every query increments ``query_count`` exactly once under a lock; once
    ``query_budget`` queries have been answered further calls raise
    BudgetExhaustedError. ``spent`` starts the count at queries already
    answered for the same run in an earlier process; the budget counts them.
    """

    def __init__(self, classifier, query_budget=None, spent=0):
        if query_budget is not None and query_budget < 0:
            raise InvalidArgumentError(f"query_budget must be >= 0, got {query_budget}")
        if spent < 0:
            raise InvalidArgumentError(f"spent must be >= 0, got {spent}")
        self.__backing = classifier
        self.__lock = threading.Lock()
        self.__count = int(spent)
        self.query_budget = query_budget
        self.n_speakers = classifier.n_speakers
        self.n_mels = classifier.n_mels

    @property
    def query_count(self):
        return self.__count

    @property
    def remaining(self):
        if self.query_budget is None:
            return None
        return max(self.query_budget - self.__count, 0)

    def extend_budget(self, extra):
        """Allow ``extra`` more queries (no-op on an unlimited oracle)."""
        if self.query_budget is not None:
            self.query_budget += int(extra)

    def query(self, m):
        """
        Posterior of the hidden classifier for one mel.

        Returns:
            np.ndarray: A fresh copy; callers treat it as a constant

        Raises:
            BudgetExhaustedError: If the budget is spent
        """
        with self.__lock:
            if self.query_budget is not None and self.__count >= self.query_budget:
                log_event("WARNING", "Oracle budget exhausted", queryCount=self.__count, queryBudget=self.query_budget)
                raise BudgetExhaustedError(
                    f"query budget of {self.query_budget} exhausted after {self.__count} queries"
                )
            self.__count += 1
        return forward(self.__backing, m).copy()

    def fingerprint(self):
        """sha256 of the hidden classifier's checkpoint bytes (provenance only)."""
        return classifier_hash(self.__backing)
