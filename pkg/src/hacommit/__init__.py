"""Deterministic simulation of a logless one-phase commit protocol.

The package contains the protocol state machines (participant replicas,
transaction clients, recovery proposers), two baseline atomic-commit
protocols, a seeded discrete-event network simulator with fault
injection, a workload/benchmark harness, and trace auditors that check
the protocol's safety properties after every run.
"""

__version__ = "0.1.0"

from .core import Ballot, Decision, Vote, TxnContext, fresh_txn_id

__all__ = ["Ballot", "Decision", "Vote", "TxnContext", "fresh_txn_id", "__version__"]
