"""Deterministic simulator for a two-layer service-market blockchain.

The package models an anchor chain (DPoS, fee-prioritized transaction pool),
a layer-2 reputation roll-up with a binary hash tree commitment, duplex
hash-locked transfer channels, a fused objective/subjective service
assessment, a multi-weight subjective-logic reputation scheme, and a
bilevel grid-search contract optimizer.  A scenario-driven harness and CLI
reproduce desk-scale experiments and attack ablations on top of those
pieces.
"""

__version__ = "0.1.0"
