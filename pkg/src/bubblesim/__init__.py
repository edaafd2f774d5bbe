"""Closed-loop short-video recommendation simulator.

Trainable MF/FM recommenders serve slates to persona-driven user agents
(rule-based or LLM-backed); feedback flows back into weighted training,
and per-iteration diversity metrics track filter-bubble formation.
"""

__version__ = "0.1.0"
