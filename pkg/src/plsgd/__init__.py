"""Stochastic gradient and heavy-ball methods under Łojasiewicz-type conditions.

Submodules: ``schedules``, ``oracle``, ``objectives``, ``optimizers``,
``envelope``, ``rate``, ``local``, ``rl`` and ``cli``.
"""

__version__ = "0.1.0"
