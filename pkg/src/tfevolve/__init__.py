"""Evolutionary transfer function design for direct volume rendering.

The package is organized around the optimization loop:

- :mod:`tfevolve.volume`     -- raw volume loading, sampling, synthetic fixtures
- :mod:`tfevolve.genome`     -- Gaussian-mixture transfer function encoding
- :mod:`tfevolve.render`     -- CPU ray-casting renderer and feature picking
- :mod:`tfevolve.evaluate`   -- pairwise judges (deterministic heuristic / MLLM)
- :mod:`tfevolve.tournament` -- Swiss pairing, Elo ratings, rank fitness
- :mod:`tfevolve.evolve`     -- crossover, mutation, selection, stage schedules
- :mod:`tfevolve.session`    -- the three-stage interactive session lifecycle
- :mod:`tfevolve.harness`    -- population-size / budget sweep experiments
- :mod:`tfevolve.server`     -- HTTP session API
- :mod:`tfevolve.cli`        -- command line entry points
"""

__version__ = "0.1.0"
