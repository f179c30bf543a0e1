"""Future-conditioned sequence policy for planar multi-terrain locomotion.

Subpackages: ``numcore`` (autodiff substrate), ``nn`` (layers), ``policy``
(actor-critic and baselines), ``env`` (planar simulator and terrains),
``amp`` (adversarial motion prior), ``train`` (rollouts and optimization),
``cli`` (command-line entry points).
"""

__version__ = "0.1.0"
