"""Recurrent language-guided refinement of video token grids.

Submodules: ``treebank`` (bracketed trees), ``planner`` (NP/VP sub-prompts),
``tensor`` (autodiff and attention), ``embed`` (phrase vectors), ``refiner``,
``heads`` (grounding and segmentation heads), ``metrics``, ``synth``
(synthetic data), ``train``, ``bench`` and ``cli``.
"""

__version__ = "0.1.0"
