"""Indirect optimal control and neural guidance policies.

Library layout: problem definitions and dynamics (``problems``,
``dynamics``), numerical propagation with parameter sensitivities
(``propagation``), boundary-value solving (``shooting``), backward bundle
generation (``bgoe``), trajectory containers and dataset files
(``trajectories``, ``datasets``), policy networks and behavioural cloning
(``policy``, ``cloning``), trajectory-gradient and imitation refinement
(``refine``, ``dagger``), batch evaluation (``evaluation``), and the
pipeline driver (``config``, ``manifest``, ``cli``).
"""

__version__ = "0.1.0"
