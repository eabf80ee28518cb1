"""Self-supervised voxel diffusion for shape completion from partial scans.

Modules: ``grid`` (point clouds, voxel grids, pseudo-GT), ``diffusion``
(schedule, forward process, masked loss, conditional sampler), ``denoiser``
(oracle and tiny conv denoisers), ``render`` (differentiable silhouettes
and depth), ``synth`` (procedural scenes and scan simulation), ``metrics``,
``mesh`` and ``cli``.
"""

__version__ = "0.1.0"
