"""Two-stage virtual try-on at desk scale: a shape-control segmentation
stage and a texture-guided conditional latent diffusion stage, with a
procedural synthetic dataset and equation-level test oracles."""

__version__ = "0.1.0"
