"""motiondiff: diffusion-based synthesis and editing of 1D motion sequences."""

__version__ = "0.1.0"
