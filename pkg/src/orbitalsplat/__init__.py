"""Desk-scale single-image 3D reconstruction toolkit.

Pipeline pieces: orbital multi-view dataset generation from OBJ models, a
differentiable gaussian-splatting scene fitted from one image under a
pluggable view-guidance prior, textured mesh extraction, and PSNR/SSIM
(plus remote LPIPS/CLIP) evaluation.
"""

__version__ = "0.1.0"
