from .degrade import (apply_gaussian_noise, apply_poisson_noise, apply_salt_pepper,
                      apply_gaussian_blur, apply_ringing, apply_rl_artifact, richardson_lucy,
                      apply_pixelation, apply_inpaint_mask, apply_rain_streaks, apply_downsample)
from .jpeg import apply_jpeg_like
from .tone import adjust_tone, hist_equalize
from .stylize import stylize_pencil, stylize_cartoon, posterize
from .features import edge_canny, edge_laplacian
