"""Early-exiting recurrent noise suppression at desk scale.

A self-contained engine (numpy + scipy only) that builds, trains, runs and
profiles a family of mask-based speech denoisers able to stop inference at
intermediate layers, trading suppression quality for compute.
"""

__version__ = "0.1.0"

from nsexit.dsp import stft, istft, log_power, apply_mask
from nsexit.arch import build_model, VARIANTS

__all__ = ["stft", "istft", "log_power", "apply_mask", "build_model", "VARIANTS"]
