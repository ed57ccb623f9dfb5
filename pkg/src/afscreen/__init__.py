"""Atrial fibrillation screening from hours-long single-channel ECG.

The package turns a raw overnight recording into a per-patient AF burden
estimate: two independent R-peak detectors feed a beat-agreement quality
index, clean 60-beat windows are summarised by nine RR-interval features,
a small random forest labels each window, and the fraction of AF windows
decides whether the patient shows prominent AF.
"""

__version__ = "0.1.0"

from afscreen.errors import AfscreenError

__all__ = ["AfscreenError", "__version__"]
