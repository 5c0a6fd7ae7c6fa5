"""Human/object contact classification from proprioceptive robot signals."""

from .types import ClassLabel, ContactEvent, LabeledDataset, Recording, Sample, Window

__version__ = "0.1.0"

__all__ = ["ClassLabel", "ContactEvent", "LabeledDataset", "Recording", "Sample", "Window", "__version__"]
