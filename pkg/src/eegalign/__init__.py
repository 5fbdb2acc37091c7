"""Channel-aware EEG-text contrastive alignment at desk scale."""

__version__ = "0.1.0"
