"""Fair channel-sharing mappings and budgeted NSGA-II search for ViT spaces."""

__version__ = "0.1.0"
