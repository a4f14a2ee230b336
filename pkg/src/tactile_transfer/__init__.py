"""BioTac signal to DIGIT image translation through deformation transfer."""

__version__ = "0.1.0"
