"""Event-camera processing core for event-augmented vision-language-action pipelines."""

__version__ = "0.1.0"
