"""Sensorless freehand ultrasound trajectory estimation with transducer domain adaptation."""

__version__ = "0.1.0"
