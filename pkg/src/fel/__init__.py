"""Objective-aligned pretraining and few-example finetuning for small encoders."""

__version__ = "0.1.0"
