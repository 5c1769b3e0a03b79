"""Multichannel speech dereverberation with a time-varying covariance model of late reverberation."""

__version__ = "0.1.0"
