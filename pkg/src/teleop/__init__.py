"""Multimodal teleoperation stack.

Haptic and tiled-video streams multiplexed onto one emulated slotted radio
link, with a simulated teleoperator world and exact end-to-end latency
decomposition under a deterministic virtual clock.
"""

__version__ = "0.1.0"
