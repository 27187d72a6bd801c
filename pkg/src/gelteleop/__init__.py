"""Simulated visuotactile teleoperation stack.

Pipeline stages, each its own module:

- gelsim: forward model of the marker gel (wrench -> image)
- flowtrack: marker detection and Lucas-Kanade flow
- forceest: flow -> force estimates (closed form and ridge), slip detection
- hapticmap: total force -> vibrotactile intensity
- sliprig: stick-slip test rig and labeled sequence generator
- wire: binary frame protocol, channels and transports
- teleopd: full pipeline loop, grasp task, experiments, serve
"""

__version__ = "0.1.0"
