"""Headless, deterministic simulator of robotic battery-pack disassembly.

Subpackages cover the world model (:mod:`abatre.scene`), arm kinematics
(:mod:`abatre.kinematics`), joint-space planning (:mod:`abatre.planner`),
camera perception (:mod:`abatre.perception`), dataset imaging tools
(:mod:`abatre.imaging`), the task executive (:mod:`abatre.executive`), and
the command-line interface (:mod:`abatre.cli`).
"""

__version__ = "0.1.0"
