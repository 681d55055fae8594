"""Energy-stable HDG solver for the 2D Camassa-Holm-KP equation."""

__version__ = "0.1.0"
