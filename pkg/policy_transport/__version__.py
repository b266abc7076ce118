"""The module's version information."""
__author__ = "Tomás Farías Santana"
__copyright__ = "Copyright 2022 Tomás Farías Santana"
__title__ = "policy-transport"
__version__ = "0.1.0"
